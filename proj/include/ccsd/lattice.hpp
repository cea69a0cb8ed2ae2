#pragma once
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ccsd {

// A non-empty subset of the N modalities, as a bitmask over 0-based indices.
// Reports and CLI strings use the paper-style 1-based digit labels ("134").
struct ModalityCombo {
  uint32_t bits = 0;

  int size() const { return __builtin_popcount(bits); }
  bool contains(int m) const { return (bits >> m) & 1u; }
  bool subset_of(ModalityCombo o) const { return (bits & o.bits) == bits; }
  bool empty() const { return bits == 0; }

  ModalityCombo with(int m) const { return {bits | (1u << m)}; }

  // Member indices in ascending order (the canonical member ordering).
  std::vector<int> members() const;

  static ModalityCombo full(int n) { return {(n >= 32 ? ~0u : (1u << n) - 1u)}; }
  static ModalityCombo single(int m) { return {1u << m}; }

  bool operator==(const ModalityCombo&) const = default;
};

// All 2^N - 1 non-empty combos in the canonical order: by size ascending,
// then by bitmask ascending. The order is part of the contract; cache
// layouts, CSV rows and tests rely on it.
struct ComboLattice {
  int n_modalities = 0;
  std::vector<ModalityCombo> all_combos;

  // Position of a combo in all_combos; throws if the combo is not in range.
  int index_of(ModalityCombo c) const;
};

ComboLattice enumerate_combos(int n);

// All C(n, k) combos of size k, in bitmask-ascending order.
std::vector<ModalityCombo> level_set(int n, int k);

// Set difference by one member. Requires m in combo and combo.size() >= 2.
ModalityCombo remove_modality(ModalityCombo combo, int m);

// Concatenated ascending 1-based labels, e.g. {0,2,3} -> "134".
std::string combo_label(ModalityCombo c);
ModalityCombo parse_combo_label(std::string_view s, int n);

// Default modality names: FLAIR, T1, T1c, T2 for the first four, then "M5"...
std::string modality_name(int index);

}  // namespace ccsd
