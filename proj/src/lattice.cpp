#include "ccsd/lattice.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace ccsd {

std::vector<int> ModalityCombo::members() const {
  std::vector<int> out;
  for (int m = 0; m < 32; ++m)
    if (contains(m)) out.push_back(m);
  return out;
}

int ComboLattice::index_of(ModalityCombo c) const {
  for (size_t i = 0; i < all_combos.size(); ++i)
    if (all_combos[i] == c) return static_cast<int>(i);
  throw std::invalid_argument("lattice: combo " + combo_label(c) + " not in lattice of n=" +
                              std::to_string(n_modalities));
}

ComboLattice enumerate_combos(int n) {
  if (n < 1) throw std::invalid_argument("enumerate_combos: n must be >= 1");
  if (n > 20) throw std::invalid_argument("enumerate_combos: n too large");
  ComboLattice lat;
  lat.n_modalities = n;
  lat.all_combos.reserve((size_t{1} << n) - 1);
  for (int k = 1; k <= n; ++k) {
    auto level = level_set(n, k);
    lat.all_combos.insert(lat.all_combos.end(), level.begin(), level.end());
  }
  return lat;
}

std::vector<ModalityCombo> level_set(int n, int k) {
  if (n < 1) throw std::invalid_argument("level_set: n must be >= 1");
  if (k < 1 || k > n)
    throw std::invalid_argument("level_set: k=" + std::to_string(k) + " outside [1," +
                                std::to_string(n) + "]");
  std::vector<ModalityCombo> out;
  const uint32_t limit = 1u << n;
  for (uint32_t bits = 1; bits < limit; ++bits)
    if (__builtin_popcount(bits) == k) out.push_back({bits});
  return out;
}

ModalityCombo remove_modality(ModalityCombo combo, int m) {
  if (!combo.contains(m))
    throw std::invalid_argument("remove_modality: modality " + std::to_string(m + 1) +
                                " not in combo " + combo_label(combo));
  if (combo.size() < 2)
    throw std::invalid_argument("remove_modality: removing " + std::to_string(m + 1) +
                                " would empty combo " + combo_label(combo));
  return {combo.bits & ~(1u << m)};
}

std::string combo_label(ModalityCombo c) {
  std::string s;
  for (int m : c.members()) s += std::to_string(m + 1);
  return s;
}

ModalityCombo parse_combo_label(std::string_view s, int n) {
  if (s.empty()) throw std::invalid_argument("parse_combo_label: empty combo");
  ModalityCombo c;
  for (char ch : s) {
    if (ch < '1' || ch > '9') throw std::invalid_argument("parse_combo_label: bad char in combo");
    int m = ch - '1';
    if (m >= n) throw std::invalid_argument("parse_combo_label: modality out of range");
    if (c.contains(m)) throw std::invalid_argument("parse_combo_label: duplicate modality");
    c = c.with(m);
  }
  return c;
}

std::string modality_name(int index) {
  static const std::array<const char*, 4> names = {"FLAIR", "T1", "T1c", "T2"};
  if (index >= 0 && index < 4) return names[static_cast<size_t>(index)];
  return "M" + std::to_string(index + 1);
}

}  // namespace ccsd
