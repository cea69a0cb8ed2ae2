#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccsd/lattice.hpp"
#include "ccsd/tensor.hpp"

// Per-modality criticality from pairwise feature cosine similarity, and the
// decremental path built by repeatedly removing one modality. The score of a
// modality is the negated sum of its similarities to the other survivors, so
// the least redundant (most critical) modality scores highest.

namespace ccsd {

enum class PathStrategy { max_criticality, min_criticality, random };

std::string path_strategy_name(PathStrategy s);
PathStrategy parse_path_strategy(const std::string& name);

// Symmetric pairwise similarity; the diagonal is unused and kept at zero.
struct SimilarityMatrix {
  int n = 0;
  std::vector<double> values;  // row-major n*n

  explicit SimilarityMatrix(int n_) : n(n_), values(static_cast<size_t>(n_) * n_, 0.0) {}
  double& at(int j, int z) { return values[static_cast<size_t>(j) * n + z]; }
  double at(int j, int z) const { return values[static_cast<size_t>(j) * n + z]; }
};

using CriticalityScores = std::map<int, double>;  // modality index -> s(m)

struct DecrementPath {
  std::vector<ModalityCombo> steps;  // start first, singleton last
  PathStrategy strategy = PathStrategy::max_criticality;

  // Arrow-joined combo labels, e.g. "1234->134->34->4".
  std::string to_string() const;
};

// Global spatial (and batch) average per channel: a feature map collapses to
// one vector of length C.
template <typename T>
std::vector<double> pooled_feature(const TensorT<T>& fmap);

// Cosine similarity in [-1, 1]. A vector with norm below 1e-12 signals a
// dead encoder; the similarity is defined as 0 and a warning is emitted.
double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v);

SimilarityMatrix similarity_matrix(const std::vector<std::vector<double>>& feats);

// s(m_j) = -sum over other combo members of s_hat(m_j, m_z). Singleton combos
// get the empty-sum score 0.
CriticalityScores criticality_scores(const SimilarityMatrix& sim, ModalityCombo combo);

// Argmax of the scores; ties break to the lowest modality index.
int select_removal(const CriticalityScores& scores);

// Builds the chain start -> ... -> singleton. Similarities are recomputed
// among the survivors at every step. `seed` drives only the random strategy.
DecrementPath build_path(ModalityCombo start, const std::vector<std::vector<double>>& feats,
                         PathStrategy strategy, uint64_t seed);

}  // namespace ccsd
