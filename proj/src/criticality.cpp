#include "ccsd/criticality.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "ccsd/rng.hpp"

namespace ccsd {

std::string path_strategy_name(PathStrategy s) {
  switch (s) {
    case PathStrategy::max_criticality: return "max_criticality";
    case PathStrategy::min_criticality: return "min_criticality";
    case PathStrategy::random: return "random";
  }
  return "?";
}

PathStrategy parse_path_strategy(const std::string& name) {
  if (name == "max_criticality") return PathStrategy::max_criticality;
  if (name == "min_criticality") return PathStrategy::min_criticality;
  if (name == "random") return PathStrategy::random;
  throw std::invalid_argument("unknown path strategy '" + name +
                              "' (expected max_criticality|min_criticality|random)");
}

std::string DecrementPath::to_string() const {
  std::string s;
  for (size_t i = 0; i < steps.size(); ++i) {
    if (i) s += "->";
    s += combo_label(steps[i]);
  }
  return s;
}

template <typename T>
std::vector<double> pooled_feature(const TensorT<T>& fmap) {
  if (fmap.rank() != 5 || fmap.numel() == 0)
    throw std::invalid_argument("pooled_feature: expected a non-empty [B,C,D,H,W] map");
  const int64_t B = fmap.dim(0), C = fmap.dim(1);
  const int64_t V = fmap.dim(2) * fmap.dim(3) * fmap.dim(4);
  std::vector<double> out(static_cast<size_t>(C), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* p = fmap.data() + (b * C + c) * V;
      double s = 0;
      for (int64_t v = 0; v < V; ++v) s += static_cast<double>(p[v]);
      out[static_cast<size_t>(c)] += s;
    }
  const double inv = 1.0 / static_cast<double>(B * V);
  for (auto& x : out) x *= inv;
  return out;
}

template std::vector<double> pooled_feature<float>(const TensorT<float>&);
template std::vector<double> pooled_feature<double>(const TensorT<double>&);

double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double uu = 0, vv = 0, uv = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < 1e-12 || nv < 1e-12) {
    std::cerr << "warning: degenerate (near-zero) feature vector in cosine similarity; "
                 "treating similarity as 0\n";
    return 0.0;
  }
  double s = uv / (nu * nv);
  // Guard rounding drift just past the unit interval.
  if (s > 1.0) s = 1.0;
  if (s < -1.0) s = -1.0;
  return s;
}

SimilarityMatrix similarity_matrix(const std::vector<std::vector<double>>& feats) {
  const int n = static_cast<int>(feats.size());
  SimilarityMatrix sim(n);
  for (int j = 0; j < n; ++j)
    for (int z = j + 1; z < n; ++z) {
      const double s = cosine_similarity(feats[static_cast<size_t>(j)],
                                         feats[static_cast<size_t>(z)]);
      sim.at(j, z) = s;
      sim.at(z, j) = s;
    }
  return sim;
}

CriticalityScores criticality_scores(const SimilarityMatrix& sim, ModalityCombo combo) {
  if (combo.empty()) throw std::invalid_argument("criticality_scores: empty combo");
  const auto members = combo.members();
  for (int m : members)
    if (m >= sim.n)
      throw std::invalid_argument("criticality_scores: similarity matrix does not cover combo");
  CriticalityScores scores;
  for (int j : members) {
    double s = 0;
    for (int z : members)
      if (z != j) s -= sim.at(j, z);
    scores[j] = s;
  }
  return scores;
}

int select_removal(const CriticalityScores& scores) {
  if (scores.size() < 2)
    throw std::invalid_argument("select_removal: need at least two candidates");
  int best = -1;
  double best_score = 0;
  for (const auto& [m, s] : scores) {  // ascending index; strict > keeps the lowest on ties
    if (best < 0 || s > best_score) {
      best = m;
      best_score = s;
    }
  }
  return best;
}

DecrementPath build_path(ModalityCombo start, const std::vector<std::vector<double>>& feats,
                         PathStrategy strategy, uint64_t seed) {
  if (start.empty()) throw std::invalid_argument("build_path: empty start combo");
  for (int m : start.members())
    if (m >= static_cast<int>(feats.size()))
      throw std::invalid_argument("build_path: missing feature vector for combo member");

  // Scores depend only on pairwise terms among survivors, so recomputing the
  // similarity inside the surviving combo equals masking rows/columns of the
  // full matrix; the tests assert this equivalence.
  SimilarityMatrix sim = similarity_matrix(feats);
  Rng rng(seed);
  DecrementPath path;
  path.strategy = strategy;
  ModalityCombo cur = start;
  path.steps.push_back(cur);
  while (cur.size() > 1) {
    int victim = -1;
    if (strategy == PathStrategy::random) {
      const auto members = cur.members();
      victim = members[static_cast<size_t>(rng.uniform_int(members.size()))];
    } else {
      CriticalityScores scores = criticality_scores(sim, cur);
      if (strategy == PathStrategy::max_criticality) {
        victim = select_removal(scores);
      } else {
        int best = -1;
        double best_score = 0;
        for (const auto& [m, s] : scores)
          if (best < 0 || s < best_score) {
            best = m;
            best_score = s;
          }
        victim = best;
      }
    }
    cur = remove_modality(cur, victim);
    path.steps.push_back(cur);
  }
  return path;
}

}  // namespace ccsd
