#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ccsd/tensor.hpp"

// Deterministic multi-modal phantom generator. Labels are three concentric
// random ellipsoids with the nested BraTS-style semantics ET(3) within
// TC(2,3) within WT(1,2,3); each modality sees the regions through its own
// contrast row, on top of a low-frequency background texture and Gaussian
// noise. All randomness flows from explicit seeds through mix_seed.

namespace ccsd {

struct PhantomConfig {
  int n_modalities = 4;
  Size3 volume_size{32, 32, 32};
  int n_cases = 80;
  uint64_t seed = 1234;
  // Row per modality: visibility of {WT, TC, ET}. Empty -> default table.
  std::vector<std::array<double, 3>> contrast;
  double noise_std = 0.08;

  void validate() const;
  // MRI-flavoured defaults: modality 1 sees WT strongly (FLAIR-like),
  // modality 3 sees ET strongly (T1c-like), the rest are moderate.
  static std::vector<std::array<double, 3>> default_contrast(int n);
  std::vector<std::array<double, 3>> effective_contrast() const;
};

// A coefficient at or above this threshold counts as "seeing" a region
// (used by the complementarity check and its test).
inline constexpr double kVisibilityThreshold = 0.5;

struct MultiModalCase {
  std::vector<Tensor> volumes;  // N x [D,H,W]
  LabelVolume labels;           // [D,H,W], values {0,1,2,3}
  int case_id = 0;
  uint64_t seed = 0;
};

// Seed for case i under a dataset seed (stated derivation: mix_seed).
uint64_t case_seed(uint64_t dataset_seed, int case_index);

// Deterministic given (cfg, seed). Throws if nested regions cannot satisfy
// the per-label volume-fraction bounds (0.5%..20%) in the given volume.
MultiModalCase generate_case(const PhantomConfig& cfg, uint64_t seed, int case_id);

// Joint right-angle rotations and axis flips; a pure voxel permutation, so
// label histograms are invariant.
struct AugmentOps {
  std::array<bool, 3> flip{false, false, false};
  int plane = -1;         // -1 none, 0 = (H,W), 1 = (D,H), 2 = (D,W)
  int quarter_turns = 0;  // 0..3
  bool identity() const { return !flip[0] && !flip[1] && !flip[2] && quarter_turns % 4 == 0; }
};

AugmentOps sample_augment(uint64_t aug_seed, Size3 shape);
MultiModalCase apply_augment(const MultiModalCase& c, const AugmentOps& ops);
MultiModalCase augment(const MultiModalCase& c, uint64_t aug_seed);

struct SplitIndices {
  std::vector<int> train, val, test;  // case indices, disjoint
};

// Shuffles case indices with cfg.seed and cuts floor(frac*n) for val and
// test; the remainder (the floor rounding surplus) goes to train.
SplitIndices make_split(const PhantomConfig& cfg, std::array<double, 3> fractions);

// Case container: one UTF-8 header line
//   CCSDVOL1 n=<N> dims=<D>,<H>,<W> dtype=f8 labels=i4 case_id=<id> seed=<seed>
// followed by N raw little-endian float64 volumes and the int32 labels.
void save_case(const std::string& path, const MultiModalCase& c);
MultiModalCase load_case(const std::string& path);

struct ManifestEntry {
  int case_id;
  std::string split;  // train|val|test
  uint64_t seed;
  std::string path;
};

// UTF-8 lines: case_id,split,seed,path
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace ccsd
