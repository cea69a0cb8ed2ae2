#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "ccsd/lattice.hpp"
#include "ccsd/tensor.hpp"

// Per-region Dice on nested label regions, per-combination evaluation
// tables, robustness curves over the number of available modalities, and
// the AURC summary. All CSV numbers are written with shortest round-trip
// formatting so regenerated files are byte-identical.

namespace ccsd {

struct RegionSpec {
  std::string name;
  std::vector<int> labels;  // label values whose union forms the region
};

// WT {1,2,3} ⊇ TC {2,3} ⊇ ET {3}.
std::vector<RegionSpec> default_regions();

// 2|a∩b| / (|a|+|b|); two empty masks agree perfectly (1.0).
double dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);

std::vector<uint8_t> region_mask(const LabelVolume& labels, const RegionSpec& spec);

// Per-voxel argmax class (ties to the lowest class index).
template <typename T>
LabelVolume argmax_labels(const TensorT<T>& probs_or_logits);

struct EvalTable {
  ComboLattice lattice;
  std::vector<std::string> region_names;
  std::vector<std::vector<double>> rows;  // [combo][region], canonical order
  std::vector<double> averages;           // per region, unweighted over combos

  void recompute_averages();
};

struct RobustnessCurve {
  std::vector<int> counts;      // 1..N
  std::vector<double> mean_dice;
};

// point[c] = mean Dice over all combos of size c.
RobustnessCurve robustness_curve(const EvalTable& table, int region_index);

// Trapezoidal area over counts 1..N normalized by (N-1): a constant curve at
// d scores d. Needs at least 2 points.
double aurc(const RobustnessCurve& curve);
double aurc_raw(const RobustnessCurve& curve);

std::string format_double(double v);  // shortest round-trip decimal

// eval_table.csv: combo,<region columns>, plus a final "Avg." row.
void write_eval_table_csv(const std::string& path, const EvalTable& table);
// robustness_curve.csv: count,<mean dice per region>.
void write_robustness_csv(const std::string& path, const EvalTable& table);
// aurc.csv: region,aurc,raw_area.
void write_aurc_csv(const std::string& path, const EvalTable& table);

}  // namespace ccsd
