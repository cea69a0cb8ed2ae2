#pragma once
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccsd/distill.hpp"
#include "ccsd/metrics.hpp"
#include "ccsd/ssnet.hpp"
#include "ccsd/synthdata.hpp"

#include <json.hpp>

// Training loop wiring the network, criticality paths and the distillation
// losses; full-lattice evaluation; the ablation runner behind the `ablate`
// subcommand. One training step: full-modality forward, cache all combos,
// segmentation loss on the full-combo decode, HMSD at a sampled level k,
// DMCD along the configured path strategy, Adam update under a cosine
// learning-rate schedule.

namespace ccsd {

struct TrainConfig {
  int epochs = 30;          // paper default 100
  int batch_size = 4;       // paper default 12
  double lr = 1e-2;         // Adam initial learning rate
  double lr_min = 1e-5;     // cosine annealing floor
  uint64_t seed = 1234;
  int eval_every = 10;      // validation cadence in epochs
  PathStrategy path_strategy = PathStrategy::max_criticality;
  bool augment_data = true;
  std::string precision = "f32";  // f32 | f64
  std::array<double, 3> fractions{0.8, 0.075, 0.125};  // train/val/test
  std::string data_dir;  // load cases from a manifest instead of generating

  DistillConfig distill;
  NetConfig net;      // input_size/n_modalities are derived from `data`
  PhantomConfig data;

  void validate() const;
  NetConfig net_for_data() const;  // net with data-derived geometry
};

// lr(e) = lr_min + (lr - lr_min) * (1 + cos(pi * e / E)) / 2.
double cosine_lr(int epoch, int total_epochs, double lr0, double lr_min);

// Adam with double-precision moment state regardless of the net scalar type.
template <typename T>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<ad::ParamT<T>*>& params, double lr);

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochStats {
  int epoch = 0;
  double seg = 0, hmsd = 0, dmcd = 0, total = 0, lr = 0;
};

struct RunRecord {
  nlohmann::ordered_json config;  // flat key=value snapshot
  std::vector<EpochStats> epochs;
  EvalTable test_table;
  std::map<std::string, double> aurc_by_region;   // normalized
  std::map<std::string, double> raw_area_by_region;
  double best_val_mean_dice = 0;
  double test_mean_dice = 0;  // mean over combos and regions
  int64_t steps = 0;
  double wall_seconds = 0;
  bool aborted = false;
  std::string abort_reason;

  nlohmann::ordered_json to_json() const;
  static RunRecord from_json(const nlohmann::ordered_json& j);
  void save(const std::string& path) const;
  static RunRecord load(const std::string& path);
};

// Runs the full loop and writes loss_log.csv, ckpt.{bin,meta}, the metric
// CSVs and run_record.json under out_dir.
RunRecord train(const TrainConfig& cfg, const std::string& out_dir);

// Per-combination evaluation: mask (via reused per-modality encodings plus
// the shared encoding of a zero volume), decode, per-region Dice averaged
// over cases.
template <typename T>
EvalTable evaluate(SsNetT<T>& net, const std::vector<MultiModalCase>& cases);

// The dataset a config describes: generated in canonical case order, or
// loaded from data_dir's manifest (which then also defines the split).
struct Dataset {
  std::vector<MultiModalCase> cases;  // indexed by case_id
  SplitIndices split;
};
Dataset load_dataset(const TrainConfig& cfg);

EvalTable evaluate_checkpoint(const std::string& ckpt_prefix, const TrainConfig& cfg,
                              const std::vector<MultiModalCase>& cases);

enum class AblationAxis { k1k2, carrier, path_strategy };
AblationAxis parse_ablation_axis(const std::string& name);

struct AblationRun {
  std::string setting;
  uint64_t seed = 0;
  double mean_dice = 0;
  std::map<std::string, double> aurc_by_region;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  // setting -> (mean, population spread) of mean Dice over seeds
  std::map<std::string, std::pair<double, double>> dice_summary;
  std::map<std::string, std::pair<double, double>> aurc_summary;  // region-mean AURC

  void write_csv(const std::string& path) const;
  nlohmann::ordered_json to_json() const;
};

// Cross-product of the axis settings and seeds; each run lands in
// out_dir/<setting>/seed_<s>.
AblationReport ablate(const TrainConfig& base, AblationAxis axis,
                      const std::vector<uint64_t>& seeds, const std::string& out_dir);

}  // namespace ccsd
