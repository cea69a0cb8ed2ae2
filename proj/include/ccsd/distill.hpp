#pragma once
#include <stdexcept>
#include <vector>

#include "ccsd/autodiff.hpp"
#include "ccsd/criticality.hpp"
#include "ccsd/ssnet.hpp"

// The three training objectives. Segmentation loss is soft Dice plus voxel
// cross-entropy. HMSD distils the full-modality output (or carrier feature)
// into every combination of a sampled hierarchy level. DMCD distils softened
// combination features pairwise along a decremental path. Teachers are
// detached: their values enter the losses as constants.

namespace ccsd {

enum class HmsdMode { decoder_output, feature };

struct DistillConfig {
  double temperature = 2.0;  // tau; applies to DMCD and feature-mode HMSD
  double hmsd_weight = 1.0;  // lambda1 (K1)
  double dmcd_weight = 1.0;  // lambda2 (K2)
  Carrier carrier = Carrier::fused;
  HmsdMode hmsd_mode = HmsdMode::decoder_output;
  bool per_case_path = false;  // one DMCD path per case instead of per batch

  void validate() const {
    if (temperature <= 0) throw std::invalid_argument("distill: temperature must be > 0");
    if (hmsd_weight < 0 || dmcd_weight < 0)
      throw std::invalid_argument("distill: loss weights must be >= 0");
  }
};

struct LossBreakdown {
  double seg = 0, hmsd = 0, dmcd = 0, total = 0;
};

// Raised when a loss term goes non-finite; the trainer flushes its record
// and stops.
struct TrainingAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Channel softmax of values/tau at every spatial position.
template <typename T>
TensorT<T> softened_distribution(const TensorT<T>& values, double temperature);

// Mean over positions of KL(p || q), both [B,C,D,H,W] distributions over the
// channel axis. Zeros in q are clamped at 1e-12.
template <typename T>
double kl_div(const TensorT<T>& p, const TensorT<T>& q);

// Soft Dice + cross-entropy on decoder logits.
template <typename T>
ad::NodeT<T>* seg_loss(ad::TapeT<T>& t, ad::NodeT<T>* logits, const LabelVolume& labels);

// Mean over the C(N,k) students of KL(teacher || student). In decoder_output
// mode the distributions are decoder class probabilities (the teacher decode
// can be shared via full_logits); in feature mode they are softened carrier
// features. The teacher is constant.
template <typename T>
ad::NodeT<T>* hmsd_loss(ad::TapeT<T>& t, SsNetT<T>& net, const ComboFeatureCacheT<T>& cache,
                        int k, const DistillConfig& cfg, ad::NodeT<T>* full_logits = nullptr);

// Same with an explicit student list (hmsd_loss passes level_set(N, k)).
template <typename T>
ad::NodeT<T>* hmsd_loss_students(ad::TapeT<T>& t, SsNetT<T>& net,
                                 const ComboFeatureCacheT<T>& cache,
                                 const std::vector<ModalityCombo>& students,
                                 const DistillConfig& cfg, ad::NodeT<T>* full_logits = nullptr);

// Sum over adjacent path pairs of KL(softened teacher || softened student) on
// the carrier feature. Paths shorter than 2 give 0.
template <typename T>
ad::NodeT<T>* dmcd_loss(ad::TapeT<T>& t, SsNetT<T>& net, const ComboFeatureCacheT<T>& cache,
                        const DecrementPath& path, const DistillConfig& cfg);

// Per-case variant: one path per batch element, case losses averaged.
template <typename T>
ad::NodeT<T>* dmcd_loss_per_case(ad::TapeT<T>& t, SsNetT<T>& net,
                                 const ComboFeatureCacheT<T>& cache,
                                 const std::vector<DecrementPath>& paths,
                                 const DistillConfig& cfg);

// total = seg + lambda1 * hmsd + lambda2 * dmcd. Throws TrainingAbort naming
// the offending term if any value is non-finite.
template <typename T>
ad::NodeT<T>* total_loss(ad::TapeT<T>& t, ad::NodeT<T>* seg, ad::NodeT<T>* hmsd,
                         ad::NodeT<T>* dmcd, const DistillConfig& cfg, LossBreakdown* breakdown);

}  // namespace ccsd
