#include "ccsd/distill.hpp"

#include <cmath>

#include "ccsd/kernels.hpp"

namespace ccsd {

namespace {

// Fused carrier is the cached Z; other carriers assemble on demand.
template <typename T>
ad::NodeT<T>* combo_carrier(ad::TapeT<T>& t, SsNetT<T>& net, const ComboFeatureCacheT<T>& cache,
                            ModalityCombo c, Carrier carrier) {
  if (carrier == Carrier::fused) return cache.entry(c);
  return net.carrier_feature(t, c, cache.feats, carrier);
}

template <typename T>
void check_dist_shape(const TensorT<T>& x, const char* who) {
  if (x.rank() != 5)
    throw std::invalid_argument(std::string(who) + ": expected [B,C,D,H,W], got " +
                                x.shape_str());
}

}  // namespace

template <typename T>
TensorT<T> softened_distribution(const TensorT<T>& values, double temperature) {
  if (temperature <= 0)
    throw std::invalid_argument("softened_distribution: temperature must be > 0");
  check_dist_shape(values, "softened_distribution");
  const auto& s = values.shape();
  TensorT<T> out(values.shape());
  kern::softmax_channel_forward(values.data(), out.data(), s[0], s[1], s[2] * s[3] * s[4],
                                static_cast<T>(1.0 / temperature));
  return out;
}

template <typename T>
double kl_div(const TensorT<T>& p, const TensorT<T>& q) {
  check_dist_shape(p, "kl_div");
  if (!p.same_shape(q)) throw std::invalid_argument("kl_div: shape mismatch");
  const auto& s = p.shape();
  const int64_t B = s[0], C = s[1], V = s[2] * s[3] * s[4];
  double sum = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* pp = p.data() + (b * C + c) * V;
      const T* qq = q.data() + (b * C + c) * V;
      for (int64_t v = 0; v < V; ++v) {
        const double pv = static_cast<double>(pp[v]);
        if (pv <= 0) continue;
        const double qv = std::max(static_cast<double>(qq[v]), 1e-12);
        sum += pv * (std::log(pv) - std::log(qv));
      }
    }
  return sum / static_cast<double>(B * V);
}

template <typename T>
ad::NodeT<T>* seg_loss(ad::TapeT<T>& t, ad::NodeT<T>* logits, const LabelVolume& labels) {
  ad::NodeT<T>* dice = ad::soft_dice_loss(t, ad::softmax_channels(t, logits), labels);
  ad::NodeT<T>* ce = ad::cross_entropy_nll(t, ad::log_softmax_channels(t, logits), labels);
  return ad::add(t, dice, ce);
}

template <typename T>
ad::NodeT<T>* hmsd_loss_students(ad::TapeT<T>& t, SsNetT<T>& net,
                                 const ComboFeatureCacheT<T>& cache,
                                 const std::vector<ModalityCombo>& students,
                                 const DistillConfig& cfg, ad::NodeT<T>* full_logits) {
  cfg.validate();
  if (students.empty()) throw std::invalid_argument("hmsd_loss: no students");
  const ModalityCombo full = ModalityCombo::full(cache.lattice.n_modalities);
  std::vector<ad::NodeT<T>*> terms;
  if (cfg.hmsd_mode == HmsdMode::decoder_output) {
    if (!full_logits) full_logits = net.decode(t, cache.entry(full));
    // Teacher distribution is a constant: no gradient flows through it.
    TensorT<T> teacher = softened_distribution(full_logits->value, 1.0);
    for (ModalityCombo c : students) {
      ad::NodeT<T>* lq = ad::log_softmax_channels(t, net.decode(t, cache.entry(c)));
      terms.push_back(ad::kl_const_teacher(t, teacher, lq));
    }
  } else {
    const T inv_tau = static_cast<T>(1.0 / cfg.temperature);
    ad::NodeT<T>* tz = combo_carrier(t, net, cache, full, cfg.carrier);
    TensorT<T> teacher = softened_distribution(tz->value, cfg.temperature);
    for (ModalityCombo c : students) {
      ad::NodeT<T>* z = combo_carrier(t, net, cache, c, cfg.carrier);
      terms.push_back(
          ad::kl_const_teacher(t, teacher, ad::log_softmax_channels(t, z, inv_tau)));
    }
  }
  return ad::scale(t, ad::add_n(t, terms), static_cast<T>(1.0 / terms.size()));
}

template <typename T>
ad::NodeT<T>* hmsd_loss(ad::TapeT<T>& t, SsNetT<T>& net, const ComboFeatureCacheT<T>& cache,
                        int k, const DistillConfig& cfg, ad::NodeT<T>* full_logits) {
  const int n = cache.lattice.n_modalities;
  if (k < 1 || k > n - 1)
    throw std::invalid_argument("hmsd_loss: level k=" + std::to_string(k) + " outside [1," +
                                std::to_string(n - 1) + "]");
  return hmsd_loss_students(t, net, cache, level_set(n, k), cfg, full_logits);
}

template <typename T>
ad::NodeT<T>* dmcd_loss(ad::TapeT<T>& t, SsNetT<T>& net, const ComboFeatureCacheT<T>& cache,
                        const DecrementPath& path, const DistillConfig& cfg) {
  cfg.validate();
  if (path.steps.size() < 2) return t.constant(TensorT<T>::scalar(T{0}));
  const T inv_tau = static_cast<T>(1.0 / cfg.temperature);
  std::vector<ad::NodeT<T>*> terms;
  for (size_t i = 0; i + 1 < path.steps.size(); ++i) {
    ad::NodeT<T>* tz = combo_carrier(t, net, cache, path.steps[i], cfg.carrier);
    TensorT<T> teacher = softened_distribution(tz->value, cfg.temperature);
    ad::NodeT<T>* sz = combo_carrier(t, net, cache, path.steps[i + 1], cfg.carrier);
    terms.push_back(
        ad::kl_const_teacher(t, teacher, ad::log_softmax_channels(t, sz, inv_tau)));
  }
  return ad::add_n(t, terms);
}

template <typename T>
ad::NodeT<T>* dmcd_loss_per_case(ad::TapeT<T>& t, SsNetT<T>& net,
                                 const ComboFeatureCacheT<T>& cache,
                                 const std::vector<DecrementPath>& paths,
                                 const DistillConfig& cfg) {
  cfg.validate();
  if (paths.empty()) throw std::invalid_argument("dmcd_loss_per_case: no paths");
  const T inv_tau = static_cast<T>(1.0 / cfg.temperature);
  std::vector<ad::NodeT<T>*> case_terms;
  for (size_t b = 0; b < paths.size(); ++b) {
    const auto& path = paths[b];
    if (path.steps.size() < 2) {
      case_terms.push_back(t.constant(TensorT<T>::scalar(T{0})));
      continue;
    }
    std::vector<ad::NodeT<T>*> terms;
    for (size_t i = 0; i + 1 < path.steps.size(); ++i) {
      ad::NodeT<T>* tz = ad::slice_batch(
          t, combo_carrier(t, net, cache, path.steps[i], cfg.carrier), static_cast<int64_t>(b));
      TensorT<T> teacher = softened_distribution(tz->value, cfg.temperature);
      ad::NodeT<T>* sz = ad::slice_batch(
          t, combo_carrier(t, net, cache, path.steps[i + 1], cfg.carrier),
          static_cast<int64_t>(b));
      terms.push_back(
          ad::kl_const_teacher(t, teacher, ad::log_softmax_channels(t, sz, inv_tau)));
    }
    case_terms.push_back(ad::add_n(t, terms));
  }
  return ad::scale(t, ad::add_n(t, case_terms), static_cast<T>(1.0 / case_terms.size()));
}

template <typename T>
ad::NodeT<T>* total_loss(ad::TapeT<T>& t, ad::NodeT<T>* seg, ad::NodeT<T>* hmsd,
                         ad::NodeT<T>* dmcd, const DistillConfig& cfg,
                         LossBreakdown* breakdown) {
  cfg.validate();
  const double sv = ad::scalar_value(seg);
  const double hv = ad::scalar_value(hmsd);
  const double dv = ad::scalar_value(dmcd);
  if (!std::isfinite(sv)) throw TrainingAbort("non-finite seg loss");
  if (!std::isfinite(hv)) throw TrainingAbort("non-finite hmsd loss");
  if (!std::isfinite(dv)) throw TrainingAbort("non-finite dmcd loss");
  ad::NodeT<T>* total =
      ad::add(t, seg,
              ad::add(t, ad::scale(t, hmsd, static_cast<T>(cfg.hmsd_weight)),
                      ad::scale(t, dmcd, static_cast<T>(cfg.dmcd_weight))));
  const double tv = ad::scalar_value(total);
  if (!std::isfinite(tv)) throw TrainingAbort("non-finite total loss");
  if (breakdown) *breakdown = {sv, hv, dv, tv};
  return total;
}

#define CCSD_INSTANTIATE_DISTILL(T)                                                               \
  template TensorT<T> softened_distribution<T>(const TensorT<T>&, double);                        \
  template double kl_div<T>(const TensorT<T>&, const TensorT<T>&);                                \
  template ad::NodeT<T>* seg_loss<T>(ad::TapeT<T>&, ad::NodeT<T>*, const LabelVolume&);           \
  template ad::NodeT<T>* hmsd_loss_students<T>(ad::TapeT<T>&, SsNetT<T>&,                         \
                                               const ComboFeatureCacheT<T>&,                      \
                                               const std::vector<ModalityCombo>&,                 \
                                               const DistillConfig&, ad::NodeT<T>*);              \
  template ad::NodeT<T>* hmsd_loss<T>(ad::TapeT<T>&, SsNetT<T>&, const ComboFeatureCacheT<T>&,    \
                                      int, const DistillConfig&, ad::NodeT<T>*);                  \
  template ad::NodeT<T>* dmcd_loss<T>(ad::TapeT<T>&, SsNetT<T>&, const ComboFeatureCacheT<T>&,    \
                                      const DecrementPath&, const DistillConfig&);                 \
  template ad::NodeT<T>* dmcd_loss_per_case<T>(ad::TapeT<T>&, SsNetT<T>&,                         \
                                               const ComboFeatureCacheT<T>&,                      \
                                               const std::vector<DecrementPath>&,                 \
                                               const DistillConfig&);                              \
  template ad::NodeT<T>* total_loss<T>(ad::TapeT<T>&, ad::NodeT<T>*, ad::NodeT<T>*,               \
                                       ad::NodeT<T>*, const DistillConfig&, LossBreakdown*);

CCSD_INSTANTIATE_DISTILL(float)
CCSD_INSTANTIATE_DISTILL(double)
#undef CCSD_INSTANTIATE_DISTILL

}  // namespace ccsd
