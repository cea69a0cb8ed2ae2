#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "ccsd/autodiff.hpp"
#include "ccsd/lattice.hpp"
#include "ccsd/tensor.hpp"

// The shared-specific encoder/decoder. One shared encoder runs on every
// modality, one specific encoder per modality, a pointwise compositional
// layer fuses the two streams, and a single decoder maps any assembled
// combination feature Z to class logits. A full forward pass assembles the
// Z of every non-empty modality combination from one encoding per modality.

namespace ccsd {

// Which per-modality feature carries a distillation signal. Missing slots
// always fall back to the shared feature, so `fused` reproduces the decoder
// input Z exactly.
enum class Carrier { shared, specific, fused };

struct NetConfig {
  int n_modalities = 4;
  int spatial_rank = 3;          // 2 -> volumes carried as D=1
  Size3 input_size{32, 32, 32};  // {1,H,W} when spatial_rank == 2
  int base_channels = 8;
  int depth = 3;  // resolution levels; bottleneck = input / 2^(depth-1)
  int n_classes = 4;
  int feature_channels = 32;  // channels of f_shared/f_spec at the fusion stage

  void validate() const;
  Size3 bottleneck_size() const;
  ad::Factor3 pool_factors() const;
  int conv_kd() const { return spatial_rank == 3 ? 3 : 1; }
};

template <typename T>
struct ConvBlockT {
  ad::ParamT<T> w, b, gamma, beta;  // conv + instance-norm affine
};

template <typename T>
struct ModalityFeaturesT {
  std::vector<ad::NodeT<T>*> shared, specific, fused;  // one node per modality
};

template <typename T>
struct ComboFeatureCacheT {
  ComboLattice lattice;
  ModalityFeaturesT<T> feats;
  std::vector<ad::NodeT<T>*> entries;  // Z per combo, canonical lattice order

  ad::NodeT<T>* entry(ModalityCombo c) const {
    return entries[static_cast<size_t>(lattice.index_of(c))];
  }
};

template <typename T>
struct SegOutputT {
  TensorT<T> logits;
  TensorT<T> probabilities;  // per-voxel channel softmax of logits
};

template <typename T>
class SsNetT {
 public:
  SsNetT(const NetConfig& cfg, uint64_t seed);

  const NetConfig& config() const { return cfg_; }

  // Zeroes the channels of modalities outside the combo. x is [B,N,D,H,W].
  static TensorT<T> mask_inputs(const TensorT<T>& x, ModalityCombo combo);

  // Runs the shared encoder and every specific encoder once per modality and
  // fuses the two streams. The input may be masked or full.
  ModalityFeaturesT<T> encode(ad::TapeT<T>& t, const TensorT<T>& x);

  // Z for one combo: channel concat over all N slots in ascending modality
  // order; present slots carry fused features, missing slots shared features.
  ad::NodeT<T>* assemble_combo_feature(ad::TapeT<T>& t, ModalityCombo c,
                                       const ModalityFeaturesT<T>& f) const;

  // Same slot rule with a caller-provided stand-in for missing slots (the
  // inference path substitutes the shared encoding of a zero volume).
  ad::NodeT<T>* assemble_with_substitute(ad::TapeT<T>& t, ModalityCombo c,
                                         const ModalityFeaturesT<T>& f,
                                         ad::NodeT<T>* missing_slot) const;

  // One encoding per modality, then Z for all 2^N - 1 combos.
  ComboFeatureCacheT<T> forward_all_combos(ad::TapeT<T>& t, const TensorT<T>& x);

  // Carrier variant of a combo feature for distillation losses.
  ad::NodeT<T>* carrier_feature(ad::TapeT<T>& t, ModalityCombo c, const ModalityFeaturesT<T>& f,
                                Carrier carrier) const;

  // Decoder: Z at bottleneck resolution -> logits at input resolution.
  ad::NodeT<T>* decode(ad::TapeT<T>& t, ad::NodeT<T>* z);
  SegOutputT<T> seg_output(ad::TapeT<T>& t, ad::NodeT<T>* z);

  // Shared encoding of an all-zero volume (what a masked modality produces).
  ad::NodeT<T>* encode_shared_zero(ad::TapeT<T>& t, int64_t batch);

  std::vector<ad::ParamT<T>*> parameters();
  int64_t parameter_count();

  struct Counters {
    int64_t shared_encoder = 0;
    int64_t specific_encoder = 0;
    int64_t decoder = 0;
  };
  const Counters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }

  // Checkpoint: <prefix>.bin holds parameters, <prefix>.meta is a UTF-8
  // key=value sidecar (config, seed, step count) that round-trips exactly.
  void save_checkpoint(const std::string& prefix, uint64_t seed, int64_t steps) const;
  static SsNetT load_checkpoint(const std::string& prefix, uint64_t* seed = nullptr,
                                int64_t* steps = nullptr);
  static std::string metadata_text(const NetConfig& cfg, uint64_t seed, int64_t steps);
  static NetConfig parse_metadata(const std::string& text, uint64_t* seed, int64_t* steps);

 private:
  ad::NodeT<T>* run_encoder(ad::TapeT<T>& t, std::vector<ConvBlockT<T>>& blocks,
                            ad::NodeT<T>* x);
  ad::NodeT<T>* fuse(ad::TapeT<T>& t, ad::NodeT<T>* shared, ad::NodeT<T>* specific);
  ad::NodeT<T>* conv_in_act(ad::TapeT<T>& t, ConvBlockT<T>& blk, ad::NodeT<T>* x);

  NetConfig cfg_;
  std::vector<ConvBlockT<T>> shared_;
  std::vector<std::vector<ConvBlockT<T>>> specific_;  // per modality
  ad::ParamT<T> fusion_w_, fusion_b_;
  std::vector<ConvBlockT<T>> dec_blocks_;  // reduce block + one per upsample
  ad::ParamT<T> cls_w_, cls_b_;
  Counters counters_;
};

using SsNet = SsNetT<double>;
using SsNetF = SsNetT<float>;

}  // namespace ccsd
