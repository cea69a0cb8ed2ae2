#include "ccsd/ssnet.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ccsd/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint and volume files assume a little-endian host");

namespace ccsd {

void NetConfig::validate() const {
  if (n_modalities < 1) throw std::invalid_argument("net: n_modalities must be >= 1");
  if (spatial_rank != 2 && spatial_rank != 3)
    throw std::invalid_argument("net: spatial_rank must be 2 or 3");
  if (spatial_rank == 2 && input_size.d != 1)
    throw std::invalid_argument("net: rank-2 volumes must have depth extent 1");
  if (n_classes < 2) throw std::invalid_argument("net: n_classes must be >= 2");
  if (base_channels < 4) throw std::invalid_argument("net: base_channels must be >= 4");
  if (feature_channels < 1) throw std::invalid_argument("net: feature_channels must be >= 1");
  if (depth < 1) throw std::invalid_argument("net: depth must be >= 1");
  const int f = 1 << (depth - 1);
  if (input_size.h % f || input_size.w % f || (spatial_rank == 3 && input_size.d % f))
    throw std::invalid_argument("net: input_size must divide by 2^(depth-1) per axis");
}

Size3 NetConfig::bottleneck_size() const {
  const int f = 1 << (depth - 1);
  return {spatial_rank == 3 ? input_size.d / f : 1, input_size.h / f, input_size.w / f};
}

ad::Factor3 NetConfig::pool_factors() const {
  return {spatial_rank == 3 ? 2 : 1, 2, 2};
}

namespace {

std::vector<int> encoder_channels(const NetConfig& c) {
  std::vector<int> ch(static_cast<size_t>(c.depth));
  for (int l = 0; l < c.depth; ++l)
    ch[static_cast<size_t>(l)] =
        (l == c.depth - 1) ? c.feature_channels : (c.base_channels << l);
  return ch;
}

// Decoder runs at half the encoder width; segmentation of the assembled
// feature needs less capacity than encoding, and the decoder dominates the
// per-step cost (it runs once per teacher/student).
int decoder_channels(const NetConfig& c, int level) {
  return std::max((c.base_channels << level) / 2, c.n_classes);
}

template <typename T>
ad::ParamT<T> make_param(const std::string& name, std::vector<int64_t> shape, Rng& rng,
                         double bound) {
  TensorT<T> v(std::move(shape));
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = static_cast<T>(rng.uniform(-bound, bound));
  return ad::ParamT<T>(name, std::move(v));
}

template <typename T>
ConvBlockT<T> make_block(const std::string& name, int64_t ic, int64_t oc, int kd, int kh, int kw,
                         Rng& rng) {
  // Fan-in scaled uniform init for conv weights and bias.
  const double bound = 1.0 / std::sqrt(static_cast<double>(ic * kd * kh * kw));
  ConvBlockT<T> b;
  b.w = make_param<T>(name + ".w", {oc, ic, kd, kh, kw}, rng, bound);
  b.b = make_param<T>(name + ".b", {oc}, rng, bound);
  b.gamma = ad::ParamT<T>(name + ".gamma", TensorT<T>::full({oc}, T(1)));
  b.beta = ad::ParamT<T>(name + ".beta", TensorT<T>({oc}));
  return b;
}

}  // namespace

template <typename T>
SsNetT<T>::SsNetT(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x55e7));
  const auto ch = encoder_channels(cfg_);
  const int kd = cfg_.conv_kd();

  auto build_encoder = [&](const std::string& name) {
    std::vector<ConvBlockT<T>> blocks;
    int64_t ic = 1;
    for (int l = 0; l < cfg_.depth; ++l) {
      blocks.push_back(
          make_block<T>(name + "." + std::to_string(l), ic, ch[static_cast<size_t>(l)], kd, 3, 3,
                        rng));
      ic = ch[static_cast<size_t>(l)];
    }
    return blocks;
  };

  shared_ = build_encoder("shared");
  for (int m = 0; m < cfg_.n_modalities; ++m)
    specific_.push_back(build_encoder("spec" + std::to_string(m + 1)));

  const int64_t F = cfg_.feature_channels;
  const double fb = 1.0 / std::sqrt(static_cast<double>(2 * F));
  fusion_w_ = make_param<T>("fusion.w", {F, 2 * F, 1, 1, 1}, rng, fb);
  fusion_b_ = make_param<T>("fusion.b", {F}, rng, fb);

  // Decoder: pointwise reduce at the bottleneck, then conv blocks up to full
  // resolution, then a pointwise classifier.
  const int64_t zc = static_cast<int64_t>(cfg_.n_modalities) * F;
  dec_blocks_.push_back(
      make_block<T>("dec.reduce", zc, decoder_channels(cfg_, cfg_.depth - 1), 1, 1, 1, rng));
  for (int l = cfg_.depth - 2; l >= 0; --l)
    dec_blocks_.push_back(make_block<T>("dec.up" + std::to_string(l),
                                        decoder_channels(cfg_, l + 1), decoder_channels(cfg_, l),
                                        kd, 3, 3, rng));
  const int64_t c0 = decoder_channels(cfg_, 0);
  const double cb = 1.0 / std::sqrt(static_cast<double>(c0));
  cls_w_ = make_param<T>("cls.w", {cfg_.n_classes, c0, 1, 1, 1}, rng, cb);
  cls_b_ = make_param<T>("cls.b", {cfg_.n_classes}, rng, cb);
}

template <typename T>
TensorT<T> SsNetT<T>::mask_inputs(const TensorT<T>& x, ModalityCombo combo) {
  if (combo.empty()) throw std::invalid_argument("mask_inputs: empty combo");
  if (x.rank() != 5) throw std::invalid_argument("mask_inputs: expected [B,N,D,H,W]");
  const int64_t B = x.dim(0), N = x.dim(1), V = x.dim(2) * x.dim(3) * x.dim(4);
  for (int m : combo.members())
    if (m >= N) throw std::invalid_argument("mask_inputs: combo exceeds modality count");
  TensorT<T> out = x;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t m = 0; m < N; ++m)
      if (!combo.contains(static_cast<int>(m)))
        std::memset(out.data() + (b * N + m) * V, 0, sizeof(T) * static_cast<size_t>(V));
  return out;
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::conv_in_act(ad::TapeT<T>& t, ConvBlockT<T>& blk, ad::NodeT<T>* x) {
  ad::NodeT<T>* h = ad::conv(t, x, t.leaf(blk.w), t.leaf(blk.b));
  h = ad::instance_norm(t, h, t.leaf(blk.gamma), t.leaf(blk.beta));
  return ad::leaky_relu(t, h);
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::run_encoder(ad::TapeT<T>& t, std::vector<ConvBlockT<T>>& blocks,
                                     ad::NodeT<T>* x) {
  ad::NodeT<T>* h = x;
  for (size_t l = 0; l < blocks.size(); ++l) {
    if (l > 0) h = ad::avg_pool(t, h, cfg_.pool_factors());
    h = conv_in_act(t, blocks[l], h);
  }
  return h;
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::fuse(ad::TapeT<T>& t, ad::NodeT<T>* shared, ad::NodeT<T>* specific) {
  std::vector<ad::NodeT<T>*> parts{shared, specific};
  ad::NodeT<T>* h = ad::conv(t, ad::concat_channels(t, parts), t.leaf(fusion_w_),
                             t.leaf(fusion_b_));
  return ad::leaky_relu(t, h);
}

template <typename T>
ModalityFeaturesT<T> SsNetT<T>::encode(ad::TapeT<T>& t, const TensorT<T>& x) {
  if (x.rank() != 5 || x.dim(1) != cfg_.n_modalities || x.dim(2) != cfg_.input_size.d ||
      x.dim(3) != cfg_.input_size.h || x.dim(4) != cfg_.input_size.w)
    throw std::invalid_argument("encode: input shape " + x.shape_str() +
                                " does not match net config");
  const int64_t B = x.dim(0), N = x.dim(1), V = x.dim(2) * x.dim(3) * x.dim(4);
  ModalityFeaturesT<T> f;
  for (int64_t m = 0; m < N; ++m) {
    TensorT<T> xm({B, 1, x.dim(2), x.dim(3), x.dim(4)});
    for (int64_t b = 0; b < B; ++b)
      std::memcpy(xm.data() + b * V, x.data() + (b * N + m) * V,
                  sizeof(T) * static_cast<size_t>(V));
    ad::NodeT<T>* xn = t.constant(std::move(xm));
    f.shared.push_back(run_encoder(t, shared_, xn));
    ++counters_.shared_encoder;
    f.specific.push_back(run_encoder(t, specific_[static_cast<size_t>(m)], xn));
    ++counters_.specific_encoder;
    f.fused.push_back(fuse(t, f.shared.back(), f.specific.back()));
  }
  return f;
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::assemble_with_substitute(ad::TapeT<T>& t, ModalityCombo c,
                                                  const ModalityFeaturesT<T>& f,
                                                  ad::NodeT<T>* missing_slot) const {
  if (c.empty()) throw std::invalid_argument("assemble: empty combo");
  std::vector<ad::NodeT<T>*> slots;
  for (int m = 0; m < cfg_.n_modalities; ++m)
    slots.push_back(c.contains(m) ? f.fused[static_cast<size_t>(m)] : missing_slot);
  return ad::concat_channels(t, slots);
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::assemble_combo_feature(ad::TapeT<T>& t, ModalityCombo c,
                                                const ModalityFeaturesT<T>& f) const {
  if (c.empty()) throw std::invalid_argument("assemble_combo_feature: empty combo");
  std::vector<ad::NodeT<T>*> slots;
  for (int m = 0; m < cfg_.n_modalities; ++m)
    slots.push_back(c.contains(m) ? f.fused[static_cast<size_t>(m)]
                                  : f.shared[static_cast<size_t>(m)]);
  return ad::concat_channels(t, slots);
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::carrier_feature(ad::TapeT<T>& t, ModalityCombo c,
                                         const ModalityFeaturesT<T>& f, Carrier carrier) const {
  if (carrier == Carrier::fused) return assemble_combo_feature(t, c, f);
  std::vector<ad::NodeT<T>*> slots;
  for (int m = 0; m < cfg_.n_modalities; ++m) {
    const auto mi = static_cast<size_t>(m);
    if (!c.contains(m))
      slots.push_back(f.shared[mi]);
    else
      slots.push_back(carrier == Carrier::shared ? f.shared[mi] : f.specific[mi]);
  }
  return ad::concat_channels(t, slots);
}

template <typename T>
ComboFeatureCacheT<T> SsNetT<T>::forward_all_combos(ad::TapeT<T>& t, const TensorT<T>& x) {
  ComboFeatureCacheT<T> cache;
  cache.lattice = enumerate_combos(cfg_.n_modalities);
  cache.feats = encode(t, x);
  cache.entries.reserve(cache.lattice.all_combos.size());
  for (ModalityCombo c : cache.lattice.all_combos)
    cache.entries.push_back(assemble_combo_feature(t, c, cache.feats));
  return cache;
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::decode(ad::TapeT<T>& t, ad::NodeT<T>* z) {
  const Size3 bn = cfg_.bottleneck_size();
  const int64_t zc = static_cast<int64_t>(cfg_.n_modalities) * cfg_.feature_channels;
  const auto& s = z->value.shape();
  if (z->value.rank() != 5 || s[1] != zc || s[2] != bn.d || s[3] != bn.h || s[4] != bn.w)
    throw std::invalid_argument("decode: Z shape " + z->value.shape_str() +
                                " does not match cache entry shape");
  ++counters_.decoder;
  ad::NodeT<T>* h = conv_in_act(t, dec_blocks_[0], z);
  for (size_t l = 1; l < dec_blocks_.size(); ++l) {
    h = ad::upsample_nearest(t, h, cfg_.pool_factors());
    h = conv_in_act(t, dec_blocks_[l], h);
  }
  return ad::conv(t, h, t.leaf(cls_w_), t.leaf(cls_b_));
}

template <typename T>
SegOutputT<T> SsNetT<T>::seg_output(ad::TapeT<T>& t, ad::NodeT<T>* z) {
  ad::NodeT<T>* logits = decode(t, z);
  ad::NodeT<T>* probs = ad::softmax_channels(t, logits);
  return {logits->value, probs->value};
}

template <typename T>
ad::NodeT<T>* SsNetT<T>::encode_shared_zero(ad::TapeT<T>& t, int64_t batch) {
  TensorT<T> zeros({batch, 1, cfg_.input_size.d, cfg_.input_size.h, cfg_.input_size.w});
  ad::NodeT<T>* n = run_encoder(t, shared_, t.constant(std::move(zeros)));
  ++counters_.shared_encoder;
  return n;
}

template <typename T>
std::vector<ad::ParamT<T>*> SsNetT<T>::parameters() {
  std::vector<ad::ParamT<T>*> ps;
  auto add_block = [&](ConvBlockT<T>& b) {
    ps.push_back(&b.w);
    ps.push_back(&b.b);
    ps.push_back(&b.gamma);
    ps.push_back(&b.beta);
  };
  for (auto& b : shared_) add_block(b);
  for (auto& enc : specific_)
    for (auto& b : enc) add_block(b);
  ps.push_back(&fusion_w_);
  ps.push_back(&fusion_b_);
  for (auto& b : dec_blocks_) add_block(b);
  ps.push_back(&cls_w_);
  ps.push_back(&cls_b_);
  return ps;
}

template <typename T>
int64_t SsNetT<T>::parameter_count() {
  int64_t n = 0;
  for (auto* p : parameters()) n += p->value.numel();
  return n;
}

template <typename T>
std::string SsNetT<T>::metadata_text(const NetConfig& cfg, uint64_t seed, int64_t steps) {
  std::ostringstream os;
  os << "net.n_modalities=" << cfg.n_modalities << "\n"
     << "net.spatial_rank=" << cfg.spatial_rank << "\n"
     << "net.input_size=" << cfg.input_size.d << "," << cfg.input_size.h << ","
     << cfg.input_size.w << "\n"
     << "net.base_channels=" << cfg.base_channels << "\n"
     << "net.depth=" << cfg.depth << "\n"
     << "net.n_classes=" << cfg.n_classes << "\n"
     << "net.feature_channels=" << cfg.feature_channels << "\n"
     << "seed=" << seed << "\n"
     << "steps=" << steps << "\n";
  return os.str();
}

template <typename T>
NetConfig SsNetT<T>::parse_metadata(const std::string& text, uint64_t* seed, int64_t* steps) {
  NetConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint meta: bad line " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "net.n_modalities")
      cfg.n_modalities = std::stoi(val);
    else if (key == "net.spatial_rank")
      cfg.spatial_rank = std::stoi(val);
    else if (key == "net.input_size") {
      if (std::sscanf(val.c_str(), "%d,%d,%d", &cfg.input_size.d, &cfg.input_size.h,
                      &cfg.input_size.w) != 3)
        throw std::runtime_error("checkpoint meta: bad input_size " + val);
    } else if (key == "net.base_channels")
      cfg.base_channels = std::stoi(val);
    else if (key == "net.depth")
      cfg.depth = std::stoi(val);
    else if (key == "net.n_classes")
      cfg.n_classes = std::stoi(val);
    else if (key == "net.feature_channels")
      cfg.feature_channels = std::stoi(val);
    else if (key == "seed") {
      if (seed) *seed = std::stoull(val);
    } else if (key == "steps") {
      if (steps) *steps = std::stoll(val);
    } else
      throw std::runtime_error("checkpoint meta: unknown key " + key);
  }
  return cfg;
}

template <typename T>
void SsNetT<T>::save_checkpoint(const std::string& prefix, uint64_t seed, int64_t steps) const {
  {
    std::ofstream meta(prefix + ".meta", std::ios::binary);
    if (!meta) throw std::runtime_error("checkpoint: cannot write " + prefix + ".meta");
    meta << metadata_text(cfg_, seed, steps);
  }
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot write " + prefix + ".bin");
  bin.write("CCSDCKPT", 8);
  const uint32_t version = 1;
  const uint8_t scalar = sizeof(T);
  auto* self = const_cast<SsNetT*>(this);
  const auto params = self->parameters();
  const uint32_t count = static_cast<uint32_t>(params.size());
  bin.write(reinterpret_cast<const char*>(&version), 4);
  bin.write(reinterpret_cast<const char*>(&scalar), 1);
  bin.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto* p : params) {
    const uint32_t nl = static_cast<uint32_t>(p->name.size());
    bin.write(reinterpret_cast<const char*>(&nl), 4);
    bin.write(p->name.data(), nl);
    const uint32_t rank = static_cast<uint32_t>(p->value.rank());
    bin.write(reinterpret_cast<const char*>(&rank), 4);
    for (int i = 0; i < p->value.rank(); ++i) {
      const int64_t d = p->value.dim(i);
      bin.write(reinterpret_cast<const char*>(&d), 8);
    }
    bin.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(p->value.numel())));
  }
}

template <typename T>
SsNetT<T> SsNetT<T>::load_checkpoint(const std::string& prefix, uint64_t* seed, int64_t* steps) {
  std::ifstream meta(prefix + ".meta", std::ios::binary);
  if (!meta) throw std::runtime_error("checkpoint: cannot read " + prefix + ".meta");
  std::stringstream ss;
  ss << meta.rdbuf();
  NetConfig cfg = parse_metadata(ss.str(), seed, steps);

  SsNetT net(cfg, 0);
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot read " + prefix + ".bin");
  char magic[8];
  bin.read(magic, 8);
  if (std::memcmp(magic, "CCSDCKPT", 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + prefix + ".bin");
  uint32_t version = 0, count = 0;
  uint8_t scalar = 0;
  bin.read(reinterpret_cast<char*>(&version), 4);
  bin.read(reinterpret_cast<char*>(&scalar), 1);
  bin.read(reinterpret_cast<char*>(&count), 4);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  if (scalar != sizeof(T))
    throw std::runtime_error("checkpoint: scalar width mismatch (file " +
                             std::to_string(int(scalar)) + " bytes, net " +
                             std::to_string(sizeof(T)) + ")");
  auto params = net.parameters();
  if (count != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto* p : params) {
    uint32_t nl = 0;
    bin.read(reinterpret_cast<char*>(&nl), 4);
    std::string name(nl, '\0');
    bin.read(name.data(), nl);
    if (name != p->name)
      throw std::runtime_error("checkpoint: parameter order mismatch at " + name);
    uint32_t rank = 0;
    bin.read(reinterpret_cast<char*>(&rank), 4);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) bin.read(reinterpret_cast<char*>(&d), 8);
    if (dims != p->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    bin.read(reinterpret_cast<char*>(p->value.data()),
             static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(p->value.numel())));
  }
  if (!bin) throw std::runtime_error("checkpoint: truncated file " + prefix + ".bin");
  return net;
}

template class SsNetT<float>;
template class SsNetT<double>;

}  // namespace ccsd
