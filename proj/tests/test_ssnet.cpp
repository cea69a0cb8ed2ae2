#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ccsd/rng.hpp"
#include "ccsd/ssnet.hpp"

using namespace ccsd;
using ad::Node;
using ad::Tape;

namespace {

NetConfig small_cfg(int n = 4) {
  NetConfig c;
  c.n_modalities = n;
  c.spatial_rank = 2;
  c.input_size = {1, 8, 8};
  c.base_channels = 4;
  c.depth = 2;
  c.n_classes = 3;
  c.feature_channels = 6;
  return c;
}

Tensor random_input(const NetConfig& c, uint64_t seed, int64_t B = 1) {
  Rng rng(seed);
  Tensor x({B, c.n_modalities, c.input_size.d, c.input_size.h, c.input_size.w});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  return x;
}

// Channel block [slot*F, (slot+1)*F) of z equals channel block 0 of ref, bitwise.
bool slab_equal(const Tensor& z, int slot, int64_t F, const Tensor& ref) {
  const auto& s = z.shape();
  const int64_t V = s[2] * s[3] * s[4];
  for (int64_t b = 0; b < s[0]; ++b) {
    const double* zp = z.data() + (b * s[1] + slot * F) * V;
    const double* rp = ref.data() + (b * ref.shape()[1]) * V;
    for (int64_t i = 0; i < F * V; ++i)
      if (zp[i] != rp[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mask_inputs") {
  auto cfg = small_cfg();
  Tensor x = random_input(cfg, 1, 2);
  const int64_t V = 64;

  // Full combo is a no-op.
  Tensor full = SsNet::mask_inputs(x, ModalityCombo::full(4));
  CHECK(full.vec() == x.vec());

  // Single modality: the complement is exactly zero, the member is bit-equal.
  Tensor m1 = SsNet::mask_inputs(x, ModalityCombo::single(0));
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t m = 0; m < 4; ++m) {
      double linf = 0;
      for (int64_t v = 0; v < V; ++v)
        linf = std::max(linf, std::abs(m1.data()[(b * 4 + m) * V + v]));
      if (m == 0) {
        for (int64_t v = 0; v < V; ++v)
          CHECK(m1.data()[(b * 4 + m) * V + v] == x.data()[(b * 4 + m) * V + v]);
      } else {
        CHECK(linf == 0.0);
      }
    }

  // Exhaustive: zeroed channel set equals the combo complement, and masking
  // is idempotent.
  for (ModalityCombo c : enumerate_combos(4).all_combos) {
    Tensor masked = SsNet::mask_inputs(x, c);
    for (int64_t m = 0; m < 4; ++m) {
      bool zero = true;
      for (int64_t b = 0; b < 2 && zero; ++b)
        for (int64_t v = 0; v < V; ++v)
          if (masked.data()[(b * 4 + m) * V + v] != 0.0) {
            zero = false;
            break;
          }
      CHECK(zero == !c.contains(static_cast<int>(m)));
    }
    Tensor twice = SsNet::mask_inputs(masked, c);
    CHECK(twice.vec() == masked.vec());
  }

  CHECK_THROWS_AS(SsNet::mask_inputs(x, ModalityCombo{}), std::invalid_argument);
}

TEST_CASE("encode shapes and shared-encoder determinism") {
  auto cfg = small_cfg();
  SsNet net(cfg, 42);
  Tensor x = random_input(cfg, 2);
  // Copy modality 0's volume into modality 1's slot.
  const int64_t V = 64;
  for (int64_t v = 0; v < V; ++v) x.data()[1 * V + v] = x.data()[v];

  Tape t;
  auto f = net.encode(t, x);
  REQUIRE(f.shared.size() == 4);

  // Same input through the single shared encoder gives identical features.
  CHECK(f.shared[0]->value.vec() == f.shared[1]->value.vec());

  // Bottleneck spatial shape is input / 2^(depth-1) per active axis.
  const auto& s = f.shared[0]->value.shape();
  CHECK(s[1] == cfg.feature_channels);
  CHECK(s[2] == 1);
  CHECK(s[3] == 4);
  CHECK(s[4] == 4);

  // The compositional layer is not a pass-through at init.
  bool differs = false;
  for (int64_t i = 0; i < f.fused[0]->value.numel(); ++i)
    if (f.fused[0]->value[i] != f.shared[0]->value[i]) {
      differs = true;
      break;
    }
  CHECK(differs);

  Tensor bad({1, 2, 1, 8, 8});
  CHECK_THROWS_AS(net.encode(t, bad), std::invalid_argument);
}

TEST_CASE("assemble_combo_feature slot rule") {
  auto cfg = small_cfg();
  SsNet net(cfg, 7);
  Tensor x = random_input(cfg, 3);
  Tape t;
  auto f = net.encode(t, x);
  const int64_t F = cfg.feature_channels;

  Node* zfull = net.assemble_combo_feature(t, ModalityCombo::full(4), f);
  for (int m = 0; m < 4; ++m) CHECK(slab_equal(zfull->value, m, F, f.fused[(size_t)m]->value));

  Node* z3 = net.assemble_combo_feature(t, ModalityCombo::single(2), f);
  CHECK(slab_equal(z3->value, 0, F, f.shared[0]->value));
  CHECK(slab_equal(z3->value, 1, F, f.shared[1]->value));
  CHECK(slab_equal(z3->value, 2, F, f.fused[2]->value));
  CHECK(slab_equal(z3->value, 3, F, f.shared[3]->value));

  // All 15 Z shapes identical.
  auto lat = enumerate_combos(4);
  for (ModalityCombo c : lat.all_combos)
    CHECK(net.assemble_combo_feature(t, c, f)->value.shape() == zfull->value.shape());
}

TEST_CASE("forward_all_combos cache") {
  auto cfg = small_cfg();
  SsNet net(cfg, 11);
  Tensor x = random_input(cfg, 4);
  Tape t;
  net.reset_counters();
  auto cache = net.forward_all_combos(t, x);

  CHECK(cache.entries.size() == 15);
  CHECK(cache.lattice.all_combos.size() == 15);

  // Exactly one encoder evaluation per modality per pass.
  CHECK(net.counters().shared_encoder == 4);
  CHECK(net.counters().specific_encoder == 4);

  // Recomputation oracle: every entry equals an independent re-assembly.
  for (ModalityCombo c : cache.lattice.all_combos) {
    Node* again = net.assemble_combo_feature(t, c, cache.feats);
    CHECK(cache.entry(c)->value.vec() == again->value.vec());
  }

  // Monotone information: for a subset of b, Z differs only in b \ a slots.
  const int64_t F = cfg.feature_channels;
  const auto& full = cache.entry(ModalityCombo::full(4))->value;
  for (ModalityCombo a : cache.lattice.all_combos)
    for (ModalityCombo b : cache.lattice.all_combos) {
      if (!a.subset_of(b) || a == b) continue;
      const auto& za = cache.entry(a)->value;
      const auto& zb = cache.entry(b)->value;
      for (int m = 0; m < 4; ++m) {
        const bool in_a = a.contains(m), in_b = b.contains(m);
        if (in_a == in_b) {
          CHECK(slab_equal(za, m, F, in_a ? cache.feats.fused[(size_t)m]->value
                                          : cache.feats.shared[(size_t)m]->value));
          CHECK(slab_equal(zb, m, F, in_a ? cache.feats.fused[(size_t)m]->value
                                          : cache.feats.shared[(size_t)m]->value));
        }
      }
    }
  (void)full;

  // Degenerate lattice at N=1: single entry equal to the fused feature.
  auto cfg1 = small_cfg(1);
  SsNet net1(cfg1, 5);
  Tape t1;
  auto cache1 = net1.forward_all_combos(t1, random_input(cfg1, 9));
  REQUIRE(cache1.entries.size() == 1);
  CHECK(cache1.entries[0]->value.vec() == cache1.feats.fused[0]->value.vec());
}

TEST_CASE("decode output contract") {
  auto cfg = small_cfg();
  SsNet net(cfg, 13);
  Tensor x = random_input(cfg, 6);
  Tape t;
  auto cache = net.forward_all_combos(t, x);
  Node* z = cache.entry(ModalityCombo::full(4));

  auto out = net.seg_output(t, z);
  const auto& s = out.logits.shape();
  CHECK(s[1] == cfg.n_classes);
  CHECK(s[2] == cfg.input_size.d);
  CHECK(s[3] == cfg.input_size.h);
  CHECK(s[4] == cfg.input_size.w);

  // Probabilities sum to 1 per voxel.
  const int64_t C = cfg.n_classes, V = 64;
  for (int64_t v = 0; v < V; ++v) {
    double sum = 0;
    for (int64_t c = 0; c < C; ++c) sum += out.probabilities[c * V + v];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }

  // Per-voxel logit shifts leave the distribution unchanged.
  Tensor shifted = out.logits;
  for (int64_t v = 0; v < V; ++v)
    for (int64_t c = 0; c < C; ++c) shifted[c * V + v] += 3.25;
  Node* p2 = ad::softmax_channels(t, t.constant(shifted));
  for (int64_t i = 0; i < p2->value.numel(); ++i)
    CHECK(p2->value[i] == doctest::Approx(out.probabilities[i]).epsilon(1e-9));

  // Decode is pure: bit-identical logits on the same Z in double precision.
  Node* l1 = net.decode(t, z);
  Node* l2 = net.decode(t, z);
  CHECK(l1->value.vec() == l2->value.vec());

  // Z shape validation.
  Tensor wrong({1, 3, 1, 4, 4});
  CHECK_THROWS_AS(net.decode(t, t.constant(wrong)), std::invalid_argument);
}

TEST_CASE("evaluation reuse equals the literal masked pipeline") {
  auto cfg = small_cfg();
  SsNet net(cfg, 17);
  Tensor x = random_input(cfg, 8, 2);

  Tape t;
  auto feats = net.encode(t, x);
  Node* shared_zero = net.encode_shared_zero(t, 2);

  for (ModalityCombo c : enumerate_combos(4).all_combos) {
    Node* fast = net.assemble_with_substitute(t, c, feats, shared_zero);
    // Literal path: mask, re-encode, assemble.
    Tape t2;
    auto f2 = net.encode(t2, SsNet::mask_inputs(x, c));
    Node* literal = net.assemble_combo_feature(t2, c, f2);
    CHECK(fast->value.vec() == literal->value.vec());
  }
}

TEST_CASE("carrier features") {
  auto cfg = small_cfg();
  SsNet net(cfg, 19);
  Tensor x = random_input(cfg, 10);
  Tape t;
  auto f = net.encode(t, x);
  const int64_t F = cfg.feature_channels;
  auto c13 = parse_combo_label("13", 4);

  Node* zf = net.carrier_feature(t, c13, f, Carrier::fused);
  CHECK(zf->value.vec() == net.assemble_combo_feature(t, c13, f)->value.vec());

  Node* zs = net.carrier_feature(t, c13, f, Carrier::specific);
  CHECK(slab_equal(zs->value, 0, F, f.specific[0]->value));
  CHECK(slab_equal(zs->value, 1, F, f.shared[1]->value));
  CHECK(slab_equal(zs->value, 2, F, f.specific[2]->value));
  CHECK(slab_equal(zs->value, 3, F, f.shared[3]->value));

  Node* zh = net.carrier_feature(t, c13, f, Carrier::shared);
  for (int m = 0; m < 4; ++m) CHECK(slab_equal(zh->value, m, F, f.shared[(size_t)m]->value));
}

TEST_CASE("checkpoint round-trip") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "ccsd_ckpt_test";
  fs::create_directories(dir);
  const std::string prefix = (dir / "ck").string();

  auto cfg = small_cfg();
  SsNet net(cfg, 23);
  net.save_checkpoint(prefix, 23, 99);

  uint64_t seed = 0;
  int64_t steps = 0;
  SsNet loaded = SsNet::load_checkpoint(prefix, &seed, &steps);
  CHECK(seed == 23);
  CHECK(steps == 99);

  auto p1 = net.parameters();
  auto p2 = loaded.parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i]->name == p2[i]->name);
    CHECK(p1[i]->value.vec() == p2[i]->value.vec());
  }

  // Metadata text round-trips byte-identically.
  loaded.save_checkpoint(prefix + "_2", seed, steps);
  std::ifstream a(prefix + ".meta"), b(prefix + "_2.meta");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(!sa.str().empty());

  // Scalar width mismatch is refused.
  CHECK_THROWS_AS(SsNetF::load_checkpoint(prefix), std::runtime_error);
  CHECK_THROWS_AS(SsNet::load_checkpoint((dir / "missing").string()), std::runtime_error);
}

TEST_CASE("float and double nets agree at init") {
  auto cfg = small_cfg();
  SsNet nd(cfg, 31);
  SsNetF nf(cfg, 31);
  Tensor xd = random_input(cfg, 33);
  TensorF xf = TensorF::from(xd);

  Tape td;
  ad::TapeF tf;
  auto cd = nd.forward_all_combos(td, xd);
  auto cf = nf.forward_all_combos(tf, xf);
  Node* ld = nd.decode(td, cd.entry(ModalityCombo::full(4)));
  ad::NodeF* lf = nf.decode(tf, cf.entry(ModalityCombo::full(4)));
  for (int64_t i = 0; i < ld->value.numel(); ++i)
    CHECK(static_cast<double>(lf->value[i]) == doctest::Approx(ld->value[i]).epsilon(2e-4));
}
