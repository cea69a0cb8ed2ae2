#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "ccsd/distill.hpp"
#include "ccsd/rng.hpp"

using namespace ccsd;
using ad::Node;
using ad::Tape;

namespace {

NetConfig tiny_cfg(int n) {
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

// Cache with caller-provided constant entries; valid for the fused carrier.
ComboFeatureCacheT<double> manual_cache(Tape& t, int n,
                                        const std::function<Tensor(ModalityCombo)>& make) {
  ComboFeatureCacheT<double> c;
  c.lattice = enumerate_combos(n);
  for (auto combo : c.lattice.all_combos) c.entries.push_back(t.constant(make(combo)));
  return c;
}

// Independent KL between softened 1-case feature tensors, plain loops.
double oracle_soft_kl(const Tensor& zt, const Tensor& zs, double tau) {
  const int64_t C = zt.shape()[1];
  const int64_t V = zt.shape()[2] * zt.shape()[3] * zt.shape()[4];
  double total = 0;
  for (int64_t v = 0; v < V; ++v) {
    double st = 0, ss = 0;
    for (int64_t c = 0; c < C; ++c) {
      st += std::exp(zt[c * V + v] / tau);
      ss += std::exp(zs[c * V + v] / tau);
    }
    for (int64_t c = 0; c < C; ++c) {
      const double p = std::exp(zt[c * V + v] / tau) / st;
      const double q = std::exp(zs[c * V + v] / tau) / ss;
      total += p * std::log(p / q);
    }
  }
  return total / static_cast<double>(V);
}

}  // namespace

TEST_CASE("softened_distribution") {
  Tensor z({1, 2, 1, 1, 1});
  z[0] = 0;
  z[1] = 0;
  auto p = softened_distribution(z, 1.0);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));

  z[0] = std::log(2.0);
  z[1] = 0;
  p = softened_distribution(z, 1.0);
  CHECK(std::abs(p[0] - 2.0 / 3.0) < 1e-9);
  CHECK(std::abs(p[1] - 1.0 / 3.0) < 1e-9);

  Rng rng(5);
  Tensor big({1, 5, 1, 2, 2});
  for (int64_t i = 0; i < big.numel(); ++i) big[i] = rng.uniform(-3, 3);
  auto flat = softened_distribution(big, 1e6);
  for (int64_t i = 0; i < flat.numel(); ++i) CHECK(std::abs(flat[i] - 0.2) < 1e-4);

  CHECK_THROWS_AS(softened_distribution(z, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softened_distribution(z, -2.0), std::invalid_argument);
}

TEST_CASE("kl_div") {
  Tensor p({1, 2, 1, 1, 1}), q({1, 2, 1, 1, 1});
  p[0] = 0.5;
  p[1] = 0.5;
  q[0] = 0.75;
  q[1] = 0.25;
  CHECK(std::abs(kl_div(p, q) - 0.14384103622589045) < 1e-5);

  // KL(p||p) = 0 and KL >= 0 on random distribution pairs.
  Rng rng(7);
  for (int iter = 0; iter < 1000; ++iter) {
    Tensor a({1, 3, 1, 1, 2}), b({1, 3, 1, 1, 2});
    for (int64_t v = 0; v < 2; ++v) {
      double sa = 0, sb = 0;
      for (int64_t c = 0; c < 3; ++c) {
        a[c * 2 + v] = rng.uniform(0.05, 1.0);
        b[c * 2 + v] = rng.uniform(0.05, 1.0);
        sa += a[c * 2 + v];
        sb += b[c * 2 + v];
      }
      for (int64_t c = 0; c < 3; ++c) {
        a[c * 2 + v] /= sa;
        b[c * 2 + v] /= sb;
      }
    }
    CHECK(kl_div(a, a) == 0.0);
    CHECK(kl_div(a, b) >= -1e-12);
  }

  // Zeros in q are clamped, keeping the value finite.
  q[0] = 0.0;
  q[1] = 1.0;
  CHECK(std::isfinite(kl_div(p, q)));
  CHECK(kl_div(p, q) > 1.0);

  Tensor bad({1, 3, 1, 1, 1});
  CHECK_THROWS_AS(kl_div(p, bad), std::invalid_argument);
}

TEST_CASE("seg_loss fixtures") {
  // Perfect one-hot probabilities: the soft-Dice term is 0.
  const int64_t C = 3, V = 8;
  LabelVolume labels({1, 1, 2, 4});
  Rng rng(11);
  for (auto& l : labels.data) l = static_cast<int32_t>(rng.uniform_int(C));
  Tensor onehot({1, C, 1, 2, 4});
  for (int64_t v = 0; v < V; ++v) onehot[labels.data[static_cast<size_t>(v)] * V + v] = 1.0;
  {
    Tape t;
    Node* dice = ad::soft_dice_loss(t, t.constant(onehot), labels);
    CHECK(std::abs(ad::scalar_value(dice)) < 1e-6);
  }

  // Uniform probabilities over 2 classes: cross-entropy is ln 2 per voxel.
  {
    Tape t;
    LabelVolume l2({1, 1, 1, 4});
    l2.data = {0, 1, 0, 1};
    Node* lq = ad::log_softmax_channels(t, t.constant(Tensor({1, 2, 1, 1, 4})));
    Node* ce = ad::cross_entropy_nll(t, lq, l2);
    CHECK(ad::scalar_value(ce) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }

  // One plain gradient step on a tiny logit model reduces the loss.
  {
    Rng r2(13);
    ad::Param w("w", Tensor({C, 2, 1, 1, 1}));
    ad::Param b("b", Tensor({C}));
    for (int64_t i = 0; i < w.value.numel(); ++i) w.value[i] = r2.uniform(-0.5, 0.5);
    Tensor x({1, 2, 1, 2, 4});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = r2.uniform(-1, 1);
    auto eval = [&](bool backward) {
      w.zero_grad();
      b.zero_grad();
      Tape t;
      Node* logits = ad::conv(t, t.constant(x), t.leaf(w), t.leaf(b));
      Node* loss = seg_loss(t, logits, labels);
      if (backward) t.backward(loss);
      return ad::scalar_value(loss);
    };
    const double before = eval(true);
    for (int64_t i = 0; i < w.value.numel(); ++i) w.value[i] -= 0.05 * w.grad[i];
    for (int64_t i = 0; i < b.value.numel(); ++i) b.value[i] -= 0.05 * b.grad[i];
    CHECK(eval(false) < before);
  }

  // Label out of range is rejected.
  {
    Tape t;
    LabelVolume bad({1, 1, 2, 4});
    bad.data.assign(8, 7);
    Node* logits = t.constant(Tensor({1, C, 1, 2, 4}));
    CHECK_THROWS_AS(seg_loss(t, logits, bad), std::invalid_argument);
  }
}

TEST_CASE("hmsd_loss on the real net (decoder output mode)") {
  auto cfg = tiny_cfg(4);
  SsNet net(cfg, 3);
  Rng rng(17);
  Tensor x({1, 4, 1, 8, 8});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);

  Tape t;
  auto cache = net.forward_all_combos(t, x);
  DistillConfig dc;

  // N=4, k=3: exactly four students; teacher decode is shared when passed in.
  Node* full_logits = net.decode(t, cache.entry(ModalityCombo::full(4)));
  net.reset_counters();
  Node* h = hmsd_loss(t, net, cache, 3, dc, full_logits);
  CHECK(net.counters().decoder == 4);
  CHECK(ad::scalar_value(h) >= 0.0);

  // Without a shared teacher decode it decodes once more.
  net.reset_counters();
  hmsd_loss(t, net, cache, 3, dc);
  CHECK(net.counters().decoder == 5);

  // Brute-force oracle: mean over students of kl_div(teacher, student).
  Tensor teacher = softened_distribution(full_logits->value, 1.0);
  double expect = 0;
  for (ModalityCombo c : level_set(4, 3)) {
    Node* sl = net.decode(t, cache.entry(c));
    expect += kl_div(teacher, softened_distribution(sl->value, 1.0));
  }
  expect /= 4.0;
  CHECK(ad::scalar_value(h) == doctest::Approx(expect).epsilon(1e-9));

  CHECK_THROWS_AS(hmsd_loss(t, net, cache, 0, dc), std::invalid_argument);
  CHECK_THROWS_AS(hmsd_loss(t, net, cache, 4, dc), std::invalid_argument);
}

TEST_CASE("hmsd_loss feature mode fixtures") {
  auto cfg = tiny_cfg(4);
  SsNet net(cfg, 5);
  DistillConfig dc;
  dc.hmsd_mode = HmsdMode::feature;
  dc.temperature = 2.0;

  // All students identical to the teacher: loss 0.
  {
    Tape t;
    Tensor same({1, 2, 1, 1, 2});
    same[0] = 0.3;
    same[1] = -0.6;
    same[2] = 1.1;
    same[3] = 0.0;
    auto cache = manual_cache(t, 4, [&](ModalityCombo) { return same; });
    Node* h = hmsd_loss(t, net, cache, 3, dc);
    CHECK(std::abs(ad::scalar_value(h)) <= 1e-12);
  }

  // Hand-built 2-voxel 2-channel case: mean of 4 independent KL values.
  {
    Tape t;
    Rng rng(19);
    auto make = [&](ModalityCombo c) {
      Tensor z({1, 2, 1, 1, 2});
      Rng r(mix_seed(101, c.bits));
      for (int64_t i = 0; i < 4; ++i) z[i] = r.uniform(-1.5, 1.5);
      return z;
    };
    auto cache = manual_cache(t, 4, make);
    Node* h = hmsd_loss(t, net, cache, 3, dc);
    const Tensor zfull = make(ModalityCombo::full(4));
    double expect = 0;
    for (ModalityCombo c : level_set(4, 3)) expect += oracle_soft_kl(zfull, make(c), 2.0);
    expect /= 4.0;
    CHECK(ad::scalar_value(h) == doctest::Approx(expect).epsilon(1e-9));

    // Permutation invariance over students.
    auto students = level_set(4, 2);
    Node* a = hmsd_loss_students(t, net, cache, students, dc);
    std::reverse(students.begin(), students.end());
    Node* b = hmsd_loss_students(t, net, cache, students, dc);
    CHECK(std::abs(ad::scalar_value(a) - ad::scalar_value(b)) <= 1e-12);
  }
}

TEST_CASE("dmcd_loss") {
  auto cfg = tiny_cfg(3);
  SsNet net(cfg, 7);
  DistillConfig dc;
  dc.temperature = 2.0;

  // Degenerate paths give the empty sum.
  {
    Tape t;
    auto cache = manual_cache(t, 3, [](ModalityCombo) { return Tensor({1, 2, 1, 1, 2}); });
    DecrementPath p1{{ModalityCombo::single(0)}, PathStrategy::max_criticality};
    CHECK(ad::scalar_value(dmcd_loss(t, net, cache, p1, dc)) == 0.0);
    DecrementPath p0{{}, PathStrategy::max_criticality};
    CHECK(ad::scalar_value(dmcd_loss(t, net, cache, p0, dc)) == 0.0);
  }

  // Identical Z along the path:每 KL term is 0.
  {
    Tape t;
    Tensor same = Tensor::full({1, 2, 1, 1, 2}, 0.25);
    same[1] = -0.5;
    auto cache = manual_cache(t, 3, [&](ModalityCombo) { return same; });
    DecrementPath p{{ModalityCombo::full(3), parse_combo_label("13", 3),
                     ModalityCombo::single(0)},
                    PathStrategy::max_criticality};
    CHECK(std::abs(ad::scalar_value(dmcd_loss(t, net, cache, p, dc))) <= 1e-12);
  }

  // Hand fixture: sum of two brute-force KL terms.
  {
    Tape t;
    auto make = [&](ModalityCombo c) {
      Tensor z({1, 2, 1, 1, 2});
      Rng r(mix_seed(202, c.bits));
      for (int64_t i = 0; i < 4; ++i) z[i] = r.uniform(-2, 2);
      return z;
    };
    auto cache = manual_cache(t, 3, make);
    DecrementPath p{{ModalityCombo::full(3), parse_combo_label("23", 3),
                     parse_combo_label("3", 3)},
                    PathStrategy::max_criticality};
    const double expect =
        oracle_soft_kl(make(ModalityCombo::full(3)), make(parse_combo_label("23", 3)), 2.0) +
        oracle_soft_kl(make(parse_combo_label("23", 3)), make(parse_combo_label("3", 3)), 2.0);
    CHECK(ad::scalar_value(dmcd_loss(t, net, cache, p, dc)) ==
          doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("dmcd path additivity and temperature continuity") {
  auto cfg = tiny_cfg(5);
  SsNet net(cfg, 9);
  DistillConfig dc;

  Tape t;
  auto make = [&](ModalityCombo c) {
    Tensor z({1, 3, 1, 1, 2});
    Rng r(mix_seed(303, c.bits));
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = r.uniform(-2, 2);
    return z;
  };
  auto cache = manual_cache(t, 5, make);

  // Random chains: loss(path) = loss(prefix) + loss(suffix) at any split.
  Rng rng(23);
  for (int iter = 0; iter < 20; ++iter) {
    std::vector<std::vector<double>> feats;
    for (int m = 0; m < 5; ++m) {
      std::vector<double> f(4);
      for (auto& x : f) x = rng.uniform(-1, 1);
      feats.push_back(f);
    }
    auto path = build_path(ModalityCombo::full(5), feats, PathStrategy::random, 100 + iter);
    const double whole = ad::scalar_value(dmcd_loss(t, net, cache, path, dc));
    for (size_t split = 1; split + 1 < path.steps.size(); ++split) {
      DecrementPath prefix{{path.steps.begin(), path.steps.begin() + split + 1}, path.strategy};
      DecrementPath suffix{{path.steps.begin() + split, path.steps.end()}, path.strategy};
      const double sum = ad::scalar_value(dmcd_loss(t, net, cache, prefix, dc)) +
                         ad::scalar_value(dmcd_loss(t, net, cache, suffix, dc));
      CHECK(std::abs(whole - sum) <= 1e-12);
    }
  }

  // Continuity in tau on [0.5, 10]: no jumps above 1e-3 on a fine grid.
  auto make_small = [&](ModalityCombo c) {
    Tensor z({1, 3, 1, 1, 2});
    Rng r(mix_seed(305, c.bits));
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = r.uniform(-0.3, 0.3);
    return z;
  };
  auto cache_small = manual_cache(t, 5, make_small);
  DecrementPath p{{ModalityCombo::full(5), parse_combo_label("1245", 5),
                   parse_combo_label("125", 5), parse_combo_label("15", 5),
                   parse_combo_label("5", 5)},
                  PathStrategy::max_criticality};
  double prev = 0;
  bool first = true;
  for (double tau = 0.5; tau <= 10.0 + 1e-9; tau += 0.001) {
    DistillConfig c2;
    c2.temperature = tau;
    const double v = ad::scalar_value(dmcd_loss(t, net, cache_small, p, c2));
    if (!first) CHECK(std::abs(v - prev) <= 1e-3);
    prev = v;
    first = false;
  }
}

TEST_CASE("dmcd per-case variant matches the batch path when paths agree") {
  auto cfg = tiny_cfg(3);
  SsNet net(cfg, 31);
  DistillConfig dc;
  Tape t;
  auto make = [&](ModalityCombo c) {
    Tensor z({2, 2, 1, 1, 2});
    Rng r(mix_seed(404, c.bits));
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = r.uniform(-2, 2);
    return z;
  };
  auto cache = manual_cache(t, 3, make);
  DecrementPath p{{ModalityCombo::full(3), parse_combo_label("13", 3),
                   parse_combo_label("1", 3)},
                  PathStrategy::max_criticality};
  const double batch = ad::scalar_value(dmcd_loss(t, net, cache, p, dc));
  const double per_case = ad::scalar_value(dmcd_loss_per_case(t, net, cache, {p, p}, dc));
  CHECK(per_case == doctest::Approx(batch).epsilon(1e-9));
}

TEST_CASE("total_loss") {
  DistillConfig dc;
  Tape t;
  Node* seg = t.constant(Tensor::scalar(1.0));
  Node* h = t.constant(Tensor::scalar(2.0));
  Node* d = t.constant(Tensor::scalar(3.0));

  LossBreakdown bd;
  Node* total = total_loss(t, seg, h, d, dc, &bd);
  CHECK(ad::scalar_value(total) == doctest::Approx(6.0));
  CHECK(bd.seg == 1.0);
  CHECK(bd.hmsd == 2.0);
  CHECK(bd.dmcd == 3.0);
  CHECK(bd.total == 6.0);

  DistillConfig off;
  off.hmsd_weight = 0;
  off.dmcd_weight = 0;
  total = total_loss(t, seg, h, d, off, &bd);
  CHECK(ad::scalar_value(total) == doctest::Approx(1.0));

  Node* nan = t.constant(Tensor::scalar(std::nan("")));
  CHECK_THROWS_WITH_AS(total_loss(t, seg, h, nan, dc, &bd), "non-finite dmcd loss",
                       TrainingAbort);
}
