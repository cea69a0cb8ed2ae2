// Times the serial reference kernels against the OpenMP kernels at training
// shapes and reports the speedup plus the largest elementwise deviation.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <omp.h>

#include "ccsd/kernels.hpp"
#include "ccsd/rng.hpp"

using namespace ccsd;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void report(const std::string& name, double ts, double to, double diff, double work) {
  std::printf("%-28s serial %8.2f ms   omp %8.2f ms   speedup %5.2fx", name.c_str(), ts * 1e3,
              to * 1e3, ts / to);
  if (work > 0) std::printf("   %6.2f GMAC/s", work / to / 1e9);
  std::printf("   max|diff| %.2e\n", diff);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  Rng rng(7);

  {  // conv 3x3x3, encoder mid-level shape
    kern::ConvDims d{4, 8, 16, 16, 16, 16, 3, 3, 3};
    auto in = random_vec(static_cast<size_t>(d.B * d.IC * d.D * d.H * d.W), rng);
    auto w = random_vec(static_cast<size_t>(d.OC * d.IC * 27), rng);
    auto bias = random_vec(static_cast<size_t>(d.OC), rng);
    std::vector<double> o1(static_cast<size_t>(d.B * d.OC * d.D * d.H * d.W)), o2(o1.size());
    double work = static_cast<double>(d.B * d.OC * d.IC * 27 * d.D * d.H * d.W);
    double ts = time_of([&] { kern::serial::conv_forward(in.data(), w.data(), bias.data(), o1.data(), d); }, 2);
    double to = time_of([&] { kern::omp::conv_forward(in.data(), w.data(), bias.data(), o2.data(), d); }, 10);
    report("conv3 fwd 16^3 8->16 B4", ts, to, max_diff(o1, o2), work);

    std::vector<double> g1(o1.size());
    for (auto& x : g1) x = rng.uniform(-1.0, 1.0);
    std::vector<double> gi1(in.size()), gi2(in.size());
    ts = time_of([&] { std::fill(gi1.begin(), gi1.end(), 0.0); kern::serial::conv_backward_input(g1.data(), w.data(), gi1.data(), d); }, 2);
    to = time_of([&] { std::fill(gi2.begin(), gi2.end(), 0.0); kern::omp::conv_backward_input(g1.data(), w.data(), gi2.data(), d); }, 10);
    report("conv3 bwd-in", ts, to, max_diff(gi1, gi2), work);

    std::vector<double> gw1(w.size()), gw2(w.size()), gb1(bias.size()), gb2(bias.size());
    ts = time_of([&] { std::fill(gw1.begin(), gw1.end(), 0.0); std::fill(gb1.begin(), gb1.end(), 0.0); kern::serial::conv_backward_params(g1.data(), in.data(), gw1.data(), gb1.data(), d); }, 2);
    to = time_of([&] { std::fill(gw2.begin(), gw2.end(), 0.0); std::fill(gb2.begin(), gb2.end(), 0.0); kern::omp::conv_backward_params(g1.data(), in.data(), gw2.data(), gb2.data(), d); }, 10);
    report("conv3 bwd-params", ts, to, std::max(max_diff(gw1, gw2), max_diff(gb1, gb2)), work);
  }

  {  // pointwise conv at the fusion stage shape
    kern::ConvDims d{4, 64, 32, 8, 8, 8, 1, 1, 1};
    auto in = random_vec(static_cast<size_t>(d.B * d.IC * 512), rng);
    auto w = random_vec(static_cast<size_t>(d.OC * d.IC), rng);
    auto bias = random_vec(static_cast<size_t>(d.OC), rng);
    std::vector<double> o1(static_cast<size_t>(d.B * d.OC * 512)), o2(o1.size());
    double work = static_cast<double>(d.B * d.OC * d.IC * 512);
    double ts = time_of([&] { kern::serial::conv_forward(in.data(), w.data(), bias.data(), o1.data(), d); }, 5);
    double to = time_of([&] { kern::omp::conv_forward(in.data(), w.data(), bias.data(), o2.data(), d); }, 20);
    report("conv1 fwd 8^3 64->32 B4", ts, to, max_diff(o1, o2), work);
  }

  {  // instance norm at the widest activation
    const int64_t B = 4, C = 8, V = 32 * 32 * 32;
    auto in = random_vec(static_cast<size_t>(B * C * V), rng);
    auto gamma = random_vec(static_cast<size_t>(C), rng);
    auto beta = random_vec(static_cast<size_t>(C), rng);
    std::vector<double> o1(in.size()), o2(in.size()), m1(static_cast<size_t>(B * C)),
        m2(m1.size()), s1(m1.size()), s2(m1.size());
    double ts = time_of([&] { kern::serial::instnorm_forward(in.data(), gamma.data(), beta.data(), o1.data(), m1.data(), s1.data(), B, C, V, 1e-5); }, 5);
    double to = time_of([&] { kern::omp::instnorm_forward(in.data(), gamma.data(), beta.data(), o2.data(), m2.data(), s2.data(), B, C, V, 1e-5); }, 20);
    report("instnorm fwd 32^3 c8 B4", ts, to, max_diff(o1, o2), 0);
  }

  {  // pooling and upsampling
    const int64_t B = 4, C = 8, D = 32, H = 32, W = 32;
    auto in = random_vec(static_cast<size_t>(B * C * D * H * W), rng);
    std::vector<double> o1(in.size() / 8), o2(o1.size());
    double ts = time_of([&] { kern::serial::avgpool_forward(in.data(), o1.data(), B, C, D, H, W, 2, 2, 2); }, 5);
    double to = time_of([&] { kern::omp::avgpool_forward(in.data(), o2.data(), B, C, D, H, W, 2, 2, 2); }, 20);
    report("avgpool fwd 32^3 c8 B4", ts, to, max_diff(o1, o2), 0);

    std::vector<double> u1(in.size() * 8), u2(u1.size());
    ts = time_of([&] { kern::serial::upsample_forward(in.data(), u1.data(), B, C, D, H, W, 2, 2, 2); }, 2);
    to = time_of([&] { kern::omp::upsample_forward(in.data(), u2.data(), B, C, D, H, W, 2, 2, 2); }, 10);
    report("upsample fwd 32^3 c8 B4", ts, to, max_diff(u1, u2), 0);
  }

  {  // channel softmax over class logits
    const int64_t B = 4, C = 4, V = 32 * 32 * 32;
    auto in = random_vec(static_cast<size_t>(B * C * V), rng);
    std::vector<double> o1(in.size()), o2(in.size());
    double ts = time_of([&] { kern::serial::softmax_channel_forward(in.data(), o1.data(), B, C, V, 1.0); }, 5);
    double to = time_of([&] { kern::omp::softmax_channel_forward(in.data(), o2.data(), B, C, V, 1.0); }, 20);
    report("softmax fwd 32^3 c4 B4", ts, to, max_diff(o1, o2), 0);
  }

  return 0;
}
