#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "ccsd/kernels.hpp"

// OpenMP backend. Work is split so each output slab has exactly one writer
// and per-element accumulation order is fixed; results match bit-for-bit
// across thread counts. Convolutions run over a zero-padded copy of the
// source so the row loops are branch-free, with the kx taps fused per row.

namespace ccsd::kern::omp {

namespace {

// Zero-padded copy [B,C,D+2pd,H+2ph,W+2pw] of in [B,C,D,H,W].
template <typename T>
std::vector<T> pad_volume(const T* in, int64_t B, int64_t C, int64_t D, int64_t H, int64_t W,
                          int pd, int ph, int pw) {
  const int64_t PD = D + 2 * pd, PH = H + 2 * ph, PW = W + 2 * pw;
  std::vector<T> buf(static_cast<size_t>(B * C * PD * PH * PW), T{0});
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t z = 0; z < D; ++z)
      for (int64_t y = 0; y < H; ++y)
        std::memcpy(&buf[((bc * PD + z + pd) * PH + y + ph) * PW + pw],
                    &in[(bc * D + z) * H * W + y * W], sizeof(T) * static_cast<size_t>(W));
  return buf;
}

// One padded source row accumulated into one destination row.
template <typename T>
inline void row_taps(T* dst, const T* src, const T* w, int kw, int64_t n) {
  if (kw == 3) {
    const T w0 = w[0], w1 = w[1], w2 = w[2];
    for (int64_t x = 0; x < n; ++x) dst[x] += w0 * src[x] + w1 * src[x + 1] + w2 * src[x + 2];
  } else if (kw == 1) {
    const T w0 = w[0];
    for (int64_t x = 0; x < n; ++x) dst[x] += w0 * src[x];
  } else {
    for (int kx = 0; kx < kw; ++kx) {
      const T wv = w[kx];
      const T* s = src + kx;
      for (int64_t x = 0; x < n; ++x) dst[x] += wv * s[x];
    }
  }
}

}  // namespace

template <typename T>
void conv_forward(const T* in, const T* w, const T* bias, T* out, const ConvDims& d) {
  if (d.KD == 1 && d.KH == 1 && d.KW == 1) {
    // Pointwise conv: a channel-mixing pass over contiguous slabs.
    const int64_t V = d.D * d.H * d.W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.B; ++b)
      for (int64_t oc = 0; oc < d.OC; ++oc) {
        T* o = out + (b * d.OC + oc) * V;
        const T bv = bias ? bias[oc] : T{0};
        for (int64_t v = 0; v < V; ++v) o[v] = bv;
        for (int64_t ic = 0; ic < d.IC; ++ic) {
          const T wv = w[oc * d.IC + ic];
          const T* src = in + (b * d.IC + ic) * V;
          for (int64_t v = 0; v < V; ++v) o[v] += wv * src[v];
        }
      }
    return;
  }
  const int pd = (d.KD - 1) / 2, ph = (d.KH - 1) / 2, pw = (d.KW - 1) / 2;
  const int64_t PD = d.D + 2 * pd, PH = d.H + 2 * ph, PW = d.W + 2 * pw;
  auto padded = pad_volume(in, d.B, d.IC, d.D, d.H, d.W, pd, ph, pw);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t oc = 0; oc < d.OC; ++oc)
      for (int64_t z = 0; z < d.D; ++z)
        for (int64_t y = 0; y < d.H; ++y) {
          T* orow = out + (((b * d.OC + oc) * d.D + z) * d.H + y) * d.W;
          const T bv = bias ? bias[oc] : T{0};
          for (int64_t x = 0; x < d.W; ++x) orow[x] = bv;
          for (int64_t ic = 0; ic < d.IC; ++ic)
            for (int kz = 0; kz < d.KD; ++kz)
              for (int ky = 0; ky < d.KH; ++ky)
                row_taps(orow, &padded[(((b * d.IC + ic) * PD + z + kz) * PH + y + ky) * PW],
                         &w[((((oc * d.IC + ic) * d.KD + kz) * d.KH + ky)) * d.KW], d.KW, d.W);
        }
}

template <typename T>
void conv_backward_input(const T* gout, const T* w, T* gin, const ConvDims& d) {
  if (d.KD == 1 && d.KH == 1 && d.KW == 1) {
    const int64_t V = d.D * d.H * d.W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.B; ++b)
      for (int64_t ic = 0; ic < d.IC; ++ic) {
        T* gi = gin + (b * d.IC + ic) * V;
        for (int64_t oc = 0; oc < d.OC; ++oc) {
          const T wv = w[oc * d.IC + ic];
          const T* g = gout + (b * d.OC + oc) * V;
          for (int64_t v = 0; v < V; ++v) gi[v] += wv * g[v];
        }
      }
    return;
  }
  // Transposed conv: correlate the padded upstream gradient with the
  // kernel flipped along every axis.
  const int pd = (d.KD - 1) / 2, ph = (d.KH - 1) / 2, pw = (d.KW - 1) / 2;
  const int64_t PD = d.D + 2 * pd, PH = d.H + 2 * ph, PW = d.W + 2 * pw;
  auto padded = pad_volume(gout, d.B, d.OC, d.D, d.H, d.W, pd, ph, pw);
  std::vector<T> wflip(static_cast<size_t>(d.OC * d.IC * d.KD * d.KH * d.KW));
  for (int64_t oc = 0; oc < d.OC; ++oc)
    for (int64_t ic = 0; ic < d.IC; ++ic)
      for (int kz = 0; kz < d.KD; ++kz)
        for (int ky = 0; ky < d.KH; ++ky)
          for (int kx = 0; kx < d.KW; ++kx)
            wflip[(((oc * d.IC + ic) * d.KD + kz) * d.KH + ky) * d.KW + kx] =
                w[(((oc * d.IC + ic) * d.KD + (d.KD - 1 - kz)) * d.KH + (d.KH - 1 - ky)) * d.KW +
                  (d.KW - 1 - kx)];
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t ic = 0; ic < d.IC; ++ic)
      for (int64_t z = 0; z < d.D; ++z)
        for (int64_t y = 0; y < d.H; ++y) {
          T* grow = gin + (((b * d.IC + ic) * d.D + z) * d.H + y) * d.W;
          for (int64_t oc = 0; oc < d.OC; ++oc)
            for (int kz = 0; kz < d.KD; ++kz)
              for (int ky = 0; ky < d.KH; ++ky)
                row_taps(grow, &padded[(((b * d.OC + oc) * PD + z + kz) * PH + y + ky) * PW],
                         &wflip[((((oc * d.IC + ic) * d.KD + kz) * d.KH + ky)) * d.KW], d.KW,
                         d.W);
        }
}

template <typename T>
void conv_backward_params(const T* gout, const T* in, T* gw, T* gbias, const ConvDims& d) {
  const int pd = (d.KD - 1) / 2, ph = (d.KH - 1) / 2, pw = (d.KW - 1) / 2;
  const int64_t PD = d.D + 2 * pd, PH = d.H + 2 * ph, PW = d.W + 2 * pw;
  auto padded = pad_volume(in, d.B, d.IC, d.D, d.H, d.W, pd, ph, pw);
  const int ktaps = d.KD * d.KH * d.KW;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t oc = 0; oc < d.OC; ++oc)
    for (int64_t ic = 0; ic < d.IC; ++ic) {
      std::vector<T> acc(static_cast<size_t>(ktaps), T{0});
      T bacc = 0;
      for (int64_t b = 0; b < d.B; ++b)
        for (int64_t z = 0; z < d.D; ++z)
          for (int64_t y = 0; y < d.H; ++y) {
            const T* grow = gout + (((b * d.OC + oc) * d.D + z) * d.H + y) * d.W;
            if (gbias && ic == 0)
              for (int64_t x = 0; x < d.W; ++x) bacc += grow[x];
            for (int kz = 0; kz < d.KD; ++kz)
              for (int ky = 0; ky < d.KH; ++ky) {
                const T* irow = &padded[(((b * d.IC + ic) * PD + z + kz) * PH + y + ky) * PW];
                T* a = &acc[static_cast<size_t>((kz * d.KH + ky) * d.KW)];
                if (d.KW == 3) {
                  T a0 = 0, a1 = 0, a2 = 0;
                  for (int64_t x = 0; x < d.W; ++x) {
                    const T g = grow[x];
                    a0 += g * irow[x];
                    a1 += g * irow[x + 1];
                    a2 += g * irow[x + 2];
                  }
                  a[0] += a0;
                  a[1] += a1;
                  a[2] += a2;
                } else {
                  for (int kx = 0; kx < d.KW; ++kx) {
                    T s = 0;
                    for (int64_t x = 0; x < d.W; ++x) s += grow[x] * irow[x + kx];
                    a[kx] += s;
                  }
                }
              }
          }
      T* dst = gw + (oc * d.IC + ic) * ktaps;
      for (int t = 0; t < ktaps; ++t) dst[t] += acc[static_cast<size_t>(t)];
      if (gbias && ic == 0) gbias[oc] += bacc;
    }
}

template <typename T>
void avgpool_forward(const T* in, T* out, int64_t B, int64_t C, int64_t D, int64_t H, int64_t W,
                     int fd, int fh, int fw) {
  const int64_t OD = D / fd, OH = H / fh, OW = W / fw;
  const T inv = T(1) / static_cast<T>(fd * fh * fw);
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t z = 0; z < OD; ++z)
      for (int64_t y = 0; y < OH; ++y)
        for (int64_t x = 0; x < OW; ++x) {
          T acc = 0;
          for (int dz = 0; dz < fd; ++dz)
            for (int dy = 0; dy < fh; ++dy)
              for (int dx = 0; dx < fw; ++dx)
                acc += in[((bc * D + z * fd + dz) * H + y * fh + dy) * W + x * fw + dx];
          out[((bc * OD + z) * OH + y) * OW + x] = acc * inv;
        }
}

template <typename T>
void avgpool_backward(const T* gout, T* gin, int64_t B, int64_t C, int64_t D, int64_t H,
                      int64_t W, int fd, int fh, int fw) {
  const int64_t OD = D / fd, OH = H / fh, OW = W / fw;
  const T inv = T(1) / static_cast<T>(fd * fh * fw);
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t z = 0; z < OD; ++z)
      for (int64_t y = 0; y < OH; ++y)
        for (int64_t x = 0; x < OW; ++x) {
          T g = gout[((bc * OD + z) * OH + y) * OW + x] * inv;
          for (int dz = 0; dz < fd; ++dz)
            for (int dy = 0; dy < fh; ++dy)
              for (int dx = 0; dx < fw; ++dx)
                gin[((bc * D + z * fd + dz) * H + y * fh + dy) * W + x * fw + dx] += g;
        }
}

template <typename T>
void upsample_forward(const T* in, T* out, int64_t B, int64_t C, int64_t D, int64_t H, int64_t W,
                      int fd, int fh, int fw) {
  const int64_t OD = D * fd, OH = H * fh, OW = W * fw;
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t z = 0; z < OD; ++z)
      for (int64_t y = 0; y < OH; ++y) {
        T* orow = out + ((bc * OD + z) * OH + y) * OW;
        const T* irow = in + ((bc * D + z / fd) * H + y / fh) * W;
        for (int64_t x = 0; x < OW; ++x) orow[x] = irow[x / fw];
      }
}

template <typename T>
void upsample_backward(const T* gout, T* gin, int64_t B, int64_t C, int64_t D, int64_t H,
                       int64_t W, int fd, int fh, int fw) {
  const int64_t OD = D * fd, OH = H * fh, OW = W * fw;
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t z = 0; z < D; ++z)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          T acc = 0;
          for (int dz = 0; dz < fd; ++dz)
            for (int dy = 0; dy < fh; ++dy)
              for (int dx = 0; dx < fw; ++dx)
                acc += gout[((bc * OD + z * fd + dz) * OH + y * fh + dy) * OW + x * fw + dx];
          gin[((bc * D + z) * H + y) * W + x] += acc;
        }
}

template <typename T>
void instnorm_forward(const T* in, const T* gamma, const T* beta, T* out, T* mean, T* invstd,
                      int64_t B, int64_t C, int64_t V, T eps) {
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const int64_t c = bc % C;
    const T* x = in + bc * V;
    T m = 0;
    for (int64_t v = 0; v < V; ++v) m += x[v];
    m /= static_cast<T>(V);
    T var = 0;
    for (int64_t v = 0; v < V; ++v) var += (x[v] - m) * (x[v] - m);
    var /= static_cast<T>(V);
    const T is = T(1) / std::sqrt(var + eps);
    mean[bc] = m;
    invstd[bc] = is;
    const T g = gamma[c], bt = beta[c];
    T* o = out + bc * V;
    for (int64_t v = 0; v < V; ++v) o[v] = g * ((x[v] - m) * is) + bt;
  }
}

template <typename T>
void instnorm_backward(const T* gout, const T* in, const T* gamma, const T* mean, const T* invstd,
                       T* gin, T* ggamma, T* gbeta, int64_t B, int64_t C, int64_t V) {
  // Parallel over channels: the per-channel affine grads sum over the batch
  // serially, so totals do not depend on the thread count.
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < C; ++c) {
    T gg = 0, gb = 0;
    for (int64_t b = 0; b < B; ++b) {
      const int64_t bc = b * C + c;
      const T* x = in + bc * V;
      const T* gy = gout + bc * V;
      const T m = mean[bc], is = invstd[bc];
      T s1 = 0, s2 = 0;
      for (int64_t v = 0; v < V; ++v) {
        s1 += gy[v];
        s2 += gy[v] * ((x[v] - m) * is);
      }
      gg += s2;
      gb += s1;
      const T invV = T(1) / static_cast<T>(V);
      const T k = gamma[c] * is;
      T* gx = gin + bc * V;
      for (int64_t v = 0; v < V; ++v)
        gx[v] += k * (gy[v] - s1 * invV - ((x[v] - m) * is) * s2 * invV);
    }
    if (ggamma) ggamma[c] += gg;
    if (gbeta) gbeta[c] += gb;
  }
}

template <typename T>
void leaky_relu_forward(const T* in, T* out, int64_t n, T alpha) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0 ? in[i] : alpha * in[i];
}

template <typename T>
void leaky_relu_backward(const T* gout, const T* in, T* gin, int64_t n, T alpha) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) gin[i] += in[i] > 0 ? gout[i] : alpha * gout[i];
}

template <typename T>
void softmax_channel_forward(const T* in, T* out, int64_t B, int64_t C, int64_t V, T inv_temp) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < B * V; ++i) {
    const int64_t b = i / V, v = i % V;
    const T* x = in + b * C * V + v;
    T* o = out + b * C * V + v;
    T m = std::numeric_limits<T>::lowest();
    for (int64_t c = 0; c < C; ++c) m = std::max(m, inv_temp * x[c * V]);
    T sum = 0;
    for (int64_t c = 0; c < C; ++c) {
      T e = std::exp(inv_temp * x[c * V] - m);
      o[c * V] = e;
      sum += e;
    }
    for (int64_t c = 0; c < C; ++c) o[c * V] /= sum;
  }
}

template <typename T>
void softmax_channel_backward(const T* gout, const T* probs, T* gin, int64_t B, int64_t C,
                              int64_t V, T inv_temp) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < B * V; ++i) {
    const int64_t b = i / V, v = i % V;
    const T* g = gout + b * C * V + v;
    const T* p = probs + b * C * V + v;
    T dot = 0;
    for (int64_t c = 0; c < C; ++c) dot += g[c * V] * p[c * V];
    T* gi = gin + b * C * V + v;
    for (int64_t c = 0; c < C; ++c) gi[c * V] += inv_temp * p[c * V] * (g[c * V] - dot);
  }
}

template <typename T>
void log_softmax_channel_forward(const T* in, T* out, int64_t B, int64_t C, int64_t V,
                                 T inv_temp) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < B * V; ++i) {
    const int64_t b = i / V, v = i % V;
    const T* x = in + b * C * V + v;
    T* o = out + b * C * V + v;
    T m = std::numeric_limits<T>::lowest();
    for (int64_t c = 0; c < C; ++c) m = std::max(m, inv_temp * x[c * V]);
    T sum = 0;
    for (int64_t c = 0; c < C; ++c) sum += std::exp(inv_temp * x[c * V] - m);
    const T lse = m + std::log(sum);
    for (int64_t c = 0; c < C; ++c) o[c * V] = inv_temp * x[c * V] - lse;
  }
}

template <typename T>
void log_softmax_channel_backward(const T* gout, const T* log_probs, T* gin, int64_t B, int64_t C,
                                  int64_t V, T inv_temp) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < B * V; ++i) {
    const int64_t b = i / V, v = i % V;
    const T* g = gout + b * C * V + v;
    const T* lp = log_probs + b * C * V + v;
    T gsum = 0;
    for (int64_t c = 0; c < C; ++c) gsum += g[c * V];
    T* gi = gin + b * C * V + v;
    for (int64_t c = 0; c < C; ++c) gi[c * V] += inv_temp * (g[c * V] - std::exp(lp[c * V]) * gsum);
  }
}

#define CCSD_INSTANTIATE(T)                                                                        \
  template void conv_forward<T>(const T*, const T*, const T*, T*, const ConvDims&);                \
  template void conv_backward_input<T>(const T*, const T*, T*, const ConvDims&);                   \
  template void conv_backward_params<T>(const T*, const T*, T*, T*, const ConvDims&);              \
  template void avgpool_forward<T>(const T*, T*, int64_t, int64_t, int64_t, int64_t, int64_t,     \
                                   int, int, int);                                                 \
  template void avgpool_backward<T>(const T*, T*, int64_t, int64_t, int64_t, int64_t, int64_t,    \
                                    int, int, int);                                                \
  template void upsample_forward<T>(const T*, T*, int64_t, int64_t, int64_t, int64_t, int64_t,    \
                                    int, int, int);                                                \
  template void upsample_backward<T>(const T*, T*, int64_t, int64_t, int64_t, int64_t, int64_t,   \
                                     int, int, int);                                               \
  template void instnorm_forward<T>(const T*, const T*, const T*, T*, T*, T*, int64_t, int64_t,   \
                                    int64_t, T);                                                   \
  template void instnorm_backward<T>(const T*, const T*, const T*, const T*, const T*, T*, T*,    \
                                     T*, int64_t, int64_t, int64_t);                               \
  template void leaky_relu_forward<T>(const T*, T*, int64_t, T);                                   \
  template void leaky_relu_backward<T>(const T*, const T*, T*, int64_t, T);                        \
  template void softmax_channel_forward<T>(const T*, T*, int64_t, int64_t, int64_t, T);            \
  template void softmax_channel_backward<T>(const T*, const T*, T*, int64_t, int64_t, int64_t,    \
                                            T);                                                    \
  template void log_softmax_channel_forward<T>(const T*, T*, int64_t, int64_t, int64_t, T);        \
  template void log_softmax_channel_backward<T>(const T*, const T*, T*, int64_t, int64_t,         \
                                                int64_t, T);

CCSD_INSTANTIATE(float)
CCSD_INSTANTIATE(double)
#undef CCSD_INSTANTIATE

}  // namespace ccsd::kern::omp
