#include <algorithm>
#include <cmath>
#include <limits>

#include "ccsd/kernels.hpp"

// Reference backend: textbook loops, no threading, no padded scratch buffers.
// Kept slow and obvious; the test suite holds the OpenMP backend to it.

namespace ccsd::kern::serial {

template <typename T>
void conv_forward(const T* in, const T* w, const T* bias, T* out, const ConvDims& d) {
  const int pd = (d.KD - 1) / 2, ph = (d.KH - 1) / 2, pw = (d.KW - 1) / 2;
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t oc = 0; oc < d.OC; ++oc)
      for (int64_t z = 0; z < d.D; ++z)
        for (int64_t y = 0; y < d.H; ++y)
          for (int64_t x = 0; x < d.W; ++x) {
            T acc = bias ? bias[oc] : T{0};
            for (int64_t ic = 0; ic < d.IC; ++ic)
              for (int kz = 0; kz < d.KD; ++kz)
                for (int ky = 0; ky < d.KH; ++ky)
                  for (int kx = 0; kx < d.KW; ++kx) {
                    int64_t zi = z + kz - pd, yi = y + ky - ph, xi = x + kx - pw;
                    if (zi < 0 || zi >= d.D || yi < 0 || yi >= d.H || xi < 0 || xi >= d.W)
                      continue;
                    acc += w[(((oc * d.IC + ic) * d.KD + kz) * d.KH + ky) * d.KW + kx] *
                           in[(((b * d.IC + ic) * d.D + zi) * d.H + yi) * d.W + xi];
                  }
            out[(((b * d.OC + oc) * d.D + z) * d.H + y) * d.W + x] = acc;
          }
}

template <typename T>
void conv_backward_input(const T* gout, const T* w, T* gin, const ConvDims& d) {
  const int pd = (d.KD - 1) / 2, ph = (d.KH - 1) / 2, pw = (d.KW - 1) / 2;
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t oc = 0; oc < d.OC; ++oc)
      for (int64_t z = 0; z < d.D; ++z)
        for (int64_t y = 0; y < d.H; ++y)
          for (int64_t x = 0; x < d.W; ++x) {
            T g = gout[(((b * d.OC + oc) * d.D + z) * d.H + y) * d.W + x];
            for (int64_t ic = 0; ic < d.IC; ++ic)
              for (int kz = 0; kz < d.KD; ++kz)
                for (int ky = 0; ky < d.KH; ++ky)
                  for (int kx = 0; kx < d.KW; ++kx) {
                    int64_t zi = z + kz - pd, yi = y + ky - ph, xi = x + kx - pw;
                    if (zi < 0 || zi >= d.D || yi < 0 || yi >= d.H || xi < 0 || xi >= d.W)
                      continue;
                    gin[(((b * d.IC + ic) * d.D + zi) * d.H + yi) * d.W + xi] +=
                        g * w[(((oc * d.IC + ic) * d.KD + kz) * d.KH + ky) * d.KW + kx];
                  }
          }
}

template <typename T>
void conv_backward_params(const T* gout, const T* in, T* gw, T* gbias, const ConvDims& d) {
  const int pd = (d.KD - 1) / 2, ph = (d.KH - 1) / 2, pw = (d.KW - 1) / 2;
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t oc = 0; oc < d.OC; ++oc)
      for (int64_t z = 0; z < d.D; ++z)
        for (int64_t y = 0; y < d.H; ++y)
          for (int64_t x = 0; x < d.W; ++x) {
            T g = gout[(((b * d.OC + oc) * d.D + z) * d.H + y) * d.W + x];
            if (gbias) gbias[oc] += g;
            for (int64_t ic = 0; ic < d.IC; ++ic)
              for (int kz = 0; kz < d.KD; ++kz)
                for (int ky = 0; ky < d.KH; ++ky)
                  for (int kx = 0; kx < d.KW; ++kx) {
                    int64_t zi = z + kz - pd, yi = y + ky - ph, xi = x + kx - pw;
                    if (zi < 0 || zi >= d.D || yi < 0 || yi >= d.H || xi < 0 || xi >= d.W)
                      continue;
                    gw[(((oc * d.IC + ic) * d.KD + kz) * d.KH + ky) * d.KW + kx] +=
                        g * in[(((b * d.IC + ic) * d.D + zi) * d.H + yi) * d.W + xi];
                  }
          }
}

template <typename T>
void avgpool_forward(const T* in, T* out, int64_t B, int64_t C, int64_t D, int64_t H, int64_t W,
                     int fd, int fh, int fw) {
  const int64_t OD = D / fd, OH = H / fh, OW = W / fw;
  const T inv = T(1) / static_cast<T>(fd * fh * fw);
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
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t z = 0; z < OD; ++z)
      for (int64_t y = 0; y < OH; ++y)
        for (int64_t x = 0; x < OW; ++x)
          out[((bc * OD + z) * OH + y) * OW + x] =
              in[((bc * D + z / fd) * H + y / fh) * W + x / fw];
}

template <typename T>
void upsample_backward(const T* gout, T* gin, int64_t B, int64_t C, int64_t D, int64_t H,
                       int64_t W, int fd, int fh, int fw) {
  const int64_t OD = D * fd, OH = H * fh, OW = W * fw;
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t z = 0; z < OD; ++z)
      for (int64_t y = 0; y < OH; ++y)
        for (int64_t x = 0; x < OW; ++x)
          gin[((bc * D + z / fd) * H + y / fh) * W + x / fw] +=
              gout[((bc * OD + z) * OH + y) * OW + x];
}

template <typename T>
void instnorm_forward(const T* in, const T* gamma, const T* beta, T* out, T* mean, T* invstd,
                      int64_t B, int64_t C, int64_t V, T eps) {
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* x = in + (b * C + c) * V;
      T m = 0;
      for (int64_t v = 0; v < V; ++v) m += x[v];
      m /= static_cast<T>(V);
      T var = 0;
      for (int64_t v = 0; v < V; ++v) var += (x[v] - m) * (x[v] - m);
      var /= static_cast<T>(V);
      T is = T(1) / std::sqrt(var + eps);
      mean[b * C + c] = m;
      invstd[b * C + c] = is;
      T* o = out + (b * C + c) * V;
      for (int64_t v = 0; v < V; ++v) o[v] = gamma[c] * ((x[v] - m) * is) + beta[c];
    }
}

template <typename T>
void instnorm_backward(const T* gout, const T* in, const T* gamma, const T* mean, const T* invstd,
                       T* gin, T* ggamma, T* gbeta, int64_t B, int64_t C, int64_t V) {
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* x = in + (b * C + c) * V;
      const T* gy = gout + (b * C + c) * V;
      T m = mean[b * C + c], is = invstd[b * C + c];
      T s1 = 0, s2 = 0;
      for (int64_t v = 0; v < V; ++v) {
        T xh = (x[v] - m) * is;
        s1 += gy[v];
        s2 += gy[v] * xh;
      }
      if (ggamma) ggamma[c] += s2;
      if (gbeta) gbeta[c] += s1;
      T invV = T(1) / static_cast<T>(V);
      T* gx = gin + (b * C + c) * V;
      for (int64_t v = 0; v < V; ++v) {
        T xh = (x[v] - m) * is;
        gx[v] += gamma[c] * is * (gy[v] - s1 * invV - xh * s2 * invV);
      }
    }
}

template <typename T>
void leaky_relu_forward(const T* in, T* out, int64_t n, T alpha) {
  for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0 ? in[i] : alpha * in[i];
}

template <typename T>
void leaky_relu_backward(const T* gout, const T* in, T* gin, int64_t n, T alpha) {
  for (int64_t i = 0; i < n; ++i) gin[i] += in[i] > 0 ? gout[i] : alpha * gout[i];
}

template <typename T>
void softmax_channel_forward(const T* in, T* out, int64_t B, int64_t C, int64_t V, T inv_temp) {
  for (int64_t b = 0; b < B; ++b)
    for (int64_t v = 0; v < V; ++v) {
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
  for (int64_t b = 0; b < B; ++b)
    for (int64_t v = 0; v < V; ++v) {
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
  for (int64_t b = 0; b < B; ++b)
    for (int64_t v = 0; v < V; ++v) {
      const T* x = in + b * C * V + v;
      T* o = out + b * C * V + v;
      T m = std::numeric_limits<T>::lowest();
      for (int64_t c = 0; c < C; ++c) m = std::max(m, inv_temp * x[c * V]);
      T sum = 0;
      for (int64_t c = 0; c < C; ++c) sum += std::exp(inv_temp * x[c * V] - m);
      T lse = m + std::log(sum);
      for (int64_t c = 0; c < C; ++c) o[c * V] = inv_temp * x[c * V] - lse;
    }
}

template <typename T>
void log_softmax_channel_backward(const T* gout, const T* log_probs, T* gin, int64_t B, int64_t C,
                                  int64_t V, T inv_temp) {
  for (int64_t b = 0; b < B; ++b)
    for (int64_t v = 0; v < V; ++v) {
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

}  // namespace ccsd::kern::serial
