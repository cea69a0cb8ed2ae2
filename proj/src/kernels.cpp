#include <atomic>

#include "ccsd/kernels.hpp"

namespace ccsd::kern {

namespace {
std::atomic<Backend> g_backend{Backend::openmp};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

#define CCSD_DISPATCH(fn, ...)              \
  if (backend() == Backend::serial)         \
    serial::fn(__VA_ARGS__);                \
  else                                      \
    omp::fn(__VA_ARGS__)

template <typename T>
void conv_forward(const T* in, const T* w, const T* bias, T* out, const ConvDims& d) {
  CCSD_DISPATCH(conv_forward, in, w, bias, out, d);
}
template <typename T>
void conv_backward_input(const T* gout, const T* w, T* gin, const ConvDims& d) {
  CCSD_DISPATCH(conv_backward_input, gout, w, gin, d);
}
template <typename T>
void conv_backward_params(const T* gout, const T* in, T* gw, T* gbias, const ConvDims& d) {
  CCSD_DISPATCH(conv_backward_params, gout, in, gw, gbias, d);
}
template <typename T>
void avgpool_forward(const T* in, T* out, int64_t B, int64_t C, int64_t D, int64_t H, int64_t W,
                     int fd, int fh, int fw) {
  CCSD_DISPATCH(avgpool_forward, in, out, B, C, D, H, W, fd, fh, fw);
}
template <typename T>
void avgpool_backward(const T* gout, T* gin, int64_t B, int64_t C, int64_t D, int64_t H,
                      int64_t W, int fd, int fh, int fw) {
  CCSD_DISPATCH(avgpool_backward, gout, gin, B, C, D, H, W, fd, fh, fw);
}
template <typename T>
void upsample_forward(const T* in, T* out, int64_t B, int64_t C, int64_t D, int64_t H, int64_t W,
                      int fd, int fh, int fw) {
  CCSD_DISPATCH(upsample_forward, in, out, B, C, D, H, W, fd, fh, fw);
}
template <typename T>
void upsample_backward(const T* gout, T* gin, int64_t B, int64_t C, int64_t D, int64_t H,
                       int64_t W, int fd, int fh, int fw) {
  CCSD_DISPATCH(upsample_backward, gout, gin, B, C, D, H, W, fd, fh, fw);
}
template <typename T>
void instnorm_forward(const T* in, const T* gamma, const T* beta, T* out, T* mean, T* invstd,
                      int64_t B, int64_t C, int64_t V, T eps) {
  CCSD_DISPATCH(instnorm_forward, in, gamma, beta, out, mean, invstd, B, C, V, eps);
}
template <typename T>
void instnorm_backward(const T* gout, const T* in, const T* gamma, const T* mean, const T* invstd,
                       T* gin, T* ggamma, T* gbeta, int64_t B, int64_t C, int64_t V) {
  CCSD_DISPATCH(instnorm_backward, gout, in, gamma, mean, invstd, gin, ggamma, gbeta, B, C, V);
}
template <typename T>
void leaky_relu_forward(const T* in, T* out, int64_t n, T alpha) {
  CCSD_DISPATCH(leaky_relu_forward, in, out, n, alpha);
}
template <typename T>
void leaky_relu_backward(const T* gout, const T* in, T* gin, int64_t n, T alpha) {
  CCSD_DISPATCH(leaky_relu_backward, gout, in, gin, n, alpha);
}
template <typename T>
void softmax_channel_forward(const T* in, T* out, int64_t B, int64_t C, int64_t V, T inv_temp) {
  CCSD_DISPATCH(softmax_channel_forward, in, out, B, C, V, inv_temp);
}
template <typename T>
void softmax_channel_backward(const T* gout, const T* probs, T* gin, int64_t B, int64_t C,
                              int64_t V, T inv_temp) {
  CCSD_DISPATCH(softmax_channel_backward, gout, probs, gin, B, C, V, inv_temp);
}
template <typename T>
void log_softmax_channel_forward(const T* in, T* out, int64_t B, int64_t C, int64_t V,
                                 T inv_temp) {
  CCSD_DISPATCH(log_softmax_channel_forward, in, out, B, C, V, inv_temp);
}
template <typename T>
void log_softmax_channel_backward(const T* gout, const T* log_probs, T* gin, int64_t B, int64_t C,
                                  int64_t V, T inv_temp) {
  CCSD_DISPATCH(log_softmax_channel_backward, gout, log_probs, gin, B, C, V, inv_temp);
}

#undef CCSD_DISPATCH

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

}  // namespace ccsd::kern
