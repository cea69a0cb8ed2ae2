#pragma once
#include <cstdint>

// Data-parallel inner loops behind the network: convolution, pooling,
// upsampling, instance norm, leaky relu, channel softmax. Two backends:
//
//   kern::serial  - naive reference implementation kept for testing
//   kern::omp     - OpenMP implementation used by default
//
// The OpenMP kernels partition work so that every output element is written
// by exactly one thread and every accumulation runs in a fixed order inside
// one thread. Results are therefore bit-identical across runs and across
// thread counts. Backward kernels ACCUMULATE (+=) into their gradient
// outputs; callers zero the buffers.
//
// Everything is templated on the scalar type: float carries training, double
// carries the gradient checks and bit-exactness tests.
//
// tools/bench_kernels compares the two backends at training shapes.

namespace ccsd::kern {

enum class Backend { serial, openmp };

void set_backend(Backend b);
Backend backend();

// Stride-1 convolution with same padding. Odd kernel extents only.
// in [B,IC,D,H,W], w [OC,IC,KD,KH,KW], bias [OC] (may be null), out [B,OC,D,H,W].
struct ConvDims {
  int64_t B, IC, OC, D, H, W;
  int KD, KH, KW;
};

// clang-format off
#define CCSD_KERNELS_DECL                                                                        \
  template <typename T> void conv_forward(const T* in, const T* w, const T* bias, T* out,       \
                                          const ConvDims& d);                                   \
  template <typename T> void conv_backward_input(const T* gout, const T* w, T* gin,             \
                                                 const ConvDims& d);                            \
  template <typename T> void conv_backward_params(const T* gout, const T* in, T* gw, T* gbias,  \
                                                  const ConvDims& d);                           \
  /* Average pooling by integer factors; extents must divide. */                                \
  template <typename T> void avgpool_forward(const T* in, T* out, int64_t B, int64_t C,         \
                                             int64_t D, int64_t H, int64_t W, int fd, int fh,   \
                                             int fw);                                           \
  template <typename T> void avgpool_backward(const T* gout, T* gin, int64_t B, int64_t C,      \
                                              int64_t D, int64_t H, int64_t W, int fd, int fh,  \
                                              int fw);                                          \
  /* Nearest-neighbour upsampling; D,H,W are INPUT extents. */                                  \
  template <typename T> void upsample_forward(const T* in, T* out, int64_t B, int64_t C,        \
                                              int64_t D, int64_t H, int64_t W, int fd, int fh,  \
                                              int fw);                                          \
  template <typename T> void upsample_backward(const T* gout, T* gin, int64_t B, int64_t C,     \
                                               int64_t D, int64_t H, int64_t W, int fd, int fh, \
                                               int fw);                                         \
  /* Instance norm over the V voxels of each (b,c) slab; gamma/beta are per                     \
     channel; mean/invstd [B*C] are saved for backward. */                                      \
  template <typename T> void instnorm_forward(const T* in, const T* gamma, const T* beta,       \
                                              T* out, T* mean, T* invstd, int64_t B, int64_t C, \
                                              int64_t V, T eps);                                \
  template <typename T> void instnorm_backward(const T* gout, const T* in, const T* gamma,      \
                                               const T* mean, const T* invstd, T* gin,          \
                                               T* ggamma, T* gbeta, int64_t B, int64_t C,       \
                                               int64_t V);                                      \
  template <typename T> void leaky_relu_forward(const T* in, T* out, int64_t n, T alpha);       \
  template <typename T> void leaky_relu_backward(const T* gout, const T* in, T* gin, int64_t n, \
                                                 T alpha);                                      \
  /* Channel softmax / log-softmax at every position of [B,C,V]; logits are                     \
     scaled by inv_temp first (softened distributions use inv_temp = 1/tau). */                 \
  template <typename T> void softmax_channel_forward(const T* in, T* out, int64_t B, int64_t C, \
                                                     int64_t V, T inv_temp);                    \
  template <typename T> void softmax_channel_backward(const T* gout, const T* probs, T* gin,    \
                                                      int64_t B, int64_t C, int64_t V,          \
                                                      T inv_temp);                              \
  template <typename T> void log_softmax_channel_forward(const T* in, T* out, int64_t B,        \
                                                         int64_t C, int64_t V, T inv_temp);     \
  template <typename T> void log_softmax_channel_backward(const T* gout, const T* log_probs,    \
                                                          T* gin, int64_t B, int64_t C,         \
                                                          int64_t V, T inv_temp);
// clang-format on

CCSD_KERNELS_DECL

namespace serial {
CCSD_KERNELS_DECL
}

namespace omp {
CCSD_KERNELS_DECL
}

#undef CCSD_KERNELS_DECL

}  // namespace ccsd::kern
