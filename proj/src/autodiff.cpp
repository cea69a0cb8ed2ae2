#include "ccsd/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "ccsd/kernels.hpp"

namespace ccsd::ad {

namespace {

template <typename T>
void check_rank5(const NodeT<T>* x, const char* who) {
  if (x->value.rank() != 5)
    throw std::invalid_argument(std::string(who) + ": expected [B,C,D,H,W], got " +
                                x->value.shape_str());
}

struct Bcv {
  int64_t B, C, V;
};

template <typename T>
Bcv bcv(const NodeT<T>* x) {
  const auto& s = x->value.shape();
  return {s[0], s[1], s[2] * s[3] * s[4]};
}

template <typename T>
void check_labels(const NodeT<T>* x, const LabelVolume& labels, const char* who) {
  auto [B, C, V] = bcv(x);
  if (labels.numel() != B * V)
    throw std::invalid_argument(std::string(who) + ": label count mismatch");
  for (int32_t l : labels.data)
    if (l < 0 || l >= C)
      throw std::invalid_argument(std::string(who) + ": label " + std::to_string(l) +
                                  " outside [0," + std::to_string(C) + ")");
}

}  // namespace

template <typename T>
NodeT<T>* TapeT<T>::make(TensorT<T> value, bool requires_grad,
                         std::function<void(NodeT<T>&)> backward) {
  nodes_.emplace_back();
  NodeT<T>& n = nodes_.back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  return &n;
}

template <typename T>
NodeT<T>* TapeT<T>::leaf(ParamT<T>& p) {
  NodeT<T>* n = make(p.value, true);
  n->bound = &p;
  n->backward = [](NodeT<T>& self) {
    const int64_t m = self.grad.numel();
    for (int64_t i = 0; i < m; ++i) self.bound->grad[i] += self.grad[i];
  };
  return n;
}

template <typename T>
void TapeT<T>::backward(NodeT<T>* root) {
  if (root->value.numel() != 1)
    throw std::logic_error("tape backward: root must be scalar, got " + root->value.shape_str());
  root->ensure_grad()[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    NodeT<T>& n = *it;
    if (n.has_grad() && n.backward) n.backward(n);
  }
}

template <typename T>
NodeT<T>* conv(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* b) {
  check_rank5(x, "conv");
  if (w->value.rank() != 5) throw std::invalid_argument("conv: weight must be rank 5");
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (ws[1] != xs[1])
    throw std::invalid_argument("conv: in-channels mismatch, input " + x->value.shape_str() +
                                " weight " + w->value.shape_str());
  if (ws[2] % 2 == 0 || ws[3] % 2 == 0 || ws[4] % 2 == 0)
    throw std::invalid_argument("conv: kernel extents must be odd");
  if (b && b->value.numel() != ws[0]) throw std::invalid_argument("conv: bias size mismatch");
  kern::ConvDims d{xs[0],
                   xs[1],
                   ws[0],
                   xs[2],
                   xs[3],
                   xs[4],
                   static_cast<int>(ws[2]),
                   static_cast<int>(ws[3]),
                   static_cast<int>(ws[4])};
  TensorT<T> out({d.B, d.OC, d.D, d.H, d.W});
  kern::conv_forward(x->value.data(), w->value.data(), b ? b->value.data() : nullptr, out.data(),
                     d);
  bool req = x->requires_grad || w->requires_grad || (b && b->requires_grad);
  return t.make(std::move(out), req, [x, w, b, d](NodeT<T>& self) {
    if (x->requires_grad)
      kern::conv_backward_input(self.grad.data(), w->value.data(), x->ensure_grad().data(), d);
    if (w->requires_grad)
      kern::conv_backward_params(self.grad.data(), x->value.data(), w->ensure_grad().data(),
                                 (b && b->requires_grad) ? b->ensure_grad().data() : nullptr, d);
  });
}

template <typename T>
NodeT<T>* avg_pool(TapeT<T>& t, NodeT<T>* x, Factor3 f) {
  check_rank5(x, "avg_pool");
  const auto& s = x->value.shape();
  if (s[2] % f[0] || s[3] % f[1] || s[4] % f[2])
    throw std::invalid_argument("avg_pool: extents must divide by factors");
  TensorT<T> out({s[0], s[1], s[2] / f[0], s[3] / f[1], s[4] / f[2]});
  kern::avgpool_forward(x->value.data(), out.data(), s[0], s[1], s[2], s[3], s[4], f[0], f[1],
                        f[2]);
  return t.make(std::move(out), x->requires_grad, [x, f](NodeT<T>& self) {
    if (!x->requires_grad) return;
    const auto& s = x->value.shape();
    kern::avgpool_backward(self.grad.data(), x->ensure_grad().data(), s[0], s[1], s[2], s[3], s[4],
                           f[0], f[1], f[2]);
  });
}

template <typename T>
NodeT<T>* upsample_nearest(TapeT<T>& t, NodeT<T>* x, Factor3 f) {
  check_rank5(x, "upsample_nearest");
  const auto& s = x->value.shape();
  TensorT<T> out({s[0], s[1], s[2] * f[0], s[3] * f[1], s[4] * f[2]});
  kern::upsample_forward(x->value.data(), out.data(), s[0], s[1], s[2], s[3], s[4], f[0], f[1],
                         f[2]);
  return t.make(std::move(out), x->requires_grad, [x, f](NodeT<T>& self) {
    if (!x->requires_grad) return;
    const auto& s = x->value.shape();
    kern::upsample_backward(self.grad.data(), x->ensure_grad().data(), s[0], s[1], s[2], s[3],
                            s[4], f[0], f[1], f[2]);
  });
}

template <typename T>
NodeT<T>* instance_norm(TapeT<T>& t, NodeT<T>* x, NodeT<T>* gamma, NodeT<T>* beta, T eps) {
  check_rank5(x, "instance_norm");
  auto [B, C, V] = bcv(x);
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw std::invalid_argument("instance_norm: affine param size mismatch");
  TensorT<T> out(x->value.shape());
  auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(2 * B * C));
  T* mean = stats->data();
  T* invstd = stats->data() + B * C;
  kern::instnorm_forward(x->value.data(), gamma->value.data(), beta->value.data(), out.data(),
                         mean, invstd, B, C, V, eps);
  bool req = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  return t.make(std::move(out), req, [x, gamma, beta, stats, B, C, V](NodeT<T>& self) {
    const T* mean = stats->data();
    const T* invstd = stats->data() + B * C;
    kern::instnorm_backward(self.grad.data(), x->value.data(), gamma->value.data(), mean, invstd,
                            x->requires_grad ? x->ensure_grad().data() : nullptr,
                            gamma->requires_grad ? gamma->ensure_grad().data() : nullptr,
                            beta->requires_grad ? beta->ensure_grad().data() : nullptr, B, C, V);
  });
}

template <typename T>
NodeT<T>* leaky_relu(TapeT<T>& t, NodeT<T>* x, T alpha) {
  TensorT<T> out(x->value.shape());
  kern::leaky_relu_forward(x->value.data(), out.data(), x->value.numel(), alpha);
  return t.make(std::move(out), x->requires_grad, [x, alpha](NodeT<T>& self) {
    if (!x->requires_grad) return;
    kern::leaky_relu_backward(self.grad.data(), x->value.data(), x->ensure_grad().data(),
                              x->value.numel(), alpha);
  });
}

template <typename T>
NodeT<T>* concat_channels(TapeT<T>& t, const std::vector<NodeT<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const auto& s0 = parts[0]->value.shape();
  int64_t C = 0;
  bool req = false;
  for (NodeT<T>* p : parts) {
    check_rank5(p, "concat_channels");
    const auto& s = p->value.shape();
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] || s[4] != s0[4])
      throw std::invalid_argument("concat_channels: shape mismatch " + p->value.shape_str() +
                                  " vs " + parts[0]->value.shape_str());
    C += s[1];
    req = req || p->requires_grad;
  }
  const int64_t B = s0[0], V = s0[2] * s0[3] * s0[4];
  TensorT<T> out({B, C, s0[2], s0[3], s0[4]});
  std::vector<NodeT<T>*> owned(parts);
  for (int64_t b = 0; b < B; ++b) {
    int64_t coff = 0;
    for (NodeT<T>* p : owned) {
      const int64_t pc = p->value.shape()[1];
      std::memcpy(out.data() + (b * C + coff) * V, p->value.data() + b * pc * V,
                  sizeof(T) * static_cast<size_t>(pc * V));
      coff += pc;
    }
  }
  return t.make(std::move(out), req, [owned, B, C, V](NodeT<T>& self) {
    for (int64_t b = 0; b < B; ++b) {
      int64_t coff = 0;
      for (NodeT<T>* p : owned) {
        const int64_t pc = p->value.shape()[1];
        if (p->requires_grad) {
          T* g = p->ensure_grad().data() + b * pc * V;
          const T* src = self.grad.data() + (b * C + coff) * V;
          for (int64_t i = 0; i < pc * V; ++i) g[i] += src[i];
        }
        coff += pc;
      }
    }
  });
}

template <typename T>
NodeT<T>* slice_batch(TapeT<T>& t, NodeT<T>* x, int64_t b) {
  check_rank5(x, "slice_batch");
  const auto& s = x->value.shape();
  if (b < 0 || b >= s[0]) throw std::invalid_argument("slice_batch: index out of range");
  const int64_t per = s[1] * s[2] * s[3] * s[4];
  TensorT<T> out({1, s[1], s[2], s[3], s[4]});
  std::memcpy(out.data(), x->value.data() + b * per, sizeof(T) * static_cast<size_t>(per));
  return t.make(std::move(out), x->requires_grad, [x, b, per](NodeT<T>& self) {
    if (!x->requires_grad) return;
    T* g = x->ensure_grad().data() + b * per;
    for (int64_t i = 0; i < per; ++i) g[i] += self.grad[i];
  });
}

template <typename T>
NodeT<T>* softmax_channels(TapeT<T>& t, NodeT<T>* x, T inv_temp) {
  check_rank5(x, "softmax_channels");
  auto [B, C, V] = bcv(x);
  TensorT<T> out(x->value.shape());
  kern::softmax_channel_forward(x->value.data(), out.data(), B, C, V, inv_temp);
  return t.make(std::move(out), x->requires_grad, [x, B, C, V, inv_temp](NodeT<T>& self) {
    if (!x->requires_grad) return;
    kern::softmax_channel_backward(self.grad.data(), self.value.data(), x->ensure_grad().data(),
                                   B, C, V, inv_temp);
  });
}

template <typename T>
NodeT<T>* log_softmax_channels(TapeT<T>& t, NodeT<T>* x, T inv_temp) {
  check_rank5(x, "log_softmax_channels");
  auto [B, C, V] = bcv(x);
  TensorT<T> out(x->value.shape());
  kern::log_softmax_channel_forward(x->value.data(), out.data(), B, C, V, inv_temp);
  return t.make(std::move(out), x->requires_grad, [x, B, C, V, inv_temp](NodeT<T>& self) {
    if (!x->requires_grad) return;
    kern::log_softmax_channel_backward(self.grad.data(), self.value.data(),
                                       x->ensure_grad().data(), B, C, V, inv_temp);
  });
}

template <typename T>
NodeT<T>* cross_entropy_nll(TapeT<T>& t, NodeT<T>* log_probs, const LabelVolume& labels) {
  check_labels(log_probs, labels, "cross_entropy_nll");
  auto [B, C, V] = bcv(log_probs);
  const double invN = 1.0 / static_cast<double>(B * V);
  double loss = 0;  // reduce in double regardless of T
  for (int64_t b = 0; b < B; ++b)
    for (int64_t v = 0; v < V; ++v)
      loss -= log_probs->value[(b * C + labels.data[static_cast<size_t>(b * V + v)]) * V + v];
  auto lbl = std::make_shared<std::vector<int32_t>>(labels.data);
  return t.make(TensorT<T>::scalar(static_cast<T>(loss * invN)), log_probs->requires_grad,
                [log_probs, lbl, B, C, V, invN](NodeT<T>& self) {
                  if (!log_probs->requires_grad) return;
                  const T g = self.grad[0] * static_cast<T>(invN);
                  T* gi = log_probs->ensure_grad().data();
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t v = 0; v < V; ++v)
                      gi[(b * C + (*lbl)[static_cast<size_t>(b * V + v)]) * V + v] -= g;
                });
}

template <typename T>
NodeT<T>* soft_dice_loss(TapeT<T>& t, NodeT<T>* probs, const LabelVolume& labels, T eps) {
  check_labels(probs, labels, "soft_dice_loss");
  auto [B, C, V] = bcv(probs);
  // Per (case, class) soft overlap, averaged over all classes incl. background.
  auto inter = std::make_shared<std::vector<double>>(static_cast<size_t>(B * C), 0.0);
  auto denom = std::make_shared<std::vector<double>>(static_cast<size_t>(B * C), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* p = probs->value.data() + (b * C + c) * V;
      double I = 0, P = 0, G = 0;
      for (int64_t v = 0; v < V; ++v) {
        const bool g = labels.data[static_cast<size_t>(b * V + v)] == c;
        I += g ? static_cast<double>(p[v]) : 0.0;
        P += static_cast<double>(p[v]);
        G += g ? 1.0 : 0.0;
      }
      (*inter)[static_cast<size_t>(b * C + c)] = 2.0 * I + static_cast<double>(eps);
      (*denom)[static_cast<size_t>(b * C + c)] = P + G + static_cast<double>(eps);
    }
  double dice_sum = 0;
  for (int64_t i = 0; i < B * C; ++i)
    dice_sum += (*inter)[static_cast<size_t>(i)] / (*denom)[static_cast<size_t>(i)];
  const double invBC = 1.0 / static_cast<double>(B * C);
  auto lbl = std::make_shared<std::vector<int32_t>>(labels.data);
  return t.make(TensorT<T>::scalar(static_cast<T>(1.0 - dice_sum * invBC)), probs->requires_grad,
                [probs, lbl, inter, denom, B, C, V, invBC](NodeT<T>& self) {
                  if (!probs->requires_grad) return;
                  const double g0 = static_cast<double>(self.grad[0]) * invBC;
                  T* gp = probs->ensure_grad().data();
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                      const double A = (*inter)[static_cast<size_t>(b * C + c)];
                      const double Dn = (*denom)[static_cast<size_t>(b * C + c)];
                      const double gA = 2.0 / Dn, gD = -A / (Dn * Dn);
                      T* gpv = gp + (b * C + c) * V;
                      for (int64_t v = 0; v < V; ++v) {
                        const bool isg = (*lbl)[static_cast<size_t>(b * V + v)] == c;
                        // d(1 - dice)/dp = -(gA*[g] + gD)
                        gpv[v] -= static_cast<T>(g0 * ((isg ? gA : 0.0) + gD));
                      }
                    }
                });
}

template <typename T>
NodeT<T>* kl_const_teacher(TapeT<T>& t, const TensorT<T>& teacher_probs,
                           NodeT<T>* student_log_probs) {
  check_rank5(student_log_probs, "kl_const_teacher");
  if (!teacher_probs.same_shape(student_log_probs->value))
    throw std::invalid_argument("kl_const_teacher: teacher/student shape mismatch");
  auto [B, C, V] = bcv(student_log_probs);
  const double invN = 1.0 / static_cast<double>(B * V);
  double loss = 0;
  const T* tp = teacher_probs.data();
  const T* lq = student_log_probs->value.data();
  for (int64_t i = 0; i < B * C * V; ++i)
    if (tp[i] > 0)
      loss += static_cast<double>(tp[i]) *
              (std::log(static_cast<double>(tp[i])) - static_cast<double>(lq[i]));
  auto teacher = std::make_shared<TensorT<T>>(teacher_probs);
  return t.make(TensorT<T>::scalar(static_cast<T>(loss * invN)), student_log_probs->requires_grad,
                [student_log_probs, teacher, B, C, V, invN](NodeT<T>& self) {
                  if (!student_log_probs->requires_grad) return;
                  const T g = self.grad[0] * static_cast<T>(invN);
                  T* gq = student_log_probs->ensure_grad().data();
                  const T* tp = teacher->data();
                  for (int64_t i = 0; i < B * C * V; ++i) gq[i] -= g * tp[i];
                });
}

template <typename T>
NodeT<T>* add(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  TensorT<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return t.make(std::move(out), a->requires_grad || b->requires_grad, [a, b](NodeT<T>& self) {
    for (NodeT<T>* p : {a, b})
      if (p->requires_grad) {
        T* g = p->ensure_grad().data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
      }
  });
}

template <typename T>
NodeT<T>* scale(TapeT<T>& t, NodeT<T>* a, T c) {
  TensorT<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = c * a->value[i];
  return t.make(std::move(out), a->requires_grad, [a, c](NodeT<T>& self) {
    if (!a->requires_grad) return;
    T* g = a->ensure_grad().data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += c * self.grad[i];
  });
}

template <typename T>
NodeT<T>* add_n(TapeT<T>& t, const std::vector<NodeT<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("add_n: no inputs");
  TensorT<T> out(parts[0]->value.shape());
  bool req = false;
  for (NodeT<T>* p : parts) {
    if (!p->value.same_shape(out)) throw std::invalid_argument("add_n: shape mismatch");
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += p->value[i];
    req = req || p->requires_grad;
  }
  std::vector<NodeT<T>*> owned(parts);
  return t.make(std::move(out), req, [owned](NodeT<T>& self) {
    for (NodeT<T>* p : owned)
      if (p->requires_grad) {
        T* g = p->ensure_grad().data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
      }
  });
}

template <typename T>
NodeT<T>* weighted_sum(TapeT<T>& t, NodeT<T>* x, const TensorT<T>& weights) {
  if (!x->value.same_shape(weights)) throw std::invalid_argument("weighted_sum: shape mismatch");
  double s = 0;
  for (int64_t i = 0; i < weights.numel(); ++i)
    s += static_cast<double>(weights[i]) * static_cast<double>(x->value[i]);
  auto w = std::make_shared<TensorT<T>>(weights);
  return t.make(TensorT<T>::scalar(static_cast<T>(s)), x->requires_grad, [x, w](NodeT<T>& self) {
    if (!x->requires_grad) return;
    const T g = self.grad[0];
    T* gx = x->ensure_grad().data();
    for (int64_t i = 0; i < w->numel(); ++i) gx[i] += g * (*w)[i];
  });
}

template <typename T>
double scalar_value(const NodeT<T>* n) {
  if (n->value.numel() != 1) throw std::logic_error("scalar_value: node is not scalar");
  return static_cast<double>(n->value[0]);
}

#define CCSD_INSTANTIATE_AD(T)                                                                     \
  template class TapeT<T>;                                                                         \
  template NodeT<T>* conv<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*);                          \
  template NodeT<T>* avg_pool<T>(TapeT<T>&, NodeT<T>*, Factor3);                                   \
  template NodeT<T>* upsample_nearest<T>(TapeT<T>&, NodeT<T>*, Factor3);                           \
  template NodeT<T>* instance_norm<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*, T);              \
  template NodeT<T>* leaky_relu<T>(TapeT<T>&, NodeT<T>*, T);                                       \
  template NodeT<T>* concat_channels<T>(TapeT<T>&, const std::vector<NodeT<T>*>&);                    \
  template NodeT<T>* slice_batch<T>(TapeT<T>&, NodeT<T>*, int64_t);                                \
  template NodeT<T>* softmax_channels<T>(TapeT<T>&, NodeT<T>*, T);                                 \
  template NodeT<T>* log_softmax_channels<T>(TapeT<T>&, NodeT<T>*, T);                             \
  template NodeT<T>* cross_entropy_nll<T>(TapeT<T>&, NodeT<T>*, const LabelVolume&);               \
  template NodeT<T>* soft_dice_loss<T>(TapeT<T>&, NodeT<T>*, const LabelVolume&, T);               \
  template NodeT<T>* kl_const_teacher<T>(TapeT<T>&, const TensorT<T>&, NodeT<T>*);                 \
  template NodeT<T>* add<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*);                                      \
  template NodeT<T>* scale<T>(TapeT<T>&, NodeT<T>*, T);                                            \
  template NodeT<T>* add_n<T>(TapeT<T>&, const std::vector<NodeT<T>*>&);                              \
  template NodeT<T>* weighted_sum<T>(TapeT<T>&, NodeT<T>*, const TensorT<T>&);                     \
  template double scalar_value<T>(const NodeT<T>*);

CCSD_INSTANTIATE_AD(float)
CCSD_INSTANTIATE_AD(double)
#undef CCSD_INSTANTIATE_AD

}  // namespace ccsd::ad
