#pragma once
#include <array>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ccsd/tensor.hpp"

// Reverse-mode autodiff on a per-step tape. Ops run through ccsd::kern, so
// the graph inherits the kernels' determinism. Teacher branches are detached
// by passing plain tensors (node values) where a constant is wanted.

namespace ccsd::ad {

// A trainable tensor with its gradient accumulator. Owned by the model,
// referenced by tape leaves; grads survive tape teardown.
template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;

  ParamT() = default;
  ParamT(std::string n, TensorT<T> v) : name(std::move(n)), grad(v.shape()) {
    value = std::move(v);
  }
  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
class TapeT;

template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;  // allocated on first use
  bool requires_grad = false;
  ParamT<T>* bound = nullptr;
  std::function<void(NodeT&)> backward;

  TensorT<T>& ensure_grad() {
    if (grad.empty()) grad = TensorT<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
class TapeT {
 public:
  NodeT<T>* make(TensorT<T> value, bool requires_grad,
                 std::function<void(NodeT<T>&)> backward = {});
  NodeT<T>* leaf(ParamT<T>& p);
  NodeT<T>* constant(TensorT<T> v) { return make(std::move(v), false); }

  // Seeds a scalar root with gradient 1 and sweeps the tape in reverse
  // creation order. Leaf grads are folded into their bound params.
  void backward(NodeT<T>* root);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  std::deque<NodeT<T>> nodes_;
};

using Factor3 = std::array<int, 3>;

// clang-format off
// All activations are [B, C, D, H, W]; scalars are shape {1}.
template <typename T> NodeT<T>* conv(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* b);
template <typename T> NodeT<T>* avg_pool(TapeT<T>& t, NodeT<T>* x, Factor3 f);
template <typename T> NodeT<T>* upsample_nearest(TapeT<T>& t, NodeT<T>* x, Factor3 f);
template <typename T> NodeT<T>* instance_norm(TapeT<T>& t, NodeT<T>* x, NodeT<T>* gamma,
                                              NodeT<T>* beta, T eps = T(1e-5));
template <typename T> NodeT<T>* leaky_relu(TapeT<T>& t, NodeT<T>* x, T alpha = T(0.01));
template <typename T> NodeT<T>* concat_channels(TapeT<T>& t, const std::vector<NodeT<T>*>& parts);
template <typename T> NodeT<T>* slice_batch(TapeT<T>& t, NodeT<T>* x, int64_t b);
template <typename T> NodeT<T>* softmax_channels(TapeT<T>& t, NodeT<T>* x, T inv_temp = T(1));
template <typename T> NodeT<T>* log_softmax_channels(TapeT<T>& t, NodeT<T>* x, T inv_temp = T(1));

// Scalar losses. Labels are [B, D, H, W] with values in [0, C).
template <typename T> NodeT<T>* cross_entropy_nll(TapeT<T>& t, NodeT<T>* log_probs,
                                                  const LabelVolume& labels);
template <typename T> NodeT<T>* soft_dice_loss(TapeT<T>& t, NodeT<T>* probs,
                                               const LabelVolume& labels, T eps = T(1e-5));
// Mean over batch and positions of KL(teacher || student); the teacher is a
// constant probability tensor, the student is given as log-probabilities.
template <typename T> NodeT<T>* kl_const_teacher(TapeT<T>& t, const TensorT<T>& teacher_probs,
                                                 NodeT<T>* student_log_probs);

template <typename T> NodeT<T>* add(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b);
template <typename T> NodeT<T>* scale(TapeT<T>& t, NodeT<T>* a, T c);
template <typename T> NodeT<T>* add_n(TapeT<T>& t, const std::vector<NodeT<T>*>& parts);
// Scalar dot of a node with a fixed coefficient tensor.
template <typename T> NodeT<T>* weighted_sum(TapeT<T>& t, NodeT<T>* x, const TensorT<T>& weights);

template <typename T> double scalar_value(const NodeT<T>* n);
// clang-format on

using Param = ParamT<double>;
using Node = NodeT<double>;
using Tape = TapeT<double>;
using ParamF = ParamT<float>;
using NodeF = NodeT<float>;
using TapeF = TapeT<float>;

}  // namespace ccsd::ad
