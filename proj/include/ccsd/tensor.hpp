#pragma once
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccsd {

// Dense row-major tensor. Activations use the [B, C, D, H, W] layout, conv
// weights [OC, IC, KD, KH, KW]. Rank-2 volumes are carried as D=1. Training
// runs in float by default; tests that probe gradients and bit-exactness use
// the double instantiation.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(static_cast<size_t>(checked_numel(shape_)), T{0}) {}

  TensorT(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static TensorT full(std::vector<int64_t> shape, T v) {
    TensorT t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  template <typename U>
  static TensorT from(const TensorT<U>& o) {
    TensorT t(o.shape());
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(o[i]);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  T at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(offset(idx))];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  int64_t offset(std::initializer_list<int64_t> idx) const {
    if (idx.size() != shape_.size()) throw std::invalid_argument("tensor: bad index rank");
    int64_t off = 0;
    size_t i = 0;
    for (int64_t v : idx) off = off * shape_[i++] + v;
    return off;
  }

  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

// Integer volume for segmentation labels, layout [B, D, H, W] or [D, H, W].
struct LabelVolume {
  std::vector<int64_t> shape;
  std::vector<int32_t> data;

  LabelVolume() = default;
  explicit LabelVolume(std::vector<int64_t> s)
      : shape(std::move(s)),
        data(static_cast<size_t>(std::accumulate(shape.begin(), shape.end(), int64_t{1},
                                                 std::multiplies<int64_t>())),
             0) {}

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

struct Size3 {
  int d = 1, h = 1, w = 1;
  int64_t voxels() const { return int64_t{1} * d * h * w; }
  bool operator==(const Size3&) const = default;
};

}  // namespace ccsd
