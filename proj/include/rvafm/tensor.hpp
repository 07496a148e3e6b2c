#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rvafm {

/// Dimensions of a dense row-major tensor, outermost first.
using Shape = std::vector<int>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline long shape_size(const Shape& s) {
  long n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

template <typename Scalar>
const char* dtype_name() {
  if constexpr (std::is_same_v<Scalar, float>) return "float32";
  else return "float64";
}

template <typename Scalar>
class Graph;

/// Dense row-major tensor with value semantics. The payload is shared between
/// copies and treated as immutable once the tensor participates in an autodiff
/// graph; `mutable_data` detaches the buffer when it is shared.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(shape_size(shape_)),
                                                    Scalar(0))) {}

  Tensor(Shape shape, std::vector<Scalar> values)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<Scalar>>(std::move(values))) {
    if (static_cast<long>(data_->size()) != shape_size(shape_))
      throw std::invalid_argument("value count " + std::to_string(data_->size()) +
                                  " does not match shape " + shape_str(shape_));
    if (!all_finite()) throw std::domain_error("tensor constructed with non-finite values");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    if (!t.all_finite()) throw std::domain_error("tensor constructed with non-finite values");
    return t;
  }

  static Tensor ones(Shape shape) { return constant(std::move(shape), Scalar(1)); }

  static Tensor scalar(Scalar v) { return constant({1}, v); }

  /// Builds a tensor without the finite-value check (CTC uses this to carry an
  /// infinite loss for infeasible targets).
  static Tensor unchecked(Shape shape, std::vector<Scalar> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (static_cast<long>(values.size()) != shape_size(t.shape_))
      throw std::invalid_argument("value count does not match shape " + shape_str(t.shape_));
    t.data_ = std::make_shared<std::vector<Scalar>>(std::move(values));
    return t;
  }

  bool empty() const { return !data_; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  long size() const { return data_ ? static_cast<long>(data_->size()) : 0; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  const Scalar* data() const { return data_->data(); }
  const std::vector<Scalar>& values() const { return *data_; }

  /// Writable pointer to the payload. Copies the buffer first if any other
  /// tensor still references it, so existing views keep their values.
  Scalar* mutable_data() {
    if (!data_) throw std::logic_error("mutable_data() on an empty tensor");
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<Scalar>>(*data_);
    return data_->data();
  }

  Scalar operator()(int i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  Scalar operator()(int i, int j) const {
    return (*data_)[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  Scalar operator()(int i, int j, int k) const {
    return (*data_)[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  Scalar operator()(int i, int j, int k, int l) const {
    return (*data_)[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] +
                    l];
  }

  /// Rank-2 view. `matrix(r, c)` reinterprets the flat payload.
  Eigen::Map<const MatrixX<Scalar>> matrix() const {
    if (rank() != 2) throw std::invalid_argument("matrix() requires a rank-2 tensor, got " + shape_str(shape_));
    return matrix(shape_[0], shape_[1]);
  }
  Eigen::Map<const MatrixX<Scalar>> matrix(int rows, int cols) const {
    if (static_cast<long>(rows) * cols != size())
      throw std::invalid_argument("matrix view does not cover the tensor payload");
    return {data_->data(), rows, cols};
  }
  Eigen::Map<const ArrayX<Scalar>> flat() const { return {data_->data(), size()}; }

  bool all_finite() const { return flat().isFinite().all(); }

  Graph<Scalar>* graph() const { return graph_; }
  int node() const { return node_; }
  bool attached() const { return graph_ != nullptr; }

  /// Same payload, no autodiff linkage.
  Tensor detached() const {
    Tensor t(*this);
    t.graph_ = nullptr;
    t.node_ = -1;
    return t;
  }

  template <typename To>
  Tensor<To> cast() const {
    std::vector<To> out(data_->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>((*data_)[i]);
    return Tensor<To>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<Scalar>> data_;
  Graph<Scalar>* graph_ = nullptr;
  int node_ = -1;

  friend class Graph<Scalar>;
};

}  // namespace rvafm
