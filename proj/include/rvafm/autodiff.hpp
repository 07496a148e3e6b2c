#pragma once

#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "rvafm/tensor.hpp"

namespace rvafm {

/// Reverse-mode tape. Ops append records in creation order, which is already a
/// topological order, so the backward pass is a single reverse sweep. A graph
/// is single-use: after `backward` it must be rebuilt by a fresh forward pass.
template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<Scalar>&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Registers `value` as a graph input and returns the attached handle.
  Tensor<Scalar> leaf(const Tensor<Scalar>& value, bool trainable = true) {
    if (value.empty()) throw std::invalid_argument("cannot attach an empty tensor");
    if (!value.all_finite()) throw std::domain_error("leaf tensor has non-finite values");
    Tensor<Scalar> t = value.detached();
    t.graph_ = this;
    t.node_ = new_node();
    if (trainable) trainable_.push_back(t.node_);
    return t;
  }

  /// Attaches an op result and its backward closure. Called by the free
  /// functions in ops.hpp once the forward value is computed.
  Tensor<Scalar> record(Tensor<Scalar> value, BackwardFn fn) {
    if (backward_done_)
      throw std::logic_error("graph is stale: backward already ran, rebuild the forward pass");
    value.graph_ = this;
    value.node_ = new_node();
    records_.push_back({value.node_, std::move(fn)});
    return value;
  }

  void backward(const Tensor<Scalar>& loss) {
    if (loss.graph_ != this)
      throw std::invalid_argument("loss tensor is not attached to this graph");
    if (loss.size() != 1) throw std::invalid_argument("backward requires a scalar loss");
    if (backward_done_)
      throw std::logic_error("backward already ran on this graph; rebuild the forward pass");
    backward_done_ = true;
    grads_[static_cast<std::size_t>(loss.node_)] = Tensor<Scalar>::ones(loss.shape());
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      const Tensor<Scalar>& g = grads_[static_cast<std::size_t>(it->out)];
      if (g.empty()) continue;  // node does not influence the loss
      it->fn(*this, g);
    }
  }

  bool backward_done() const { return backward_done_; }

  /// Gradient of the loss w.r.t. an attached tensor; zeros when the tensor
  /// does not influence the loss.
  Tensor<Scalar> grad(const Tensor<Scalar>& t) const {
    if (t.graph_ != this) throw std::invalid_argument("tensor is not attached to this graph");
    if (!backward_done_) throw std::logic_error("backward has not run on this graph");
    const Tensor<Scalar>& g = grads_[static_cast<std::size_t>(t.node_)];
    if (g.empty()) return Tensor<Scalar>::zeros(t.shape());
    return g;
  }

  /// Adds `g` into the gradient slot of `input`. No-op for constants that were
  /// never attached.
  void accumulate(const Tensor<Scalar>& input, const Tensor<Scalar>& g) {
    if (input.graph_ == nullptr) return;
    if (input.graph_ != this) throw std::logic_error("gradient for a tensor of another graph");
    if (!input.same_shape(g)) throw std::logic_error("gradient shape mismatch");
    Tensor<Scalar>& slot = grads_[static_cast<std::size_t>(input.node_)];
    if (slot.empty()) {
      slot = g;
      return;
    }
    Eigen::Map<ArrayX<Scalar>>(slot.mutable_data(), slot.size()) += g.flat();
  }

  std::size_t node_count() const { return grads_.size(); }
  const std::vector<int>& trainable_nodes() const { return trainable_; }

 private:
  int new_node() {
    grads_.emplace_back();
    return static_cast<int>(grads_.size()) - 1;
  }

  struct Record {
    int out;
    BackwardFn fn;
  };

  std::vector<Record> records_;
  std::vector<Tensor<Scalar>> grads_;
  std::vector<int> trainable_;
  bool backward_done_ = false;
};

namespace detail {

/// Finds the single graph shared by the attached operands (nullptr when all
/// operands are plain values).
template <typename Scalar>
Graph<Scalar>* common_graph(std::initializer_list<const Tensor<Scalar>*> inputs) {
  Graph<Scalar>* g = nullptr;
  for (const Tensor<Scalar>* t : inputs) {
    if (!t->attached()) continue;
    if (g == nullptr)
      g = t->graph();
    else if (g != t->graph())
      throw std::logic_error("operands belong to different autodiff graphs");
  }
  return g;
}

/// Validates the forward value and, when any input is attached, records the op
/// with the backward closure produced by `make_backward`.
template <typename Scalar, typename MakeBackward>
Tensor<Scalar> finish_op(const char* op, Tensor<Scalar> value,
                         std::initializer_list<const Tensor<Scalar>*> inputs,
                         MakeBackward&& make_backward) {
  if (!value.all_finite())
    throw std::domain_error(std::string(op) + " produced a non-finite value");
  Graph<Scalar>* g = common_graph<Scalar>(inputs);
  if (g == nullptr) return value;
  return g->record(std::move(value), make_backward());
}

}  // namespace detail
}  // namespace rvafm
