#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "reconformer/errors.hpp"

namespace reconformer {

// Row-major shape with up to 4 axes (batch, height, width, channel).
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<int> dims) { init(dims.begin(), static_cast<int>(dims.size())); }
  explicit Shape(const std::vector<int>& dims) { init(dims.data(), static_cast<int>(dims.size())); }

  int rank() const { return rank_; }
  int operator[](int i) const { return dims_[i]; }
  int back() const { return dims_[rank_ - 1]; }

  std::size_t element_count() const {
    std::size_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(dims_[i]);
    return rank_ == 0 ? 0 : n;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[i] != o.dims_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const;

 private:
  void init(const int* dims, int rank) {
    require(rank >= 1 && rank <= kMaxRank, ErrorKind::Shape, "diff-engine::Shape",
            "rank must be in [1, 4]");
    for (int i = 0; i < rank; ++i)
      require(dims[i] >= 1, ErrorKind::Shape, "diff-engine::Shape", "extent must be positive");
    rank_ = rank;
    for (int i = 0; i < rank; ++i) dims_[i] = dims[i];
  }

  std::array<int, kMaxRank> dims_{};
  int rank_ = 0;
};

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until touched by backward
  bool requires_grad = false;
  bool interior = false;  // produced by an op (owns a backprop closure)
  bool consumed = false;  // backward already released this node's tape entry
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

// Value-semantics handle onto a tape node. Ops build a DAG of nodes;
// backward() on a scalar walks it in reverse topological order, accumulates
// gradients over fan-out, and frees the tape as it goes.
template <typename S>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::shared_ptr<TensorNode<S>> node) : node_(std::move(node)) {}

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, S fill, bool requires_grad = false);
  static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false);
  static TensorT scalar(S v, bool requires_grad = false) { return full(Shape{1}, v, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& mutable_value() { return node_->value; }
  S item() const;

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<S>& grad() const;
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode accumulation from a scalar. Usage errors: non-scalar root,
  // rerunning a freed graph, or a graph that references freed interior nodes.
  void backward();

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace reconformer
