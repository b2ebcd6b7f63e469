#include "reconformer/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "reconformer/finite.hpp"

namespace reconformer {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

template <typename S>
TensorT<S> TensorT<S>::zeros(Shape shape, bool requires_grad) {
  return full(shape, S(0), requires_grad);
}

template <typename S>
TensorT<S> TensorT<S>::full(Shape shape, S fill, bool requires_grad) {
  auto node = std::make_shared<TensorNode<S>>();
  node->shape = shape;
  node->value.assign(shape.element_count(), fill);
  node->requires_grad = requires_grad;
  return TensorT(std::move(node));
}

template <typename S>
TensorT<S> TensorT<S>::from_data(Shape shape, std::vector<S> data, bool requires_grad) {
  require(data.size() == shape.element_count(), ErrorKind::Shape, "diff-engine::from_data",
          "data length does not match shape " + shape.str());
  require(all_finite(data.data(), data.size()), ErrorKind::Domain, "diff-engine::from_data",
          "non-finite entries");
  auto node = std::make_shared<TensorNode<S>>();
  node->shape = shape;
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return TensorT(std::move(node));
}

template <typename S>
S TensorT<S>::item() const {
  require(size() == 1, ErrorKind::Usage, "diff-engine::item", "tensor is not scalar");
  return node_->value[0];
}

template <typename S>
const std::vector<S>& TensorT<S>::grad() const {
  require(node_ && !node_->grad.empty(), ErrorKind::Usage, "diff-engine::grad",
          "gradient not populated");
  return node_->grad;
}

template <typename S>
void TensorT<S>::backward() {
  const char* where = "diff-engine::backward";
  require(node_ != nullptr, ErrorKind::Usage, where, "backward on empty tensor");
  TensorNode<S>* root = node_.get();
  require(root->shape.element_count() == 1, ErrorKind::Usage, where, "loss must be scalar");
  require(!root->consumed, ErrorKind::Usage, where, "graph already freed by a previous backward");

  // Iterative post-order DFS; reverse post-order is a topological order in
  // which every consumer precedes its inputs. `order` holds owning references
  // so that releasing tape entries mid-walk cannot destroy nodes that are
  // still pending.
  std::vector<std::shared_ptr<TensorNode<S>>> order;
  std::unordered_set<TensorNode<S>*> visited;
  std::vector<std::pair<std::shared_ptr<TensorNode<S>>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    require(!(node->consumed && node->interior), ErrorKind::Usage, where,
            "graph references interior nodes freed by a previous backward");
    if (next < node->parents.size()) {
      std::shared_ptr<TensorNode<S>> parent = node->parents[next++];
      if (visited.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = S(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<S>& node = **it;
    if (node.backprop && node.requires_grad) {
      node.ensure_grad();
      node.backprop(node);
    }
    if (node.interior) {
      node.consumed = true;
      node.backprop = nullptr;
      node.parents.clear();
      node.grad.clear();
      node.grad.shrink_to_fit();
    }
  }
}

template class TensorT<float>;
template class TensorT<double>;

}  // namespace reconformer
