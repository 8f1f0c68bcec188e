#include "fpn/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace fpn {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) {
    FPN_CHECK(e > 0, "non-positive extent in shape ", shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <typename Dtype>
Tensor<Dtype> Tensor<Dtype>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Dtype(0), requires_grad);
}

template <typename Dtype>
Tensor<Dtype> Tensor<Dtype>::full(Shape shape, Dtype value, bool requires_grad) {
  FPN_CHECK(shape.size() >= 1 && shape.size() <= 4, "rank must be 1..4, got ",
            shape.size());
  auto node = std::make_shared<TensorNode<Dtype>>();
  node->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

template <typename Dtype>
Tensor<Dtype> Tensor<Dtype>::from_data(Shape shape, std::vector<Dtype> values,
                                       bool requires_grad) {
  FPN_CHECK(static_cast<int64_t>(values.size()) == shape_numel(shape),
            "data length ", values.size(), " does not match shape ",
            shape_str(shape));
  auto node = std::make_shared<TensorNode<Dtype>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

template <typename Dtype>
std::span<Dtype> Tensor<Dtype>::grad() {
  FPN_CHECK(node_ && node_->requires_grad, "grad on tensor without requires_grad");
  node_->ensure_grad();
  return node_->grad;
}

template <typename Dtype>
std::span<const Dtype> Tensor<Dtype>::grad() const {
  FPN_CHECK(node_ && !node_->grad.empty(), "grad buffer not populated");
  return node_->grad;
}

template <typename Dtype>
Dtype Tensor<Dtype>::item() const {
  FPN_CHECK(node_ && node_->data.size() == 1, "item() on non-scalar tensor");
  return node_->data[0];
}

namespace {

template <typename Dtype>
void topo_visit(TensorNode<Dtype>* node,
                std::unordered_set<TensorNode<Dtype>*>& seen,
                std::vector<TensorNode<Dtype>*>& order) {
  if (seen.count(node)) return;
  seen.insert(node);
  for (auto& p : node->parents) topo_visit(p.get(), seen, order);
  order.push_back(node);
}

}  // namespace

template <typename Dtype>
void Tensor<Dtype>::backward() const {
  FPN_CHECK(node_, "backward on undefined tensor");
  FPN_CHECK(node_->data.size() == 1, "backward requires a scalar, got shape ",
            shape_str(node_->shape));
  std::unordered_set<TensorNode<Dtype>*> seen;
  std::vector<TensorNode<Dtype>*> order;
  topo_visit(node_.get(), seen, order);
  node_->ensure_grad();
  node_->grad[0] += Dtype(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<Dtype>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <typename Dtype>
Tensor<Dtype> make_op_result(Shape shape,
                             std::vector<std::shared_ptr<TensorNode<Dtype>>> parents,
                             std::function<void(TensorNode<Dtype>&)> backward_fn) {
  auto node = std::make_shared<TensorNode<Dtype>>();
  node->data.resize(static_cast<size_t>(shape_numel(shape)));
  node->shape = std::move(shape);
  node->is_leaf = false;
  bool needs_grad = false;
  for (auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  node->requires_grad = needs_grad;
  if (needs_grad) {
    for (auto& p : parents)
      if (p->requires_grad) p->ensure_grad();
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Dtype>::wrap(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_op_result<float>(
    Shape, std::vector<std::shared_ptr<TensorNode<float>>>,
    std::function<void(TensorNode<float>&)>);
template Tensor<double> make_op_result<double>(
    Shape, std::vector<std::shared_ptr<TensorNode<double>>>,
    std::function<void(TensorNode<double>&)>);

}  // namespace fpn
