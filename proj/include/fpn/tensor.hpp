#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpn/common.hpp"

namespace fpn {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

// One node of the computation graph. Holds the forward buffer, the
// gradient buffer (allocated lazily during backward) and the closure
// that scatters this node's gradient into its parents.
template <typename Dtype>
struct TensorNode {
  Shape shape;
  std::vector<Dtype> data;
  std::vector<Dtype> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Dtype(0));
  }
};

// Value-type handle over a graph node. Copies are shallow; tensors are
// immutable after construction except for optimizer updates on leaves.
template <typename Dtype>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Dtype value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Dtype> values,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<Dtype> data() { return node_->data; }
  std::span<const Dtype> data() const { return node_->data; }
  std::span<Dtype> grad();
  std::span<const Dtype> grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  Dtype item() const;

  // Reverse pass from a scalar. Accumulates into the grad buffers of
  // every reachable node with requires_grad.
  void backward() const;

  void zero_grad() { if (node_) node_->grad.clear(); }

  std::shared_ptr<TensorNode<Dtype>> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<TensorNode<Dtype>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<TensorNode<Dtype>> node_;
};

// Result-node helper shared by all ops.
template <typename Dtype>
Tensor<Dtype> make_op_result(Shape shape,
                             std::vector<std::shared_ptr<TensorNode<Dtype>>> parents,
                             std::function<void(TensorNode<Dtype>&)> backward_fn);

}  // namespace fpn
