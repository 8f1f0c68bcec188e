#pragma once

#include <vector>

#include "fpn/tensor.hpp"

namespace fpn {

// All ops are pure: inputs are never modified and repeated calls on the
// same inputs produce bit-identical outputs. Broadcasting is not
// supported anywhere; shapes must agree exactly.

template <typename Dtype>
Tensor<Dtype> conv2d(const Tensor<Dtype>& input, const Tensor<Dtype>& weight,
                     const Tensor<Dtype>& bias, int stride, int padding);

template <typename Dtype>
Tensor<Dtype> nearest_upsample2x(const Tensor<Dtype>& input);

// Stride-2 max subsampling over 2x2 blocks; H and W must be even.
// Gradient is routed to the argmax cell, ties to the first index in
// row-major order.
template <typename Dtype>
Tensor<Dtype> max_subsample2x(const Tensor<Dtype>& input);

template <typename Dtype>
Tensor<Dtype> add(const Tensor<Dtype>& a, const Tensor<Dtype>& b);

template <typename Dtype>
Tensor<Dtype> mul(const Tensor<Dtype>& a, const Tensor<Dtype>& b);

template <typename Dtype>
Tensor<Dtype> scale(const Tensor<Dtype>& x, Dtype factor);

template <typename Dtype>
Tensor<Dtype> relu(const Tensor<Dtype>& x);

template <typename Dtype>
Tensor<Dtype> sigmoid(const Tensor<Dtype>& x);

// x: N x F (or any shape flattened to rows of F), weight: O x F, bias: O
// (may be undefined). Returns N x O.
template <typename Dtype>
Tensor<Dtype> fully_connected(const Tensor<Dtype>& x, const Tensor<Dtype>& weight,
                              const Tensor<Dtype>& bias);

template <typename Dtype>
Tensor<Dtype> reshape(const Tensor<Dtype>& x, Shape new_shape);

template <typename Dtype>
Tensor<Dtype> sum(const Tensor<Dtype>& x);

// Picks flat indices out of x into a 1-D tensor; backward scatter-adds.
template <typename Dtype>
Tensor<Dtype> gather(const Tensor<Dtype>& x, std::vector<int64_t> indices);

// Flattens each part to a row; all parts must have equal numel.
template <typename Dtype>
Tensor<Dtype> concat_rows(const std::vector<Tensor<Dtype>>& parts);

// Concatenates parts of any shape into one 1-D tensor.
template <typename Dtype>
Tensor<Dtype> concat_flat(const std::vector<Tensor<Dtype>>& parts);

// logits: N x K, labels: one class index per row. Mean loss over rows.
template <typename Dtype>
Tensor<Dtype> softmax_cross_entropy(const Tensor<Dtype>& logits,
                                    std::vector<int> labels);

// p: probabilities in (0,1); y: targets of the same shape. Mean loss.
template <typename Dtype>
Tensor<Dtype> binary_cross_entropy(const Tensor<Dtype>& p, const Tensor<Dtype>& y);

// Numerically stable sigmoid + binary cross-entropy over a flat logit
// tensor with constant targets. Mean loss.
template <typename Dtype>
Tensor<Dtype> bce_with_logits(const Tensor<Dtype>& logits,
                              std::vector<Dtype> targets);

// Element-wise smooth L1 (quadratic for |d| < 1, linear beyond).
template <typename Dtype>
Tensor<Dtype> smooth_l1(const Tensor<Dtype>& pred, const Tensor<Dtype>& target);

// Quantized RoI max pooling. Box is in feature-map coordinates (already
// divided by stride); edges are floor/ceil quantized, each bin takes a
// max, gradients route to the argmax cells. Output C x out_size x out_size.
template <typename Dtype>
Tensor<Dtype> roi_max_pool(const Tensor<Dtype>& features, int batch_index,
                           double fx1, double fy1, double fx2, double fy2,
                           int out_size);

}  // namespace fpn
