#pragma once

#include <functional>

#include "fpn/tensor.hpp"

namespace fpn {

// Central-difference check of a scalar-valued computation against the
// autodiff gradient. Returns the max over coordinates of
// |a - n| / max(|a|, |n|, 1e-8). The function is re-evaluated twice per
// coordinate, so keep inputs small. Meant to run at double precision.
template <typename Dtype>
Dtype grad_check(const std::function<Tensor<Dtype>(const Tensor<Dtype>&)>& f,
                 Tensor<Dtype> x, Dtype eps);

}  // namespace fpn
