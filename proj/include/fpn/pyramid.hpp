#pragma once

#include <map>
#include <string>

#include "fpn/backbone.hpp"

namespace fpn {

enum class PyramidVariant { full_fpn, bottom_up_only, top_down_no_lateral, finest_only };

PyramidVariant parse_variant(const std::string& name);
std::string variant_name(PyramidVariant v);

template <typename Dtype>
struct FeaturePyramid {
  std::map<int, Tensor<Dtype>> levels;  // k -> N x d x H/2^k x W/2^k
  int d = 0;
  bool has_p6 = false;
};

// Builds {P2..P5} (+P6) from {C2..C5}: 1x1 laterals, x2 nearest
// upsampling, merge by addition, 3x3 output convolutions. No
// non-linearities anywhere in these layers. P6 is a parameter-free
// stride-2 subsampling of P5.
template <typename Dtype>
class FpnBuilder {
 public:
  // backbone_channels: channel count of C_k for k=2..5.
  FpnBuilder(const std::array<int, 4>& backbone_channels, int d,
             PyramidVariant variant, uint64_t seed);

  FeaturePyramid<Dtype> build(const BottomUpFeatures<Dtype>& c, bool with_p6) const;

  ParameterMap<Dtype>& params() { return params_; }
  PyramidVariant variant() const { return variant_; }
  int d() const { return d_; }

 private:
  int d_;
  PyramidVariant variant_;
  ParameterMap<Dtype> params_;
};

// L1 norm of the gradient reaching each C_k from a sum-loss placed on
// pyramid level `loss_level`. The C_k must be leaf tensors with
// requires_grad so the result reflects only the pyramid's own routing.
template <typename Dtype>
std::map<int, Dtype> pyramid_grad_flow(const FpnBuilder<Dtype>& builder,
                                       const BottomUpFeatures<Dtype>& c,
                                       int loss_level);

}  // namespace fpn
