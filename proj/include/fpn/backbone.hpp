#pragma once

#include <array>
#include <map>

#include "fpn/ops.hpp"
#include "fpn/param.hpp"

namespace fpn {

struct BackboneConfig {
  int stem_channels = 8;
  std::array<int, 4> stage_channels{8, 16, 32, 64};  // conv2..conv5
  std::array<int, 4> blocks_per_stage{1, 1, 1, 1};
  uint64_t seed = 1;
};

// Bottom-up hierarchy {C2..C5} at strides {4, 8, 16, 32}.
template <typename Dtype>
struct BottomUpFeatures {
  std::map<int, Tensor<Dtype>> c;  // k -> N x channels_k x H/2^k x W/2^k
};

// Small residual network: a stride-4 stem (conv1 stays out of the
// pyramid), then four stages of two-conv residual blocks. The output of
// each stage is its last block. No batch normalization; desk-scale
// batches make it unreliable.
template <typename Dtype>
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& config);

  // image must be N x 3 x H x W with H, W multiples of 32.
  BottomUpFeatures<Dtype> forward(const Tensor<Dtype>& image) const;

  ParameterMap<Dtype>& params() { return params_; }
  const BackboneConfig& config() const { return config_; }
  int64_t parameter_count() const;

 private:
  Tensor<Dtype> block_forward(const Tensor<Dtype>& x, const std::string& prefix,
                              int stride, bool projected) const;

  BackboneConfig config_;
  ParameterMap<Dtype> params_;
};

}  // namespace fpn
