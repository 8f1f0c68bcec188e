#include "fpn/backbone.hpp"

namespace fpn {

template <typename Dtype>
Backbone<Dtype>::Backbone(const BackboneConfig& config) : config_(config) {
  FPN_CHECK(config.stem_channels > 0, "stem channels must be positive");
  for (int c : config.stage_channels) FPN_CHECK(c > 0, "stage channels must be positive");
  for (int b : config.blocks_per_stage) FPN_CHECK(b >= 1, "blocks_per_stage must be >= 1");

  std::mt19937_64 rng(config.seed);
  auto conv = [&](const std::string& name, int out_c, int in_c, int k) {
    params_.add(name + ".weight",
                gaussian_init<Dtype>({out_c, in_c, k, k}, in_c * k * k, rng));
    params_.add(name + ".bias", Tensor<Dtype>::zeros({out_c}, true));
  };
  // The closing conv of each residual branch starts at zero so every block is
  // the identity (plus projection) at initialization.  Without normalization
  // layers this keeps activation magnitudes flat across stages instead of
  // compounding, which keeps early optimization stable.
  auto zero_conv = [&](const std::string& name, int out_c, int in_c, int k) {
    params_.add(name + ".weight", Tensor<Dtype>::zeros({out_c, in_c, k, k}, true));
    params_.add(name + ".bias", Tensor<Dtype>::zeros({out_c}, true));
  };

  conv("stem", config.stem_channels, 3, 3);
  int in_c = config.stem_channels;
  for (int s = 0; s < 4; ++s) {
    int out_c = config.stage_channels[s];
    for (int b = 0; b < config.blocks_per_stage[s]; ++b) {
      std::string prefix = "stage" + std::to_string(s + 2) + ".block" +
                           std::to_string(b);
      int stride = (s > 0 && b == 0) ? 2 : 1;
      conv(prefix + ".conv1", out_c, in_c, 3);
      zero_conv(prefix + ".conv2", out_c, out_c, 3);
      if (stride != 1 || in_c != out_c) conv(prefix + ".proj", out_c, in_c, 1);
      in_c = out_c;
    }
  }
}

template <typename Dtype>
Tensor<Dtype> Backbone<Dtype>::block_forward(const Tensor<Dtype>& x,
                                             const std::string& prefix,
                                             int stride, bool projected) const {
  const auto& p = params_;
  auto h = conv2d(x, p.at(prefix + ".conv1.weight"), p.at(prefix + ".conv1.bias"),
                  stride, 1);
  h = conv2d(relu(h), p.at(prefix + ".conv2.weight"), p.at(prefix + ".conv2.bias"),
             1, 1);
  // Skip path: identity when shapes already agree, so a block with zero
  // conv weights and biases acts as the identity.
  auto skip = projected ? conv2d(x, p.at(prefix + ".proj.weight"),
                                 p.at(prefix + ".proj.bias"), stride, 0)
                        : x;
  return add(skip, h);
}

template <typename Dtype>
BottomUpFeatures<Dtype> Backbone<Dtype>::forward(const Tensor<Dtype>& image) const {
  FPN_CHECK(image.shape().size() == 4 && image.shape()[1] == 3,
            "backbone expects N x 3 x H x W, got ", shape_str(image.shape()));
  const int h = image.shape()[2], w = image.shape()[3];
  FPN_CHECK(h % 32 == 0 && w % 32 == 0, "input extents must be multiples of 32, got ",
            h, "x", w);

  const auto& p = params_;
  auto x = relu(conv2d(image, p.at("stem.weight"), p.at("stem.bias"), 2, 1));
  x = max_subsample2x(x);  // stride 4 entering stage2

  BottomUpFeatures<Dtype> out;
  int in_c = config_.stem_channels;
  for (int s = 0; s < 4; ++s) {
    int out_c = config_.stage_channels[s];
    for (int b = 0; b < config_.blocks_per_stage[s]; ++b) {
      std::string prefix = "stage" + std::to_string(s + 2) + ".block" +
                           std::to_string(b);
      int stride = (s > 0 && b == 0) ? 2 : 1;
      bool projected = stride != 1 || in_c != out_c;
      x = block_forward(x, prefix, stride, projected);
      in_c = out_c;
    }
    out.c[s + 2] = x;
  }
  return out;
}

template <typename Dtype>
int64_t Backbone<Dtype>::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : params_.items()) n += p.value.numel();
  return n;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace fpn
