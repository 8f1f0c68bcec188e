#include "fpn/pyramid.hpp"

#include <cmath>

namespace fpn {

PyramidVariant parse_variant(const std::string& name) {
  if (name == "fpn") return PyramidVariant::full_fpn;
  if (name == "bottomup") return PyramidVariant::bottom_up_only;
  if (name == "nolateral") return PyramidVariant::top_down_no_lateral;
  if (name == "finest") return PyramidVariant::finest_only;
  fail("unknown pyramid variant '", name, "' (fpn|bottomup|nolateral|finest)");
}

std::string variant_name(PyramidVariant v) {
  switch (v) {
    case PyramidVariant::full_fpn: return "fpn";
    case PyramidVariant::bottom_up_only: return "bottomup";
    case PyramidVariant::top_down_no_lateral: return "nolateral";
    case PyramidVariant::finest_only: return "finest";
  }
  fail("bad variant enum");
}

template <typename Dtype>
FpnBuilder<Dtype>::FpnBuilder(const std::array<int, 4>& backbone_channels, int d,
                              PyramidVariant variant, uint64_t seed)
    : d_(d), variant_(variant) {
  FPN_CHECK(d > 0, "pyramid channel count must be positive");
  std::mt19937_64 rng(seed);
  auto conv = [&](const std::string& name, int out_c, int in_c, int k) {
    params_.add(name + ".weight",
                gaussian_init<Dtype>({out_c, in_c, k, k}, in_c * k * k, rng));
    params_.add(name + ".bias", Tensor<Dtype>::zeros({out_c}, true));
  };
  // top_down_no_lateral keeps only the 1x1 on C5; the other variants
  // have one lateral per level.
  for (int k = 2; k <= 5; ++k) {
    if (variant == PyramidVariant::top_down_no_lateral && k != 5) continue;
    conv("lateral." + std::to_string(k), d, backbone_channels[k - 2], 1);
  }
  for (int k = 2; k <= 5; ++k) conv("output." + std::to_string(k), d, d, 3);
}

template <typename Dtype>
FeaturePyramid<Dtype> FpnBuilder<Dtype>::build(const BottomUpFeatures<Dtype>& c,
                                               bool with_p6) const {
  const auto& p = params_;
  auto lateral = [&](int k) {
    const auto& x = c.c.at(k);
    std::string name = "lateral." + std::to_string(k);
    FPN_CHECK(p.contains(name + ".weight"), "no lateral for level ", k,
              " in variant ", variant_name(variant_));
    return conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), 1, 0);
  };
  auto smooth = [&](int k, const Tensor<Dtype>& x) {
    std::string name = "output." + std::to_string(k);
    return conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), 1, 1);
  };

  FeaturePyramid<Dtype> pyr;
  pyr.d = d_;
  if (variant_ == PyramidVariant::bottom_up_only) {
    for (int k = 2; k <= 5; ++k) pyr.levels[k] = smooth(k, lateral(k));
  } else {
    // top-down chain from the 1x1 on C5
    std::map<int, Tensor<Dtype>> merged;
    merged[5] = lateral(5);
    for (int k = 4; k >= 2; --k) {
      auto up = nearest_upsample2x(merged[k + 1]);
      merged[k] = variant_ == PyramidVariant::top_down_no_lateral
                      ? up
                      : add(up, lateral(k));
    }
    for (int k = 2; k <= 5; ++k) pyr.levels[k] = smooth(k, merged[k]);
    if (variant_ == PyramidVariant::finest_only) {
      auto p2 = pyr.levels[2];
      pyr.levels.clear();
      pyr.levels[2] = p2;
      return pyr;
    }
  }
  if (with_p6) {
    const auto& p5 = pyr.levels.at(5);
    FPN_CHECK(p5.shape()[2] % 2 == 0 && p5.shape()[3] % 2 == 0,
              "P5 extents must be even to form P6, got ", shape_str(p5.shape()));
    pyr.levels[6] = max_subsample2x(p5);
    pyr.has_p6 = true;
  }
  return pyr;
}

template <typename Dtype>
std::map<int, Dtype> pyramid_grad_flow(const FpnBuilder<Dtype>& builder,
                                       const BottomUpFeatures<Dtype>& c,
                                       int loss_level) {
  for (const auto& [k, t] : c.c)
    FPN_CHECK(t.requires_grad(), "C", k, " must be a leaf requiring grad");
  auto pyr = builder.build(c, false);
  auto loss = sum(pyr.levels.at(loss_level));
  loss.backward();
  std::map<int, Dtype> norms;
  for (const auto& [k, t] : c.c) {
    Dtype acc = 0;
    const auto& g = t.node()->grad;
    for (Dtype v : g) acc += std::abs(v);
    norms[k] = acc;
  }
  return norms;
}

template class FpnBuilder<float>;
template class FpnBuilder<double>;
template std::map<int, float> pyramid_grad_flow(
    const FpnBuilder<float>&, const BottomUpFeatures<float>&, int);
template std::map<int, double> pyramid_grad_flow(
    const FpnBuilder<double>&, const BottomUpFeatures<double>&, int);

}  // namespace fpn
