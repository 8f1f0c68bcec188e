#pragma once

#include <random>

#include "fpn/rpn.hpp"

namespace fpn {

struct RoI {
  Box box;
  int image_index = 0;
  int assigned_level = 0;  // in [2, 5]
};

// k = clamp(floor(k0 + log2(sqrt(w h) / 224)), 2, 5). P6 is never used
// by the detector, and values beyond the pyramid clamp into [2, 5].
int assign_roi_level(const Box& box, int k0 = 4);

struct Detection {
  int class_id = 0;  // 1-based over foreground classes
  double score = 0;
  Box box;
};

struct LabeledRoI {
  RoI roi;
  int label = 0;        // 0 = background, else 1-based class
  Box regression_target;  // valid for foreground
};

struct RoiSamplerConfig {
  int rois_per_image = 512;
  double fg_threshold = 0.5;
  double bg_low = 0.1;
  double fg_fraction = 0.25;
};

// IoU >= 0.5 against some GT makes a proposal foreground with that GT's
// class; IoU in [0.1, 0.5) background; lower-overlap proposals are
// dropped. Foreground capped at a quarter of the sample.
std::vector<LabeledRoI> sample_rois(const std::vector<Proposal>& proposals,
                                    const std::vector<Box>& gt_boxes,
                                    const std::vector<int>& gt_classes,
                                    const RoiSamplerConfig& cfg,
                                    std::mt19937_64& rng);

// 7x7 RoI pooling -> two hidden fc layers -> sibling class logits and
// class-specific deltas. One parameter set for all levels.
template <typename Dtype>
class DetectorHead {
 public:
  DetectorHead(int d, int num_classes, int hidden, uint64_t seed);

  struct Output {
    Tensor<Dtype> class_logits;  // R x (num_classes + 1)
    Tensor<Dtype> deltas;        // R x 4*num_classes
  };

  Output forward(const FeaturePyramid<Dtype>& pyramid,
                 const std::vector<RoI>& rois) const;

  ParameterMap<Dtype>& params() { return params_; }
  int num_classes() const { return num_classes_; }

 private:
  int d_, num_classes_, hidden_;
  ParameterMap<Dtype> params_;
};

// Softmax cross-entropy over classes plus smooth-L1 on the matched
// class's deltas for foreground rows, normalized by the row count.
template <typename Dtype>
Tensor<Dtype> detector_loss(const typename DetectorHead<Dtype>::Output& outputs,
                            const std::vector<LabeledRoI>& rois);

RoI make_roi(const Box& box, int image_index, int k0 = 4);

}  // namespace fpn
