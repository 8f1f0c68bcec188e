#pragma once

#include <random>

#include "fpn/box.hpp"
#include "fpn/pyramid.hpp"

namespace fpn {

struct Proposal {
  Box box;
  double score = 0;
};

template <typename Dtype>
struct RpnLevelOutput {
  Tensor<Dtype> logits;  // N x A x H x W, one objectness logit per ratio
  Tensor<Dtype> deltas;  // N x 4A x H x W
};

// One 3x3 conv plus sibling 1x1 cls/reg convs, applied to every pyramid
// level. Parameters are shared across levels; the unshared mode keeps a
// copy per level.
template <typename Dtype>
class RpnHead {
 public:
  RpnHead(int d, int anchors_per_cell, bool shared, std::vector<int> levels,
          uint64_t seed);

  std::map<int, RpnLevelOutput<Dtype>> forward(
      const FeaturePyramid<Dtype>& pyramid) const;

  ParameterMap<Dtype>& params() { return params_; }
  int anchors_per_cell() const { return anchors_per_cell_; }
  bool shared() const { return shared_; }

 private:
  int d_;
  int anchors_per_cell_;
  bool shared_;
  std::vector<int> levels_;
  ParameterMap<Dtype> params_;
};

enum class AnchorLabel : uint8_t { negative = 0, positive = 1, ignore = 2 };

struct AnchorLabels {
  std::vector<AnchorLabel> label;
  std::vector<int> matched_gt;  // valid where label == positive
};

// Pure-IoU assignment over the pooled anchors of all levels: IoU > 0.7
// with any GT, or being some GT's argmax anchor (ties included), makes
// an anchor positive; max IoU < 0.3 over all GT makes it negative;
// everything else is ignored. GT scale never enters the rule.
AnchorLabels assign_anchor_labels(const std::vector<Box>& anchors,
                                  const std::vector<Box>& gt_boxes);

struct RpnLossConfig {
  int batch_anchors = 256;
  int max_positives = 128;  // half the batch
};

// Sampled objectness + box-regression loss for a single image (N = 1
// outputs). Anchors/labels follow flatten_anchors ordering. The caller
// owns the RNG so training stays reproducible.
template <typename Dtype>
Tensor<Dtype> rpn_loss(const std::map<int, RpnLevelOutput<Dtype>>& outputs,
                       const std::map<int, AnchorGrid>& anchors,
                       const AnchorLabels& labels, const std::vector<Box>& gt_boxes,
                       const RpnLossConfig& cfg, std::mt19937_64& rng);

struct ProposalConfig {
  int pre_nms_top_n = 1000;  // per level
  double nms_threshold = 0.7;
  int post_nms_top_n = 1000;
  double min_side = 1.0;
};

// Per-level top-k by objectness, decode, clip, pooled cross-level NMS,
// then top post_nms_top_n by score.
template <typename Dtype>
std::vector<Proposal> generate_proposals(
    const std::map<int, RpnLevelOutput<Dtype>>& outputs,
    const std::map<int, AnchorGrid>& anchors, int image_w, int image_h,
    const ProposalConfig& cfg, bool apply_nms = true);

}  // namespace fpn
