#pragma once

#include <optional>
#include <random>

#include "fpn/box.hpp"
#include "fpn/pyramid.hpp"

namespace fpn {

// Scale grid in half octaves: 32 * 2^(i/2) for i = 0..8, i.e.
// {32, 32sqrt2, 64, ..., 512}. Full octaves (even i) are handled by the
// 5x5 head on P2..P6; half octaves (odd i) by the 7x7 head on the lower
// adjacent level.
struct MaskScaleAssignment {
  int level = 0;       // pyramid level k in [2, 6]
  int head = 0;        // 0 = 5x5 head, 1 = 7x7 head
  int grid_index = 0;  // i in [0, 8]
};

// scale = max(w, h), snapped to the nearest gridpoint in log space
// (exact midpoints snap downward). Scales beyond a quarter octave off
// either end of the grid are out of band and return nullopt.
std::optional<MaskScaleAssignment> mask_scale_to_level(double mask_w, double mask_h);

// Canonical image region rendered into/out of the head at this level:
// {40, 80, 160, 320, 640} for the 5x5 head (25% padding around the
// canonical object scale), sqrt2 larger for the 7x7 head.
double mask_region_size(int level, int head);

// Binary instance mask over the full image grid, row-major.
struct InstanceMask {
  int width = 0, height = 0;
  std::vector<uint8_t> data;
  Box box;  // tight bounding box
};

template <typename Dtype>
struct MaskLevelOutput {
  Tensor<Dtype> score_logits;  // N x 1 x H x W
  Tensor<Dtype> mask_logits;   // N x res^2 x H x W
};

// Two fully convolutional heads (5x5 and 7x7 kernels, 512 hidden
// channels, sibling 1x1 mask/score outputs), each shared across all
// pyramid levels.
template <typename Dtype>
class MaskHeads {
 public:
  MaskHeads(int d, int resolution, int hidden, uint64_t seed);

  // outputs[k][head]
  std::map<int, std::array<MaskLevelOutput<Dtype>, 2>> forward(
      const FeaturePyramid<Dtype>& pyramid) const;

  ParameterMap<Dtype>& params() { return params_; }
  int resolution() const { return resolution_; }

 private:
  int d_, resolution_, hidden_;
  ParameterMap<Dtype> params_;
};

struct MaskInstanceTarget {
  int cell = 0;  // i * W + j on the level grid
  std::vector<uint8_t> mask;  // res^2 target grid
};

struct MaskLevelTargets {
  std::vector<uint8_t> positive;  // H*W score targets
  std::vector<MaskInstanceTarget> instances;
};

struct MaskTargets {
  // keyed by (level, head)
  std::map<std::pair<int, int>, MaskLevelTargets> per_level;
  int skipped_out_of_band = 0;
};

// Routes every GT instance through mask_scale_to_level; cells whose
// center lies within 2^k pixels (Chebyshev) of the object center are
// positive and carry a 14x14 rasterization of the GT mask over the
// head's canonical window centered on the cell. A target cell is 1 iff
// the GT mask covers more than half of the cell's image footprint.
MaskTargets build_mask_targets(const std::vector<InstanceMask>& gt_masks,
                               const std::map<int, std::pair<int, int>>& level_shapes,
                               int resolution);

struct MaskLossConfig {
  int sample_per_image = 128;
  double positive_fraction = 0.25;  // 1:3 positive/negative ratio
  double mask_loss_weight = 10.0;
};

template <typename Dtype>
Tensor<Dtype> mask_loss(
    const std::map<int, std::array<MaskLevelOutput<Dtype>, 2>>& outputs,
    const MaskTargets& targets, const MaskLossConfig& cfg, std::mt19937_64& rng);

struct MaskProposal {
  double score = 0;
  Box region;
  std::vector<uint8_t> mask;  // res^2, thresholded at 0.5
  int level = 0;
  int head = 0;
};

// Global top-n cells by score across all levels and heads. No NMS, no
// post-processing; each proposal carries its canonical region and the
// thresholded mask grid.
template <typename Dtype>
std::vector<MaskProposal> generate_mask_proposals(
    const std::map<int, std::array<MaskLevelOutput<Dtype>, 2>>& outputs,
    int resolution, int top_n);

}  // namespace fpn
