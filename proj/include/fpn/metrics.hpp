#pragma once

#include <limits>

#include "fpn/detector.hpp"

namespace fpn {

// IoU thresholds 0.50, 0.55, ..., 0.95 used for averaged recall.
std::vector<double> recall_thresholds();

// Recall averaged over recall_thresholds(). Per image, the top `budget`
// proposals (by score) greedily match ground-truth boxes in score
// order; recall pools matches over the whole set of images. Only GT
// boxes with area in [min_area, max_area) count. Returns -1 when the
// bin holds no ground truth.
double average_recall(const std::vector<std::vector<Proposal>>& proposals,
                      const std::vector<std::vector<Box>>& gt_boxes, int budget,
                      double min_area = 0.0,
                      double max_area = std::numeric_limits<double>::infinity());

// Size-bin edges shared by the recall reports: small < 32^2,
// 32^2 <= medium < 96^2, large >= 96^2.
inline constexpr double kSmallMaxArea = 32.0 * 32.0;
inline constexpr double kMediumMaxArea = 96.0 * 96.0;

// Mean over classes of 101-point interpolated average precision at one
// IoU threshold. Detections are pooled across images per class, sorted
// by score, and greedily matched; each GT box matches at most once.
// Classes with no ground truth are skipped; returns -1 if nothing has
// ground truth.
double average_precision(const std::vector<std::vector<Detection>>& detections,
                         const std::vector<std::vector<Box>>& gt_boxes,
                         const std::vector<std::vector<int>>& gt_classes,
                         double iou_threshold);

// Intersection over union of two equal-size binary grids. Zero when
// both are empty.
double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

// Paints a res x res mask grid covering `region` onto a full-image
// grid; each image pixel takes the value of the grid cell its center
// falls in. Pixels outside the region stay 0.
std::vector<uint8_t> rasterize_region_mask(const Box& region,
                                           const std::vector<uint8_t>& grid,
                                           int res, int img_w, int img_h);

struct ScoredMask {
  double score = 0;
  std::vector<uint8_t> mask;  // full-image grid
};

// average_recall with mask overlap instead of box overlap.
double mask_average_recall(const std::vector<std::vector<ScoredMask>>& proposals,
                           const std::vector<std::vector<std::vector<uint8_t>>>& gt_masks,
                           int budget);

}  // namespace fpn
