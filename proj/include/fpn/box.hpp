#pragma once

#include <map>
#include <vector>

#include "fpn/common.hpp"

namespace fpn {

// Axis-aligned rectangle in input-image pixel coordinates.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return (x1 + x2) / 2; }
  double cy() const { return (y1 + y2) / 2; }
  bool degenerate() const { return width() <= 0 || height() <= 0; }
};

struct BoxDeltas {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

// Anchors of one pyramid level, flattened row-major over cells with the
// ratio index fastest. Exactly ratios.size() boxes per spatial cell.
struct AnchorGrid {
  int level = 0;
  int stride = 0;
  double scale = 0;  // side length of the square anchor area
  std::vector<double> ratios;
  int height = 0, width = 0;  // feature-map extents
  std::vector<Box> boxes;
};

// Per-level single-scale anchor generation. level_shapes maps k -> (H_k,
// W_k) for k in 2..6; multi-level pyramids get one scale per level from
// `scales`, single-level pyramids get all scales at that level. Anchors
// extending beyond the image are kept.
std::map<int, AnchorGrid> generate_anchors(
    const std::map<int, std::pair<int, int>>& level_shapes,
    const std::vector<double>& scales = {32, 64, 128, 256, 512},
    const std::vector<double>& ratios = {0.5, 1.0, 2.0});

// Pools every level's anchors in ascending level order.
std::vector<Box> flatten_anchors(const std::map<int, AnchorGrid>& grids);

double iou(const Box& a, const Box& b);

BoxDeltas encode_deltas(const Box& anchor, const Box& target);
Box decode_deltas(const Box& anchor, const BoxDeltas& deltas);

Box clip_box(const Box& b, int image_w, int image_h);

// Greedy NMS by descending score, stable tie-break by lower index.
// Suppresses IoU strictly greater than the threshold.
std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<double>& scores, double iou_threshold,
                     int max_keep);

}  // namespace fpn
