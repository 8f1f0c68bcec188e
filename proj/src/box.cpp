#include "fpn/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpn {

std::map<int, AnchorGrid> generate_anchors(
    const std::map<int, std::pair<int, int>>& level_shapes,
    const std::vector<double>& scales, const std::vector<double>& ratios) {
  FPN_CHECK(!level_shapes.empty(), "no levels given");
  for (const auto& [k, hw] : level_shapes)
    FPN_CHECK(k >= 2 && k <= 6, "unknown level ", k);
  // One scale per level in ascending level order; a single-level map
  // hosts the whole scale set instead.
  const bool single_level = level_shapes.size() == 1;
  std::map<int, AnchorGrid> out;
  size_t scale_idx = 0;
  for (const auto& [k, hw] : level_shapes) {
    AnchorGrid grid;
    grid.level = k;
    grid.stride = 1 << k;
    grid.ratios = ratios;
    grid.height = hw.first;
    grid.width = hw.second;
    std::vector<double> level_scales;
    if (single_level) {
      level_scales = scales;
    } else {
      FPN_CHECK(scale_idx < scales.size(), "more levels than anchor scales");
      level_scales = {scales[scale_idx++]};
      grid.scale = level_scales[0];
    }
    grid.boxes.reserve(static_cast<size_t>(hw.first) * hw.second *
                       level_scales.size() * ratios.size());
    for (int i = 0; i < hw.first; ++i) {
      for (int j = 0; j < hw.second; ++j) {
        double cx = (j + 0.5) * grid.stride;
        double cy = (i + 0.5) * grid.stride;
        for (double s : level_scales) {
          for (double r : ratios) {
            double w = s * std::sqrt(r);
            double h = s / std::sqrt(r);
            grid.boxes.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
          }
        }
      }
    }
    out.emplace(k, std::move(grid));
  }
  return out;
}

std::vector<Box> flatten_anchors(const std::map<int, AnchorGrid>& grids) {
  std::vector<Box> out;
  for (const auto& [k, grid] : grids)
    out.insert(out.end(), grid.boxes.begin(), grid.boxes.end());
  return out;
}

double iou(const Box& a, const Box& b) {
  if (a.degenerate() || b.degenerate()) return 0.0;
  double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

BoxDeltas encode_deltas(const Box& anchor, const Box& target) {
  FPN_CHECK(!anchor.degenerate(), "cannot encode against a degenerate anchor");
  BoxDeltas d;
  d.tx = (target.cx() - anchor.cx()) / anchor.width();
  d.ty = (target.cy() - anchor.cy()) / anchor.height();
  d.tw = std::log(target.width() / anchor.width());
  d.th = std::log(target.height() / anchor.height());
  return d;
}

Box decode_deltas(const Box& anchor, const BoxDeltas& deltas) {
  FPN_CHECK(!anchor.degenerate(), "cannot decode against a degenerate anchor");
  double cx = anchor.cx() + deltas.tx * anchor.width();
  double cy = anchor.cy() + deltas.ty * anchor.height();
  double w = anchor.width() * std::exp(deltas.tw);
  double h = anchor.height() * std::exp(deltas.th);
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Box clip_box(const Box& b, int image_w, int image_h) {
  Box c;
  c.x1 = std::clamp(b.x1, 0.0, static_cast<double>(image_w));
  c.y1 = std::clamp(b.y1, 0.0, static_cast<double>(image_h));
  c.x2 = std::clamp(b.x2, c.x1, static_cast<double>(image_w));
  c.y2 = std::clamp(b.y2, c.y1, static_cast<double>(image_h));
  return c;
}

std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<double>& scores, double iou_threshold,
                     int max_keep) {
  FPN_CHECK(boxes.size() == scores.size(), "boxes/scores size mismatch");
  FPN_CHECK(iou_threshold > 0 && iou_threshold < 1, "NMS threshold must be in (0,1)");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (int idx : order) {
    if (suppressed[idx]) continue;
    kept.push_back(idx);
    if (static_cast<int>(kept.size()) >= max_keep) break;
    for (int other : order) {
      if (suppressed[other] || other == idx) continue;
      if (iou(boxes[idx], boxes[other]) > iou_threshold) suppressed[other] = 1;
    }
  }
  return kept;
}

}  // namespace fpn
