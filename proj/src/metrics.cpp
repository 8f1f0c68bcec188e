#include "fpn/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace fpn {

std::vector<double> recall_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 9; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace {

// Greedy matching shared by box and mask recall: proposals arrive
// sorted by score; each takes its best-overlap unmatched GT if the
// overlap clears the threshold. Returns the match count.
int greedy_matches(const std::vector<std::vector<double>>& overlap,
                   size_t num_props, size_t num_gt, double threshold) {
  std::vector<bool> taken(num_gt, false);
  int matched = 0;
  for (size_t p = 0; p < num_props; ++p) {
    int best = -1;
    double best_v = threshold;
    for (size_t g = 0; g < num_gt; ++g) {
      if (taken[g]) continue;
      if (overlap[p][g] >= best_v) {
        best_v = overlap[p][g];
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[best] = true;
      ++matched;
    }
  }
  return matched;
}

double averaged_recall_from_overlaps(
    const std::vector<std::vector<std::vector<double>>>& per_image_overlaps,
    const std::vector<size_t>& gt_counts) {
  size_t total_gt = 0;
  for (size_t n : gt_counts) total_gt += n;
  if (total_gt == 0) return -1.0;
  double acc = 0;
  for (double thr : recall_thresholds()) {
    size_t matched = 0;
    for (size_t i = 0; i < per_image_overlaps.size(); ++i) {
      matched += greedy_matches(per_image_overlaps[i],
                                per_image_overlaps[i].size(), gt_counts[i], thr);
    }
    acc += static_cast<double>(matched) / static_cast<double>(total_gt);
  }
  return acc / recall_thresholds().size();
}

}  // namespace

double average_recall(const std::vector<std::vector<Proposal>>& proposals,
                      const std::vector<std::vector<Box>>& gt_boxes, int budget,
                      double min_area, double max_area) {
  FPN_CHECK(proposals.size() == gt_boxes.size(), "recall: image count mismatch");
  std::vector<std::vector<std::vector<double>>> overlaps(proposals.size());
  std::vector<size_t> gt_counts(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    std::vector<Box> gts;
    for (const auto& g : gt_boxes[i])
      if (g.area() >= min_area && g.area() < max_area) gts.push_back(g);
    gt_counts[i] = gts.size();

    auto props = proposals[i];
    std::stable_sort(props.begin(), props.end(),
                     [](const Proposal& a, const Proposal& b) {
                       return a.score > b.score;
                     });
    if (static_cast<int>(props.size()) > budget) props.resize(budget);
    overlaps[i].resize(props.size(), std::vector<double>(gts.size()));
    for (size_t p = 0; p < props.size(); ++p)
      for (size_t g = 0; g < gts.size(); ++g)
        overlaps[i][p][g] = iou(props[p].box, gts[g]);
  }
  return averaged_recall_from_overlaps(overlaps, gt_counts);
}

double average_precision(const std::vector<std::vector<Detection>>& detections,
                         const std::vector<std::vector<Box>>& gt_boxes,
                         const std::vector<std::vector<int>>& gt_classes,
                         double iou_threshold) {
  FPN_CHECK(detections.size() == gt_boxes.size() &&
                gt_boxes.size() == gt_classes.size(),
            "precision: image count mismatch");
  int max_class = 0;
  for (const auto& img : gt_classes)
    for (int c : img) max_class = std::max(max_class, c);
  for (const auto& img : detections)
    for (const auto& d : img) max_class = std::max(max_class, d.class_id);

  double ap_sum = 0;
  int classes_with_gt = 0;
  for (int cls = 1; cls <= max_class; ++cls) {
    // image -> this class's GT boxes; matched flags reset per class.
    std::vector<std::vector<Box>> gts(gt_boxes.size());
    size_t total_gt = 0;
    for (size_t i = 0; i < gt_boxes.size(); ++i)
      for (size_t g = 0; g < gt_boxes[i].size(); ++g)
        if (gt_classes[i][g] == cls) {
          gts[i].push_back(gt_boxes[i][g]);
          ++total_gt;
        }
    if (total_gt == 0) continue;
    ++classes_with_gt;

    struct Det {
      double score;
      size_t image;
      const Box* box;
    };
    std::vector<Det> dets;
    for (size_t i = 0; i < detections.size(); ++i)
      for (const auto& d : detections[i])
        if (d.class_id == cls) dets.push_back({d.score, i, &d.box});
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Det& a, const Det& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> taken(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) taken[i].assign(gts[i].size(), false);
    std::vector<int> tp(dets.size(), 0);
    for (size_t d = 0; d < dets.size(); ++d) {
      const auto& img_gts = gts[dets[d].image];
      int best = -1;
      double best_v = iou_threshold;
      for (size_t g = 0; g < img_gts.size(); ++g) {
        if (taken[dets[d].image][g]) continue;
        double v = iou(*dets[d].box, img_gts[g]);
        if (v >= best_v) {
          best_v = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        taken[dets[d].image][best] = true;
        tp[d] = 1;
      }
    }

    // Precision at each detection rank, then 101-point interpolation.
    std::vector<double> recall(dets.size()), precision(dets.size());
    int cum_tp = 0;
    for (size_t d = 0; d < dets.size(); ++d) {
      cum_tp += tp[d];
      recall[d] = static_cast<double>(cum_tp) / static_cast<double>(total_gt);
      precision[d] = static_cast<double>(cum_tp) / static_cast<double>(d + 1);
    }
    for (int d = static_cast<int>(dets.size()) - 2; d >= 0; --d)
      precision[d] = std::max(precision[d], precision[d + 1]);

    double ap = 0;
    for (int r = 0; r <= 100; ++r) {
      double want = r / 100.0;
      auto it = std::lower_bound(recall.begin(), recall.end(), want);
      if (it != recall.end()) ap += precision[it - recall.begin()];
    }
    ap_sum += ap / 101.0;
  }
  return classes_with_gt == 0 ? -1.0 : ap_sum / classes_with_gt;
}

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  FPN_CHECK(a.size() == b.size(), "mask iou: size mismatch ", a.size(), " vs ",
            b.size());
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<uint8_t> rasterize_region_mask(const Box& region,
                                           const std::vector<uint8_t>& grid,
                                           int res, int img_w, int img_h) {
  FPN_CHECK(static_cast<int>(grid.size()) == res * res, "bad mask grid size");
  std::vector<uint8_t> out(static_cast<size_t>(img_w) * img_h, 0);
  const double w = region.width(), h = region.height();
  if (w <= 0 || h <= 0) return out;
  const int x0 = std::max(0, static_cast<int>(std::floor(region.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(region.y1)));
  const int x1 = std::min(img_w, static_cast<int>(std::ceil(region.x2)));
  const int y1 = std::min(img_h, static_cast<int>(std::ceil(region.y2)));
  for (int y = y0; y < y1; ++y) {
    const int gy = static_cast<int>((y + 0.5 - region.y1) / h * res);
    if (gy < 0 || gy >= res) continue;
    for (int x = x0; x < x1; ++x) {
      const int gx = static_cast<int>((x + 0.5 - region.x1) / w * res);
      if (gx < 0 || gx >= res) continue;
      out[static_cast<size_t>(y) * img_w + x] = grid[gy * res + gx];
    }
  }
  return out;
}

double mask_average_recall(
    const std::vector<std::vector<ScoredMask>>& proposals,
    const std::vector<std::vector<std::vector<uint8_t>>>& gt_masks, int budget) {
  FPN_CHECK(proposals.size() == gt_masks.size(), "mask recall: image count mismatch");
  std::vector<std::vector<std::vector<double>>> overlaps(proposals.size());
  std::vector<size_t> gt_counts(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    gt_counts[i] = gt_masks[i].size();
    std::vector<const ScoredMask*> props;
    for (const auto& p : proposals[i]) props.push_back(&p);
    std::stable_sort(props.begin(), props.end(),
                     [](const ScoredMask* a, const ScoredMask* b) {
                       return a->score > b->score;
                     });
    if (static_cast<int>(props.size()) > budget) props.resize(budget);
    overlaps[i].resize(props.size(), std::vector<double>(gt_masks[i].size()));
    for (size_t p = 0; p < props.size(); ++p)
      for (size_t g = 0; g < gt_masks[i].size(); ++g)
        overlaps[i][p][g] = mask_iou(props[p]->mask, gt_masks[i][g]);
  }
  return averaged_recall_from_overlaps(overlaps, gt_counts);
}

}  // namespace fpn
