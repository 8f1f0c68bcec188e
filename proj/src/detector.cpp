#include "fpn/detector.hpp"

#include <algorithm>
#include <cmath>

namespace fpn {

int assign_roi_level(const Box& box, int k0) {
  FPN_CHECK(box.width() > 0 && box.height() > 0, "degenerate RoI ", box.x1, ",",
            box.y1, ",", box.x2, ",", box.y2);
  double k = k0 + std::log2(std::sqrt(box.width() * box.height()) / 224.0);
  return std::clamp(static_cast<int>(std::floor(k)), 2, 5);
}

RoI make_roi(const Box& box, int image_index, int k0) {
  return {box, image_index, assign_roi_level(box, k0)};
}

std::vector<LabeledRoI> sample_rois(const std::vector<Proposal>& proposals,
                                    const std::vector<Box>& gt_boxes,
                                    const std::vector<int>& gt_classes,
                                    const RoiSamplerConfig& cfg,
                                    std::mt19937_64& rng) {
  FPN_CHECK(gt_boxes.size() == gt_classes.size(), "gt boxes/classes mismatch");
  std::vector<LabeledRoI> fg, bg;
  for (const auto& p : proposals) {
    double best = 0;
    int best_g = -1;
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
      double v = iou(p.box, gt_boxes[g]);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best >= cfg.fg_threshold) {
      LabeledRoI r;
      r.roi = make_roi(p.box, 0);
      r.label = gt_classes[best_g];
      r.regression_target = gt_boxes[best_g];
      fg.push_back(r);
    } else if (best >= cfg.bg_low) {
      LabeledRoI r;
      r.roi = make_roi(p.box, 0);
      bg.push_back(r);
    }
  }
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  int max_fg = static_cast<int>(cfg.fg_fraction * cfg.rois_per_image);
  if (static_cast<int>(fg.size()) > max_fg) fg.resize(max_fg);
  int want_bg = cfg.rois_per_image - static_cast<int>(fg.size());
  if (static_cast<int>(bg.size()) > want_bg) bg.resize(want_bg);
  fg.insert(fg.end(), bg.begin(), bg.end());
  return fg;
}

template <typename Dtype>
DetectorHead<Dtype>::DetectorHead(int d, int num_classes, int hidden, uint64_t seed)
    : d_(d), num_classes_(num_classes), hidden_(hidden) {
  FPN_CHECK(d > 0 && num_classes > 0 && hidden > 0, "bad detector head dims");
  std::mt19937_64 rng(seed);
  const int pooled = d * 7 * 7;
  params_.add("fc1.weight", gaussian_init<Dtype>({hidden, pooled}, pooled, rng));
  params_.add("fc1.bias", Tensor<Dtype>::zeros({hidden}, true));
  params_.add("fc2.weight", gaussian_init<Dtype>({hidden, hidden}, hidden, rng));
  params_.add("fc2.bias", Tensor<Dtype>::zeros({hidden}, true));
  // Prediction layers start at zero: uniform class probabilities and
  // zero deltas, so the initial loss is well scaled regardless of the
  // pooled-feature magnitudes.
  params_.add("cls.weight", Tensor<Dtype>::zeros({num_classes + 1, hidden}, true));
  params_.add("cls.bias", Tensor<Dtype>::zeros({num_classes + 1}, true));
  params_.add("reg.weight", Tensor<Dtype>::zeros({4 * num_classes, hidden}, true));
  params_.add("reg.bias", Tensor<Dtype>::zeros({4 * num_classes}, true));
}

template <typename Dtype>
typename DetectorHead<Dtype>::Output DetectorHead<Dtype>::forward(
    const FeaturePyramid<Dtype>& pyramid, const std::vector<RoI>& rois) const {
  FPN_CHECK(!rois.empty(), "detector forward with no RoIs");
  std::vector<Tensor<Dtype>> pooled;
  pooled.reserve(rois.size());
  for (const auto& r : rois) {
    FPN_CHECK(pyramid.levels.count(r.assigned_level), "level ", r.assigned_level,
              " missing from pyramid");
    const auto& feat = pyramid.levels.at(r.assigned_level);
    const double stride = static_cast<double>(1 << r.assigned_level);
    pooled.push_back(roi_max_pool(feat, r.image_index, r.box.x1 / stride,
                                  r.box.y1 / stride, r.box.x2 / stride,
                                  r.box.y2 / stride, 7));
  }
  auto x = concat_rows(pooled);  // R x (d*49)
  x = relu(fully_connected(x, params_.at("fc1.weight"), params_.at("fc1.bias")));
  x = relu(fully_connected(x, params_.at("fc2.weight"), params_.at("fc2.bias")));
  Output out;
  out.class_logits =
      fully_connected(x, params_.at("cls.weight"), params_.at("cls.bias"));
  out.deltas = fully_connected(x, params_.at("reg.weight"), params_.at("reg.bias"));
  return out;
}

template <typename Dtype>
Tensor<Dtype> detector_loss(const typename DetectorHead<Dtype>::Output& outputs,
                            const std::vector<LabeledRoI>& rois) {
  const int r = outputs.class_logits.shape()[0];
  FPN_CHECK(static_cast<int>(rois.size()) == r, "loss rows mismatch: ",
            rois.size(), " vs ", r);
  std::vector<int> labels;
  for (const auto& roi : rois) labels.push_back(roi.label);
  auto cls = softmax_cross_entropy(outputs.class_logits, std::move(labels));

  const int reg_cols = outputs.deltas.shape()[1];
  std::vector<int64_t> idx;
  std::vector<Dtype> targets;
  for (int i = 0; i < r; ++i) {
    if (rois[i].label == 0) continue;
    BoxDeltas d = encode_deltas(rois[i].roi.box, rois[i].regression_target);
    int64_t base = static_cast<int64_t>(i) * reg_cols + 4 * (rois[i].label - 1);
    for (int c = 0; c < 4; ++c) idx.push_back(base + c);
    targets.insert(targets.end(),
                   {Dtype(d.tx), Dtype(d.ty), Dtype(d.tw), Dtype(d.th)});
  }
  if (idx.empty()) return cls;
  auto pred = gather(outputs.deltas, std::move(idx));
  auto target = Tensor<Dtype>::from_data(pred.shape(), std::move(targets));
  auto reg = scale(sum(smooth_l1(pred, target)), Dtype(1) / Dtype(r));
  return add(cls, reg);
}

template class DetectorHead<float>;
template class DetectorHead<double>;
template Tensor<float> detector_loss<float>(const DetectorHead<float>::Output&,
                                            const std::vector<LabeledRoI>&);
template Tensor<double> detector_loss<double>(const DetectorHead<double>::Output&,
                                              const std::vector<LabeledRoI>&);

}  // namespace fpn
