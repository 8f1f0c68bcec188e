#include "fpn/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpn {

template <typename Dtype>
RpnHead<Dtype>::RpnHead(int d, int anchors_per_cell, bool shared,
                        std::vector<int> levels, uint64_t seed)
    : d_(d), anchors_per_cell_(anchors_per_cell), shared_(shared),
      levels_(std::move(levels)) {
  FPN_CHECK(d > 0 && anchors_per_cell > 0, "bad head dims");
  std::mt19937_64 rng(seed);
  auto make = [&](const std::string& prefix) {
    params_.add(prefix + "conv.weight", gaussian_init<Dtype>({d_, d_, 3, 3}, d_ * 9, rng));
    params_.add(prefix + "conv.bias", Tensor<Dtype>::zeros({d_}, true));
    // Prediction layers start at zero: every anchor begins at probability 0.5
    // with zero deltas, so the initial loss is well scaled regardless of the
    // feature magnitudes feeding the head.
    params_.add(prefix + "cls.weight",
                Tensor<Dtype>::zeros({anchors_per_cell_, d_, 1, 1}, true));
    params_.add(prefix + "cls.bias", Tensor<Dtype>::zeros({anchors_per_cell_}, true));
    params_.add(prefix + "reg.weight",
                Tensor<Dtype>::zeros({4 * anchors_per_cell_, d_, 1, 1}, true));
    params_.add(prefix + "reg.bias",
                Tensor<Dtype>::zeros({4 * anchors_per_cell_}, true));
  };
  if (shared_) {
    make("");
  } else {
    for (int k : levels_) make("level" + std::to_string(k) + ".");
  }
}

template <typename Dtype>
std::map<int, RpnLevelOutput<Dtype>> RpnHead<Dtype>::forward(
    const FeaturePyramid<Dtype>& pyramid) const {
  std::map<int, RpnLevelOutput<Dtype>> out;
  for (const auto& [k, feat] : pyramid.levels) {
    FPN_CHECK(feat.shape()[1] == d_, "pyramid channels ", feat.shape()[1],
              " do not match head input ", d_);
    std::string prefix = shared_ ? "" : "level" + std::to_string(k) + ".";
    FPN_CHECK(shared_ || params_.contains(prefix + "conv.weight"),
              "unshared head has no parameters for level ", k);
    auto h = relu(conv2d(feat, params_.at(prefix + "conv.weight"),
                         params_.at(prefix + "conv.bias"), 1, 1));
    RpnLevelOutput<Dtype> o;
    o.logits = conv2d(h, params_.at(prefix + "cls.weight"),
                      params_.at(prefix + "cls.bias"), 1, 0);
    o.deltas = conv2d(h, params_.at(prefix + "reg.weight"),
                      params_.at(prefix + "reg.bias"), 1, 0);
    out.emplace(k, std::move(o));
  }
  return out;
}

AnchorLabels assign_anchor_labels(const std::vector<Box>& anchors,
                                  const std::vector<Box>& gt_boxes) {
  FPN_CHECK(!anchors.empty(), "no anchors to label");
  const size_t n = anchors.size(), m = gt_boxes.size();
  AnchorLabels out;
  out.label.assign(n, AnchorLabel::negative);
  out.matched_gt.assign(n, -1);
  if (m == 0) return out;

  std::vector<double> best_iou(n, 0.0);
  std::vector<double> gt_best(m, 0.0);
  for (size_t a = 0; a < n; ++a) {
    for (size_t g = 0; g < m; ++g) {
      double v = iou(anchors[a], gt_boxes[g]);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        out.matched_gt[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  for (size_t a = 0; a < n; ++a) {
    if (best_iou[a] > 0.7)
      out.label[a] = AnchorLabel::positive;
    else if (best_iou[a] >= 0.3)
      out.label[a] = AnchorLabel::ignore;
  }
  // Each GT's argmax anchors are positive even below 0.7; ties all count.
  for (size_t g = 0; g < m; ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (size_t a = 0; a < n; ++a) {
      if (iou(anchors[a], gt_boxes[g]) == gt_best[g]) {
        out.label[a] = AnchorLabel::positive;
        out.matched_gt[a] = static_cast<int>(g);
      }
    }
  }
  return out;
}

namespace {

// Flat anchor index -> (level tensor offsets). Walks grids in ascending
// level order, cells row-major, ratio fastest, mirroring flatten_anchors.
struct AnchorRef {
  int level;
  int64_t logit_offset;  // into the level's logits
  int64_t delta_offset;  // first of 4 consecutive channels' base
  int spatial;           // H*W of the level
};

std::vector<AnchorRef> build_anchor_refs(const std::map<int, AnchorGrid>& anchors) {
  std::vector<AnchorRef> refs;
  for (const auto& [k, grid] : anchors) {
    const int a_per_cell = static_cast<int>(grid.boxes.size()) /
                           (grid.height * grid.width);
    const int hw = grid.height * grid.width;
    for (int i = 0; i < grid.height; ++i)
      for (int j = 0; j < grid.width; ++j)
        for (int r = 0; r < a_per_cell; ++r) {
          AnchorRef ref;
          ref.level = k;
          ref.spatial = hw;
          ref.logit_offset = static_cast<int64_t>(r) * hw + i * grid.width + j;
          ref.delta_offset = static_cast<int64_t>(4 * r) * hw + i * grid.width + j;
          refs.push_back(ref);
        }
  }
  return refs;
}

}  // namespace

template <typename Dtype>
Tensor<Dtype> rpn_loss(const std::map<int, RpnLevelOutput<Dtype>>& outputs,
                       const std::map<int, AnchorGrid>& anchors,
                       const AnchorLabels& labels, const std::vector<Box>& gt_boxes,
                       const RpnLossConfig& cfg, std::mt19937_64& rng) {
  auto refs = build_anchor_refs(anchors);
  FPN_CHECK(refs.size() == labels.label.size(), "labels misaligned: ",
            labels.label.size(), " labels for ", refs.size(), " anchors");
  auto flat = flatten_anchors(anchors);

  std::vector<int64_t> positives, negatives;
  for (size_t a = 0; a < labels.label.size(); ++a) {
    if (labels.label[a] == AnchorLabel::positive)
      positives.push_back(static_cast<int64_t>(a));
    else if (labels.label[a] == AnchorLabel::negative)
      negatives.push_back(static_cast<int64_t>(a));
  }
  std::shuffle(positives.begin(), positives.end(), rng);
  std::shuffle(negatives.begin(), negatives.end(), rng);
  if (static_cast<int>(positives.size()) > cfg.max_positives)
    positives.resize(cfg.max_positives);
  int want_neg = cfg.batch_anchors - static_cast<int>(positives.size());
  if (static_cast<int>(negatives.size()) > want_neg) negatives.resize(want_neg);

  const int sample_count = static_cast<int>(positives.size() + negatives.size());
  FPN_CHECK(sample_count > 0, "empty anchor sample");

  // Classification term: gather sampled logits per level and average.
  // Targets are collected per level too so they stay aligned with the
  // level-grouped concatenation.
  std::map<int, std::vector<int64_t>> level_logit_idx;
  std::map<int, std::vector<Dtype>> level_targets;
  auto push_cls = [&](int64_t a, Dtype target) {
    level_logit_idx[refs[a].level].push_back(refs[a].logit_offset);
    level_targets[refs[a].level].push_back(target);
  };
  for (int64_t a : positives) push_cls(a, Dtype(1));
  for (int64_t a : negatives) push_cls(a, Dtype(0));

  std::vector<Tensor<Dtype>> logit_parts;
  std::vector<Dtype> targets;
  for (auto& [k, idx] : level_logit_idx) {
    logit_parts.push_back(gather(outputs.at(k).logits, idx));
    targets.insert(targets.end(), level_targets[k].begin(), level_targets[k].end());
  }
  // Single flat vector keeps the mean exact over the whole sample.
  std::vector<Tensor<Dtype>> one{concat_flat(logit_parts)};
  Tensor<Dtype> cls = bce_with_logits(one[0], std::move(targets));

  if (positives.empty()) return cls;

  // Regression term on positives, normalized by the sample count.
  std::map<int, std::vector<int64_t>> level_delta_idx;
  std::map<int, std::vector<Dtype>> level_delta_targets;
  for (int64_t a : positives) {
    const auto& ref = refs[a];
    const Box& anchor = flat[a];
    const Box& gt = gt_boxes[labels.matched_gt[a]];
    BoxDeltas d = encode_deltas(anchor, gt);
    for (int c = 0; c < 4; ++c)
      level_delta_idx[ref.level].push_back(ref.delta_offset +
                                           static_cast<int64_t>(c) * ref.spatial);
    auto& lt = level_delta_targets[ref.level];
    lt.insert(lt.end(), {Dtype(d.tx), Dtype(d.ty), Dtype(d.tw), Dtype(d.th)});
  }
  std::vector<Tensor<Dtype>> delta_parts;
  std::vector<Dtype> delta_targets;
  for (auto& [k, idx] : level_delta_idx) {
    delta_parts.push_back(gather(outputs.at(k).deltas, idx));
    delta_targets.insert(delta_targets.end(), level_delta_targets[k].begin(),
                         level_delta_targets[k].end());
  }
  auto pred = concat_flat(delta_parts);
  auto target = Tensor<Dtype>::from_data(pred.shape(), std::move(delta_targets));
  auto reg = scale(sum(smooth_l1(pred, target)), Dtype(1) / Dtype(sample_count));
  return add(cls, reg);
}

template <typename Dtype>
std::vector<Proposal> generate_proposals(
    const std::map<int, RpnLevelOutput<Dtype>>& outputs,
    const std::map<int, AnchorGrid>& anchors, int image_w, int image_h,
    const ProposalConfig& cfg, bool apply_nms) {
  std::vector<Proposal> pooled;
  for (const auto& [k, grid] : anchors) {
    const auto& o = outputs.at(k);
    const int hw = grid.height * grid.width;
    const int a_per_cell = static_cast<int>(grid.boxes.size()) / hw;
    FPN_CHECK(o.logits.shape()[1] == a_per_cell, "logit channels ",
              o.logits.shape()[1], " vs ", a_per_cell, " anchors per cell");

    std::vector<std::pair<double, int>> scored;  // (score, anchor idx in grid)
    scored.reserve(grid.boxes.size());
    for (int i = 0; i < grid.height; ++i)
      for (int j = 0; j < grid.width; ++j)
        for (int r = 0; r < a_per_cell; ++r) {
          double z = o.logits.data()[static_cast<int64_t>(r) * hw +
                                     i * grid.width + j];
          double score = 1.0 / (1.0 + std::exp(-z));
          scored.emplace_back(score, (i * grid.width + j) * a_per_cell + r);
        }
    int keep = std::min<int>(cfg.pre_nms_top_n, static_cast<int>(scored.size()));
    std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                      [](auto& a, auto& b) {
                        return a.first > b.first ||
                               (a.first == b.first && a.second < b.second);
                      });
    scored.resize(keep);
    for (auto& [score, idx] : scored) {
      int cell = idx / a_per_cell, r = idx % a_per_cell;
      int i = cell / grid.width, j = cell % grid.width;
      BoxDeltas d;
      int64_t base = static_cast<int64_t>(4 * r) * hw + i * grid.width + j;
      d.tx = o.deltas.data()[base];
      d.ty = o.deltas.data()[base + hw];
      d.tw = o.deltas.data()[base + 2 * hw];
      d.th = o.deltas.data()[base + 3 * hw];
      Box b = clip_box(decode_deltas(grid.boxes[idx], d), image_w, image_h);
      if (b.width() < cfg.min_side || b.height() < cfg.min_side) continue;
      pooled.push_back({b, score});
    }
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
  if (!apply_nms) {
    if (static_cast<int>(pooled.size()) > cfg.post_nms_top_n)
      pooled.resize(cfg.post_nms_top_n);
    return pooled;
  }
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (auto& p : pooled) {
    boxes.push_back(p.box);
    scores.push_back(p.score);
  }
  auto kept = nms(boxes, scores, cfg.nms_threshold, cfg.post_nms_top_n);
  std::vector<Proposal> out;
  for (int idx : kept) out.push_back(pooled[idx]);
  return out;
}

#define FPN_INSTANTIATE_RPN(T)                                               \
  template class RpnHead<T>;                                                 \
  template Tensor<T> rpn_loss(const std::map<int, RpnLevelOutput<T>>&,       \
                              const std::map<int, AnchorGrid>&,              \
                              const AnchorLabels&, const std::vector<Box>&,  \
                              const RpnLossConfig&, std::mt19937_64&);       \
  template std::vector<Proposal> generate_proposals(                         \
      const std::map<int, RpnLevelOutput<T>>&, const std::map<int, AnchorGrid>&, \
      int, int, const ProposalConfig&, bool);

FPN_INSTANTIATE_RPN(float)
FPN_INSTANTIATE_RPN(double)

}  // namespace fpn
