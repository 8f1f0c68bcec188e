#include "fpn/mask.hpp"

#include <algorithm>
#include <cmath>

#include "fpn/ops.hpp"

namespace fpn {

namespace {
constexpr int kGridPoints = 9;  // half-octave grid 32 .. 512

double grid_scale(int i) { return 32.0 * std::pow(2.0, i / 2.0); }
}  // namespace

std::optional<MaskScaleAssignment> mask_scale_to_level(double mask_w, double mask_h) {
  const double s = std::max(mask_w, mask_h);
  if (s <= 0) return std::nullopt;
  // Position in half-octave units above 32.
  const double t = 2.0 * std::log2(s / 32.0);
  // Band edges extend a quarter octave past the end gridpoints.
  if (t < -0.5 - 1e-9 || t > kGridPoints - 0.5 + 1e-9) return std::nullopt;
  // Nearest gridpoint, exact midpoints snap downward.
  const int i =
      std::clamp(static_cast<int>(std::ceil(t - 0.5)), 0, kGridPoints - 1);
  MaskScaleAssignment a;
  a.grid_index = i;
  if (i % 2 == 0) {
    a.head = 0;
    a.level = 2 + i / 2;
  } else {
    a.head = 1;
    a.level = 2 + (i - 1) / 2;
  }
  return a;
}

double mask_region_size(int level, int head) {
  FPN_CHECK(level >= 2 && level <= 6, "mask region: bad level ", level);
  const double base = 40.0 * std::pow(2.0, level - 2);
  return head == 0 ? base : base * std::sqrt(2.0);
}

template <typename Dtype>
MaskHeads<Dtype>::MaskHeads(int d, int resolution, int hidden, uint64_t seed)
    : d_(d), resolution_(resolution), hidden_(hidden) {
  FPN_CHECK(d > 0 && resolution > 0 && hidden > 0, "bad mask head dims");
  std::mt19937_64 rng(seed);
  const int out = resolution * resolution;
  for (int k : {5, 7}) {
    const std::string p = "head" + std::to_string(k) + ".";
    params_.add(p + "conv.weight",
                gaussian_init<Dtype>({hidden_, d_, k, k}, d_ * k * k, rng));
    params_.add(p + "conv.bias", Tensor<Dtype>::zeros({hidden_}, true));
    // Prediction layers start at zero so every cell begins at probability
    // 0.5 for both the score and each mask pixel, giving a well scaled
    // initial loss no matter the feature magnitudes.
    params_.add(p + "mask.weight", Tensor<Dtype>::zeros({out, hidden_, 1, 1}, true));
    params_.add(p + "mask.bias", Tensor<Dtype>::zeros({out}, true));
    params_.add(p + "score.weight", Tensor<Dtype>::zeros({1, hidden_, 1, 1}, true));
    params_.add(p + "score.bias", Tensor<Dtype>::zeros({1}, true));
  }
}

template <typename Dtype>
std::map<int, std::array<MaskLevelOutput<Dtype>, 2>> MaskHeads<Dtype>::forward(
    const FeaturePyramid<Dtype>& pyramid) const {
  FPN_CHECK(pyramid.d == d_, "mask heads built for d=", d_, ", pyramid has d=",
            pyramid.d);
  std::map<int, std::array<MaskLevelOutput<Dtype>, 2>> out;
  for (const auto& [level, feat] : pyramid.levels) {
    std::array<MaskLevelOutput<Dtype>, 2> pair;
    for (int h = 0; h < 2; ++h) {
      const int k = h == 0 ? 5 : 7;
      const std::string p = "head" + std::to_string(k) + ".";
      auto hidden = relu(conv2d(feat, params_.at(p + "conv.weight"),
                                params_.at(p + "conv.bias"), 1, k / 2));
      pair[h].mask_logits = conv2d(hidden, params_.at(p + "mask.weight"),
                                   params_.at(p + "mask.bias"), 1, 0);
      pair[h].score_logits = conv2d(hidden, params_.at(p + "score.weight"),
                                    params_.at(p + "score.bias"), 1, 0);
    }
    out[level] = std::move(pair);
  }
  return out;
}

namespace {

// Fraction of the rectangle [x0,x1) x [y0,y1) covered by the instance
// mask, integrating partial pixel overlap. Off-image area counts as
// uncovered.
double mask_coverage(const InstanceMask& m, double x0, double y0, double x1,
                     double y1) {
  const double area = (x1 - x0) * (y1 - y0);
  if (area <= 0) return 0.0;
  const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int px1 = std::min(m.width, static_cast<int>(std::ceil(x1)));
  const int py1 = std::min(m.height, static_cast<int>(std::ceil(y1)));
  double covered = 0.0;
  for (int py = py0; py < py1; ++py) {
    const double oy = std::min<double>(py + 1, y1) - std::max<double>(py, y0);
    if (oy <= 0) continue;
    const uint8_t* row = m.data.data() + static_cast<size_t>(py) * m.width;
    for (int px = px0; px < px1; ++px) {
      if (!row[px]) continue;
      const double ox = std::min<double>(px + 1, x1) - std::max<double>(px, x0);
      if (ox > 0) covered += ox * oy;
    }
  }
  return covered / area;
}

}  // namespace

MaskTargets build_mask_targets(const std::vector<InstanceMask>& gt_masks,
                               const std::map<int, std::pair<int, int>>& level_shapes,
                               int resolution) {
  MaskTargets targets;
  for (const auto& [level, hw] : level_shapes) {
    for (int head = 0; head < 2; ++head) {
      auto& t = targets.per_level[{level, head}];
      t.positive.assign(static_cast<size_t>(hw.first) * hw.second, 0);
    }
  }
  for (const auto& gt : gt_masks) {
    auto assign = mask_scale_to_level(gt.box.width(), gt.box.height());
    if (!assign || !level_shapes.count(assign->level)) {
      ++targets.skipped_out_of_band;
      continue;
    }
    const auto [H, W] = level_shapes.at(assign->level);
    const double stride = std::pow(2.0, assign->level);
    const double cx = gt.box.cx(), cy = gt.box.cy();
    const double region = mask_region_size(assign->level, assign->head);
    auto& t = targets.per_level[{assign->level, assign->head}];
    // Cells whose center lies within one stride of the object center.
    const int j0 = std::max(0, static_cast<int>(std::floor((cx - stride) / stride - 0.5)));
    const int i0 = std::max(0, static_cast<int>(std::floor((cy - stride) / stride - 0.5)));
    const int j1 = std::min(W - 1, static_cast<int>(std::ceil((cx + stride) / stride - 0.5)));
    const int i1 = std::min(H - 1, static_cast<int>(std::ceil((cy + stride) / stride - 0.5)));
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const double ccx = (j + 0.5) * stride, ccy = (i + 0.5) * stride;
        if (std::max(std::abs(ccx - cx), std::abs(ccy - cy)) > stride) continue;
        MaskInstanceTarget inst;
        inst.cell = i * W + j;
        inst.mask.resize(static_cast<size_t>(resolution) * resolution);
        const double x0 = ccx - region / 2, y0 = ccy - region / 2;
        const double cell = region / resolution;
        for (int r = 0; r < resolution; ++r) {
          for (int c = 0; c < resolution; ++c) {
            inst.mask[r * resolution + c] =
                mask_coverage(gt, x0 + c * cell, y0 + r * cell,
                              x0 + (c + 1) * cell, y0 + (r + 1) * cell) > 0.5;
          }
        }
        t.positive[inst.cell] = 1;
        t.instances.push_back(std::move(inst));
      }
    }
  }
  return targets;
}

template <typename Dtype>
Tensor<Dtype> mask_loss(
    const std::map<int, std::array<MaskLevelOutput<Dtype>, 2>>& outputs,
    const MaskTargets& targets, const MaskLossConfig& cfg, std::mt19937_64& rng) {
  struct CellRef {
    const MaskLevelOutput<Dtype>* out;
    int cell;
  };
  std::vector<CellRef> positives, negatives;
  std::vector<std::pair<const MaskLevelOutput<Dtype>*, const MaskInstanceTarget*>>
      instances;
  for (const auto& [key, t] : targets.per_level) {
    const auto it = outputs.find(key.first);
    FPN_CHECK(it != outputs.end(), "mask loss: no output for level ", key.first);
    const auto& out = it->second[key.second];
    FPN_CHECK(static_cast<int64_t>(t.positive.size()) == out.score_logits.numel(),
              "mask loss: score map size mismatch at level ", key.first);
    for (int cell = 0; cell < static_cast<int>(t.positive.size()); ++cell) {
      (t.positive[cell] ? positives : negatives).push_back({&out, cell});
    }
    for (const auto& inst : t.instances) instances.push_back({&out, &inst});
  }
  std::shuffle(positives.begin(), positives.end(), rng);
  std::shuffle(negatives.begin(), negatives.end(), rng);
  std::shuffle(instances.begin(), instances.end(), rng);
  const int max_pos = static_cast<int>(cfg.sample_per_image * cfg.positive_fraction);
  const int num_pos = std::min<int>(positives.size(), max_pos);
  const int num_neg =
      std::min<int>(negatives.size(), cfg.sample_per_image - num_pos);
  FPN_CHECK(num_pos + num_neg > 0, "mask loss: nothing to sample");

  std::vector<Tensor<Dtype>> score_parts;
  std::vector<Dtype> score_targets;
  auto take = [&](const std::vector<CellRef>& pool, int n, Dtype label) {
    for (int i = 0; i < n; ++i) {
      score_parts.push_back(gather(pool[i].out->score_logits, {pool[i].cell}));
      score_targets.push_back(label);
    }
  };
  take(positives, num_pos, Dtype(1));
  take(negatives, num_neg, Dtype(0));
  auto loss = bce_with_logits(concat_flat(score_parts), std::move(score_targets));

  const int num_inst = std::min<int>(instances.size(), max_pos);
  if (num_inst > 0) {
    std::vector<Tensor<Dtype>> mask_parts;
    std::vector<Dtype> mask_targets;
    for (int n = 0; n < num_inst; ++n) {
      const auto& [out, inst] = instances[n];
      const auto& sh = out->mask_logits.shape();
      const int64_t hw = sh[2] * sh[3];
      std::vector<int64_t> idx(inst->mask.size());
      for (size_t m = 0; m < inst->mask.size(); ++m) {
        idx[m] = static_cast<int64_t>(m) * hw + inst->cell;
        mask_targets.push_back(static_cast<Dtype>(inst->mask[m]));
      }
      mask_parts.push_back(gather(out->mask_logits, std::move(idx)));
    }
    auto mloss = bce_with_logits(concat_flat(mask_parts), std::move(mask_targets));
    loss = add(loss, scale(mloss, static_cast<Dtype>(cfg.mask_loss_weight)));
  }
  return loss;
}

template <typename Dtype>
std::vector<MaskProposal> generate_mask_proposals(
    const std::map<int, std::array<MaskLevelOutput<Dtype>, 2>>& outputs,
    int resolution, int top_n) {
  std::vector<MaskProposal> all;
  for (const auto& [level, pair] : outputs) {
    const double stride = std::pow(2.0, level);
    for (int head = 0; head < 2; ++head) {
      const auto& out = pair[head];
      const auto& sh = out.score_logits.shape();
      const int H = static_cast<int>(sh[2]), W = static_cast<int>(sh[3]);
      const double region = mask_region_size(level, head);
      const Dtype* logits = out.score_logits.data().data();
      for (int cell = 0; cell < H * W; ++cell) {
        MaskProposal p;
        p.score = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[cell])));
        p.level = level;
        p.head = head;
        const double ccx = (cell % W + 0.5) * stride;
        const double ccy = (cell / W + 0.5) * stride;
        p.region = {ccx - region / 2, ccy - region / 2, ccx + region / 2,
                    ccy + region / 2};
        p.mask.resize(static_cast<size_t>(resolution) * resolution);
        const Dtype* mlogits = out.mask_logits.data().data();
        const int64_t hw = static_cast<int64_t>(H) * W;
        for (int m = 0; m < resolution * resolution; ++m) {
          p.mask[m] = mlogits[m * hw + cell] > 0;
        }
        all.push_back(std::move(p));
      }
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const MaskProposal& a, const MaskProposal& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(all.size()) > top_n) all.resize(top_n);
  return all;
}

template class MaskHeads<float>;
template class MaskHeads<double>;
template Tensor<float> mask_loss(
    const std::map<int, std::array<MaskLevelOutput<float>, 2>>&,
    const MaskTargets&, const MaskLossConfig&, std::mt19937_64&);
template Tensor<double> mask_loss(
    const std::map<int, std::array<MaskLevelOutput<double>, 2>>&,
    const MaskTargets&, const MaskLossConfig&, std::mt19937_64&);
template std::vector<MaskProposal> generate_mask_proposals(
    const std::map<int, std::array<MaskLevelOutput<float>, 2>>&, int, int);
template std::vector<MaskProposal> generate_mask_proposals(
    const std::map<int, std::array<MaskLevelOutput<double>, 2>>&, int, int);

}  // namespace fpn
