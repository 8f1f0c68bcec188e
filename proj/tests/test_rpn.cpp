#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fpn/rpn.hpp"

using namespace fpn;

namespace {

FeaturePyramid<float> make_pyramid(int d, std::map<int, std::pair<int, int>> shapes,
                                   float fill = 0.f) {
  FeaturePyramid<float> pyr;
  pyr.d = d;
  for (auto& [k, hw] : shapes)
    pyr.levels[k] = Tensor<float>::full({1, d, hw.first, hw.second}, fill);
  return pyr;
}

}  // namespace

TEST_CASE("zero features and zero head give logits 0 (probability one half)") {
  RpnHead<float> head(8, 3, true, {2, 3, 4, 5, 6}, 1);
  for (auto& p : head.params().items())
    std::fill(p.value.data().begin(), p.value.data().end(), 0.f);
  auto pyr = make_pyramid(8, {{2, {8, 8}}, {3, {4, 4}}});
  auto out = head.forward(pyr);
  for (auto& [k, o] : out) {
    CHECK(o.logits.shape()[2] == pyr.levels.at(k).shape()[2]);
    CHECK(o.logits.shape()[3] == pyr.levels.at(k).shape()[3]);
    CHECK(o.logits.shape()[1] == 3);
    CHECK(o.deltas.shape()[1] == 12);
    for (auto v : o.logits.data()) CHECK(v == 0.f);
  }
}

TEST_CASE("shared head: level relabeling does not change outputs") {
  RpnHead<float> head(6, 3, true, {2, 3, 4, 5, 6}, 9);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  auto feat = Tensor<float>::zeros({1, 6, 4, 4});
  for (auto& v : feat.data()) v = u(rng);
  // The scoring and regression layers start at zero; randomize them so the
  // comparisons below exercise real values.
  for (auto& v : head.params().at("cls.weight").data()) v = u(rng);
  for (auto& v : head.params().at("reg.weight").data()) v = u(rng);

  FeaturePyramid<float> as_p2, as_p5;
  as_p2.d = as_p5.d = 6;
  as_p2.levels[2] = feat;
  as_p5.levels[5] = feat;
  auto o2 = head.forward(as_p2).at(2);
  auto o5 = head.forward(as_p5).at(5);
  for (int64_t i = 0; i < o2.logits.numel(); ++i)
    CHECK(o2.logits.data()[i] == o5.logits.data()[i]);

  // and modifying a head weight changes outputs on every level
  head.params().at("conv.weight").data()[0] += 0.5f;
  auto o2b = head.forward(as_p2).at(2);
  auto o5b = head.forward(as_p5).at(5);
  bool changed2 = false, changed5 = false;
  for (int64_t i = 0; i < o2.logits.numel(); ++i) {
    changed2 = changed2 || o2.logits.data()[i] != o2b.logits.data()[i];
    changed5 = changed5 || o5.logits.data()[i] != o5b.logits.data()[i];
  }
  CHECK(changed2);
  CHECK(changed5);
}

TEST_CASE("unshared head keeps one parameter set per level") {
  RpnHead<float> shared(6, 3, true, {2, 3, 4, 5, 6}, 9);
  RpnHead<float> unshared(6, 3, false, {2, 3, 4, 5, 6}, 9);
  CHECK(unshared.params().items().size() == 5 * shared.params().items().size());
}

TEST_CASE("anchor label assignment rules") {
  // GT equal to some anchor -> that anchor positive
  std::vector<Box> anchors{{0, 0, 10, 10}, {20, 20, 30, 30}, {50, 50, 80, 80}};
  std::vector<Box> gt{{20, 20, 30, 30}};
  auto labels = assign_anchor_labels(anchors, gt);
  CHECK(labels.label[1] == AnchorLabel::positive);
  CHECK(labels.matched_gt[1] == 0);
  CHECK(labels.label[0] == AnchorLabel::negative);

  // no GT -> all negative
  auto none = assign_anchor_labels(anchors, {});
  for (auto l : none.label) CHECK(l == AnchorLabel::negative);

  // anchor with IoU ~0.5 that is not any GT's argmax -> ignored
  std::vector<Box> a2{{0, 0, 10, 10}, {0, 0, 10, 5}};
  std::vector<Box> g2{{0, 0, 10, 9}};
  auto l2 = assign_anchor_labels(a2, g2);
  CHECK(l2.label[0] == AnchorLabel::positive);  // argmax (IoU 0.9)
  CHECK(l2.label[1] == AnchorLabel::ignore);    // IoU 0.5, not argmax

  // argmax ties mark all tied anchors positive
  std::vector<Box> a3{{0, 0, 8, 8}, {2, 0, 10, 8}, {40, 40, 41, 41}};
  std::vector<Box> g3{{1, 0, 9, 8}};
  auto l3 = assign_anchor_labels(a3, g3);
  CHECK(l3.label[0] == AnchorLabel::positive);
  CHECK(l3.label[1] == AnchorLabel::positive);
}

TEST_CASE("assignment is purely by IoU: pooled across levels, relabel invariant") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 100);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box> anchors, gt;
    for (int i = 0; i < 60; ++i) {
      Box b{u(rng), u(rng), 0, 0};
      b.x2 = b.x1 + u(rng) / 4 + 1;
      b.y2 = b.y1 + u(rng) / 4 + 1;
      anchors.push_back(b);
    }
    for (int i = 0; i < 4; ++i) {
      Box b{u(rng), u(rng), 0, 0};
      b.x2 = b.x1 + u(rng) / 4 + 1;
      b.y2 = b.y1 + u(rng) / 4 + 1;
      gt.push_back(b);
    }
    auto l1 = assign_anchor_labels(anchors, gt);
    // permute anchor order (stand-in for originating from other levels)
    std::vector<int> perm(anchors.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Box> permuted;
    for (int i : perm) permuted.push_back(anchors[i]);
    auto l2 = assign_anchor_labels(permuted, gt);
    for (size_t i = 0; i < perm.size(); ++i)
      CHECK(l2.label[i] == l1.label[perm[i]]);

    // every GT with a nonzero-IoU anchor has its argmax anchors positive
    for (size_t g = 0; g < gt.size(); ++g) {
      double best = 0;
      for (const auto& a : anchors) best = std::max(best, iou(a, gt[g]));
      if (best <= 0) continue;
      for (size_t a = 0; a < anchors.size(); ++a)
        if (iou(anchors[a], gt[g]) == best)
          CHECK(l1.label[a] == AnchorLabel::positive);
    }
  }
}

TEST_CASE("rpn_loss: zero head on balanced sample gives ln 2 classification") {
  auto grids = generate_anchors({{2, {4, 4}}, {3, {2, 2}}});
  std::map<int, RpnLevelOutput<float>> outputs;
  outputs[2] = {Tensor<float>::zeros({1, 3, 4, 4}, true),
                Tensor<float>::zeros({1, 12, 4, 4}, true)};
  outputs[3] = {Tensor<float>::zeros({1, 3, 2, 2}, true),
                Tensor<float>::zeros({1, 12, 2, 2}, true)};
  auto anchors = flatten_anchors(grids);
  auto labels = assign_anchor_labels(anchors, {});
  std::mt19937_64 rng(1);
  auto loss = rpn_loss(outputs, grids, labels, {}, RpnLossConfig{}, rng);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("rpn_loss approaches zero for near-perfect predictions") {
  auto grids = generate_anchors({{4, {2, 2}}});  // single level, 5 scales
  const auto& grid = grids.at(4);
  // choose a GT equal to one specific anchor
  Box gt = grid.boxes[7];
  auto anchors = flatten_anchors(grids);
  auto labels = assign_anchor_labels(anchors, {gt});

  auto logits = Tensor<float>::zeros({1, 15, 2, 2}, true);
  auto deltas = Tensor<float>::zeros({1, 60, 2, 2}, true);
  const int hw = 4;
  for (size_t a = 0; a < anchors.size(); ++a) {
    int cell = static_cast<int>(a) / 15, r = static_cast<int>(a) % 15;
    float v = labels.label[a] == AnchorLabel::positive ? 30.f : -30.f;
    logits.data()[r * hw + cell] = v;
    if (labels.label[a] == AnchorLabel::positive) {
      BoxDeltas d = encode_deltas(anchors[a], gt);
      int64_t base = static_cast<int64_t>(4 * r) * hw + cell;
      deltas.data()[base] = static_cast<float>(d.tx);
      deltas.data()[base + hw] = static_cast<float>(d.ty);
      deltas.data()[base + 2 * hw] = static_cast<float>(d.tw);
      deltas.data()[base + 3 * hw] = static_cast<float>(d.th);
    }
  }
  std::map<int, RpnLevelOutput<float>> outputs;
  outputs[4] = {logits, deltas};
  std::mt19937_64 rng(2);
  auto loss = rpn_loss(outputs, grids, labels, {gt}, RpnLossConfig{}, rng);
  CHECK(loss.item() < 1e-5);
}

TEST_CASE("generate_proposals basics") {
  // single-cell level with a positive logit and zero deltas
  auto grids = generate_anchors({{6, {1, 1}}});
  auto logits = Tensor<float>::zeros({1, 15, 1, 1});
  auto deltas = Tensor<float>::zeros({1, 60, 1, 1});
  logits.data()[3] = 4.0f;  // second scale, ratio index 0
  std::map<int, RpnLevelOutput<float>> outputs;
  outputs[6] = {logits, deltas};
  ProposalConfig cfg;
  auto props = generate_proposals(outputs, grids, 128, 128, cfg);
  REQUIRE(!props.empty());
  Box expect = clip_box(grids.at(6).boxes[3], 128, 128);
  CHECK(props[0].box.x1 == doctest::Approx(expect.x1));
  CHECK(props[0].box.y2 == doctest::Approx(expect.y2));
  // sorted by descending score, all within image
  for (size_t i = 0; i + 1 < props.size(); ++i)
    CHECK(props[i].score >= props[i + 1].score);
  for (auto& p : props) {
    CHECK(p.box.x1 >= 0);
    CHECK(p.box.y2 <= 128);
  }
}

TEST_CASE("proposal oracle: no NMS, unbounded budget equals sorted decode") {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<float> u(-2, 2);
  auto grids = generate_anchors({{2, {4, 4}}, {3, {2, 2}}, {4, {1, 1}},
                                 {5, {1, 1}}, {6, {1, 1}}},
                                {8, 16, 24, 32, 48});
  std::map<int, RpnLevelOutput<float>> outputs;
  for (auto& [k, grid] : grids) {
    auto logits = Tensor<float>::zeros({1, 3, grid.height, grid.width});
    auto deltas = Tensor<float>::zeros({1, 12, grid.height, grid.width});
    for (auto& v : logits.data()) v = u(rng);
    for (auto& v : deltas.data()) v = u(rng) / 8;
    outputs[k] = {logits, deltas};
  }
  ProposalConfig cfg;
  cfg.pre_nms_top_n = 100000;
  cfg.post_nms_top_n = 100000;
  cfg.min_side = 0.0;
  auto props = generate_proposals(outputs, grids, 64, 64, cfg, false);

  // oracle: decode every anchor directly and sort by sigmoid score
  struct Item { double score; Box box; };
  std::vector<Item> ref;
  for (auto& [k, grid] : grids) {
    const auto& o = outputs.at(k);
    int hw = grid.height * grid.width;
    for (int i = 0; i < grid.height; ++i)
      for (int j = 0; j < grid.width; ++j)
        for (int r = 0; r < 3; ++r) {
          double z = o.logits.data()[r * hw + i * grid.width + j];
          BoxDeltas d;
          int64_t base = static_cast<int64_t>(4 * r) * hw + i * grid.width + j;
          d.tx = o.deltas.data()[base];
          d.ty = o.deltas.data()[base + hw];
          d.tw = o.deltas.data()[base + 2 * hw];
          d.th = o.deltas.data()[base + 3 * hw];
          int idx = (i * grid.width + j) * 3 + r;
          ref.push_back({1.0 / (1.0 + std::exp(-z)),
                         clip_box(decode_deltas(grid.boxes[idx], d), 64, 64)});
        }
  }
  std::stable_sort(ref.begin(), ref.end(),
                   [](const Item& a, const Item& b) { return a.score > b.score; });
  REQUIRE(props.size() == ref.size());
  for (size_t i = 0; i < ref.size(); ++i) {
    CHECK(props[i].score == doctest::Approx(ref[i].score));
    CHECK(props[i].box.x1 == doctest::Approx(ref[i].box.x1));
    CHECK(props[i].box.y2 == doctest::Approx(ref[i].box.y2));
  }
}
