#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fpn/metrics.hpp"
#include "oracles.hpp"

using namespace fpn;

namespace {

// Independent recall oracle over one image: per threshold, score-ordered
// greedy matching on a naive IoU table, averaged across thresholds.
double ar_naive(std::vector<Proposal> props, const std::vector<Box>& gts,
                int budget) {
  if (gts.empty()) return -1.0;
  std::stable_sort(props.begin(), props.end(),
                   [](const Proposal& a, const Proposal& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(props.size()) > budget) props.resize(budget);
  double acc = 0;
  int n_thr = 0;
  for (double thr = 0.5; thr < 0.951; thr += 0.05, ++n_thr) {
    std::vector<bool> used(gts.size(), false);
    int matched = 0;
    for (const auto& p : props) {
      int best = -1;
      double best_v = thr;
      for (size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        double v = oracles::iou_naive({p.box.x1, p.box.y1, p.box.x2, p.box.y2},
                                      {gts[g].x1, gts[g].y1, gts[g].x2, gts[g].y2});
        if (v >= best_v) {
          best_v = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        used[best] = true;
        ++matched;
      }
    }
    acc += static_cast<double>(matched) / gts.size();
  }
  return acc / n_thr;
}

}  // namespace

TEST_CASE("recall: 23 of 30 objects found perfectly gives 23/30") {
  std::vector<Box> gts;
  std::vector<Proposal> props;
  for (int i = 0; i < 30; ++i) {
    Box b{i * 20.0, 0, i * 20.0 + 15, 15};
    gts.push_back(b);
    if (i < 23) props.push_back({b, 1.0 - i * 0.01});
  }
  CHECK(average_recall({props}, {gts}, 1000) == doctest::Approx(23.0 / 30.0));
}

TEST_CASE("recall: a match at IoU 0.7 counts for thresholds up to 0.7 only") {
  // One GT, one proposal with IoU exactly 0.75: thresholds 0.5..0.75 hit
  // (6 of 10), so AR = 0.6.
  std::vector<Box> gts{{0, 0, 100, 100}};
  std::vector<Proposal> props{{{0, 0, 75, 100}, 0.9}};
  CHECK(iou(props[0].box, gts[0]) == doctest::Approx(0.75));
  CHECK(average_recall({props}, {gts}, 1000) == doctest::Approx(0.6));
}

TEST_CASE("recall: budget keeps only the top-scoring proposals") {
  std::vector<Box> gts{{0, 0, 10, 10}, {100, 100, 110, 110}};
  std::vector<Proposal> props{{{100, 100, 110, 110}, 0.9}, {{0, 0, 10, 10}, 0.5}};
  CHECK(average_recall({props}, {gts}, 2) == doctest::Approx(1.0));
  CHECK(average_recall({props}, {gts}, 1) == doctest::Approx(0.5));
}

TEST_CASE("recall: size bins select ground truth by area") {
  std::vector<Box> gts{{0, 0, 20, 20},       // area 400, small
                       {100, 0, 150, 50},    // area 2500, medium
                       {0, 100, 200, 300}};  // area 40000, large
  std::vector<Proposal> props;
  for (auto& g : gts) props.push_back({g, 1.0});
  CHECK(average_recall({props}, {gts}, 10, 0, kSmallMaxArea) == doctest::Approx(1.0));
  CHECK(average_recall({props}, {gts}, 10, kSmallMaxArea, kMediumMaxArea) ==
        doctest::Approx(1.0));
  CHECK(average_recall({props}, {gts}, 10, kMediumMaxArea) == doctest::Approx(1.0));
  // A bin with no GT reports -1.
  CHECK(average_recall({props}, {{}}, 10) == doctest::Approx(-1.0));
  // Missing the small object only hurts the small bin.
  std::vector<Proposal> no_small(props.begin() + 1, props.end());
  CHECK(average_recall({no_small}, {gts}, 10, 0, kSmallMaxArea) == doctest::Approx(0));
  CHECK(average_recall({no_small}, {gts}, 10, kMediumMaxArea) == doctest::Approx(1.0));
}

TEST_CASE("recall matches an independent oracle on 120 random scenes") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> pos(0, 200), side(5, 80), sc(0, 1);
  for (int t = 0; t < 120; ++t) {
    std::vector<Box> gts;
    std::vector<Proposal> props;
    int n_gt = 1 + static_cast<int>(rng() % 8);
    int n_p = static_cast<int>(rng() % 30);
    for (int g = 0; g < n_gt; ++g) {
      double x = pos(rng), y = pos(rng);
      gts.push_back({x, y, x + side(rng), y + side(rng)});
    }
    for (int p = 0; p < n_p; ++p) {
      const Box& g = gts[rng() % gts.size()];
      double jx = sc(rng) * 20 - 10, jy = sc(rng) * 20 - 10;
      props.push_back({{g.x1 + jx, g.y1 + jy, g.x2 + jx * 0.5, g.y2 + jy * 0.5},
                       sc(rng)});
    }
    int budget = 1 + static_cast<int>(rng() % 20);
    CHECK(average_recall({props}, {gts}, budget) ==
          doctest::Approx(ar_naive(props, gts, budget)));
  }
}

TEST_CASE("precision: one perfect detection on one object scores 1.0") {
  std::vector<Detection> dets{{1, 0.9, {10, 10, 50, 50}}};
  std::vector<Box> gts{{10, 10, 50, 50}};
  CHECK(average_precision({dets}, {gts}, {{1}}, 0.5) == doctest::Approx(1.0));
}

TEST_CASE("precision: a false positive above the true positive halves the score") {
  std::vector<Detection> dets{{1, 0.9, {200, 200, 240, 240}},
                              {1, 0.8, {10, 10, 50, 50}}};
  std::vector<Box> gts{{10, 10, 50, 50}};
  // Recall reaches 1.0 only at precision 1/2.
  CHECK(average_precision({dets}, {gts}, {{1}}, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("precision: duplicate detections of one object count once") {
  std::vector<Detection> dets{{1, 0.9, {10, 10, 50, 50}},
                              {1, 0.8, {10, 10, 50, 50}}};
  std::vector<Box> gts{{10, 10, 50, 50}};
  // Second hit is a false positive but comes after full recall: AP stays 1.
  CHECK(average_precision({dets}, {gts}, {{1}}, 0.5) == doctest::Approx(1.0));
}

TEST_CASE("precision averages over classes and skips classes without GT") {
  std::vector<Detection> dets{{1, 0.9, {10, 10, 50, 50}},
                              {2, 0.9, {300, 300, 310, 310}},
                              {3, 0.9, {100, 100, 150, 150}}};
  std::vector<Box> gts{{10, 10, 50, 50}, {100, 100, 150, 150}};
  // Class 1 AP 1.0, class 3 AP 1.0, class 2 has no GT and is skipped.
  CHECK(average_precision({dets}, {gts}, {{1, 3}}, 0.5) == doctest::Approx(1.0));
  // Missing class 3 entirely: (1.0 + 0.0) / 2.
  std::vector<Detection> only1{{1, 0.9, {10, 10, 50, 50}}};
  CHECK(average_precision({only1}, {gts}, {{1, 3}}, 0.5) == doctest::Approx(0.5));
  CHECK(average_precision({only1}, {{}}, {{}}, 0.5) == doctest::Approx(-1.0));
}

TEST_CASE("precision respects the IoU threshold") {
  std::vector<Detection> dets{{1, 0.9, {0, 0, 75, 100}}};  // IoU 0.75 with GT
  std::vector<Box> gts{{0, 0, 100, 100}};
  CHECK(average_precision({dets}, {gts}, {{1}}, 0.5) == doctest::Approx(1.0));
  CHECK(average_precision({dets}, {gts}, {{1}}, 0.8) == doctest::Approx(0.0));
}

TEST_CASE("mask IoU on hand-made grids") {
  std::vector<uint8_t> a{1, 1, 0, 0}, b{1, 0, 1, 0}, zero{0, 0, 0, 0};
  CHECK(mask_iou(a, a) == doctest::Approx(1.0));
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(mask_iou(a, zero) == doctest::Approx(0.0));
  CHECK(mask_iou(zero, zero) == doctest::Approx(0.0));
}

TEST_CASE("painting a region mask onto the image is a blocky upsample") {
  // 2x2 grid over a region covering pixels [2,6) x [2,6).
  std::vector<uint8_t> grid{1, 0, 0, 1};
  auto img = rasterize_region_mask({2, 2, 6, 6}, grid, 2, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      bool inside = x >= 2 && x < 6 && y >= 2 && y < 6;
      uint8_t want = 0;
      if (inside) want = grid[(y < 4 ? 0 : 1) * 2 + (x < 4 ? 0 : 1)];
      CHECK(img[y * 8 + x] == want);
    }
  // Regions may hang off the image; outside parts are dropped.
  auto part = rasterize_region_mask({-2, -2, 2, 2}, grid, 2, 8, 8);
  CHECK(part[0] == 1);  // pixel (0,0) falls in the grid's bottom-right cell
  size_t on = 0;
  for (auto v : part) on += v;
  CHECK(on == 4);
}

TEST_CASE("mask recall mirrors box recall on painted rectangles") {
  auto rect = [](double x1, double y1, double x2, double y2) {
    std::vector<uint8_t> m(64 * 64, 0);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (x >= x1 && x < x2 && y >= y1 && y < y2) m[y * 64 + x] = 1;
    return m;
  };
  std::vector<std::vector<uint8_t>> gts{rect(4, 4, 20, 20), rect(30, 30, 60, 60)};
  std::vector<ScoredMask> props{{0.9, rect(4, 4, 20, 20)},   // exact
                                {0.8, rect(30, 30, 60, 45)}};  // IoU 0.5
  double ar = mask_average_recall({props}, {gts}, 10);
  // First GT hits every threshold, second only at 0.5: (10 + 1)/20.
  CHECK(ar == doctest::Approx(11.0 / 20.0));
}
