#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fpn/grad_check.hpp"
#include "fpn/mask.hpp"

using namespace fpn;

namespace {

const double kSqrt2 = std::sqrt(2.0);

// Filled axis-aligned rectangle as a full-image instance mask.
InstanceMask rect_mask(int img_w, int img_h, double x1, double y1, double x2,
                       double y2) {
  InstanceMask m;
  m.width = img_w;
  m.height = img_h;
  m.box = {x1, y1, x2, y2};
  m.data.assign(static_cast<size_t>(img_w) * img_h, 0);
  for (int y = 0; y < img_h; ++y)
    for (int x = 0; x < img_w; ++x)
      if (x >= x1 && x < x2 && y >= y1 && y < y2)
        m.data[static_cast<size_t>(y) * img_w + x] = 1;
  return m;
}

template <typename Dtype>
FeaturePyramid<Dtype> random_pyramid(int d, std::map<int, std::pair<int, int>> shapes,
                                     uint64_t seed) {
  FeaturePyramid<Dtype> pyr;
  pyr.d = d;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& [k, hw] : shapes) {
    auto t = Tensor<Dtype>::zeros({1, d, hw.first, hw.second});
    for (auto& v : t.data()) v = static_cast<Dtype>(u(rng));
    pyr.levels[k] = t;
  }
  return pyr;
}

}  // namespace

TEST_CASE("scale grid: full octaves take the coarse head, halves the fine head") {
  struct Case { double s; int level, head; };
  for (auto [s, level, head] : std::initializer_list<Case>{
           {32, 2, 0},  {64, 3, 0},   {128, 4, 0},  {256, 5, 0}, {512, 6, 0},
           {32 * kSqrt2, 2, 1}, {64 * kSqrt2, 3, 1}, {128 * kSqrt2, 4, 1},
           {256 * kSqrt2, 5, 1}}) {
    auto a = mask_scale_to_level(s, s);
    REQUIRE(a.has_value());
    CHECK(a->level == level);
    CHECK(a->head == head);
  }
  // The larger side sets the scale.
  auto a = mask_scale_to_level(10, 128);
  REQUIRE(a.has_value());
  CHECK(a->level == 4);
  CHECK(a->head == 0);
  // Off-grid scale snaps to the nearest point: 90 is nearest 64*sqrt2.
  a = mask_scale_to_level(90, 90);
  REQUIRE(a.has_value());
  CHECK(a->level == 3);
  CHECK(a->head == 1);
}

TEST_CASE("scale grid: midpoints snap downward, band edges are covered") {
  // Exact midpoint between 32 and 32*sqrt2 (an eighth of an octave up).
  auto a = mask_scale_to_level(32 * std::pow(2.0, 0.25), 1);
  REQUIRE(a.has_value());
  CHECK(a->level == 2);
  CHECK(a->head == 0);
  // A hair above the midpoint goes up.
  a = mask_scale_to_level(32 * std::pow(2.0, 0.2501), 1);
  REQUIRE(a.has_value());
  CHECK(a->head == 1);
  // Quarter octave off either end is still in band...
  CHECK(mask_scale_to_level(32 * std::pow(2.0, -0.25), 1).has_value());
  CHECK(mask_scale_to_level(512 * std::pow(2.0, 0.25), 1).has_value());
  // ...but beyond that is excluded.
  CHECK(!mask_scale_to_level(32 * std::pow(2.0, -0.26), 1).has_value());
  CHECK(!mask_scale_to_level(512 * std::pow(2.0, 0.26), 1).has_value());
  CHECK(!mask_scale_to_level(4, 4).has_value());
  CHECK(!mask_scale_to_level(0, 0).has_value());
}

TEST_CASE("canonical region sizes double per level; fine head is sqrt2 wider") {
  CHECK(mask_region_size(2, 0) == doctest::Approx(40));
  CHECK(mask_region_size(3, 0) == doctest::Approx(80));
  CHECK(mask_region_size(6, 0) == doctest::Approx(640));
  CHECK(mask_region_size(2, 1) == doctest::Approx(40 * kSqrt2));
  CHECK(mask_region_size(5, 1) == doctest::Approx(320 * kSqrt2));
}

TEST_CASE("head outputs: one score plane and res^2 mask planes per cell") {
  MaskHeads<float> heads(8, 14, 16, 3);
  auto pyr = random_pyramid<float>(8, {{2, {8, 8}}, {3, {4, 4}}}, 5);
  auto out = heads.forward(pyr);
  REQUIRE(out.size() == 2);
  for (auto& [k, pair] : out) {
    auto hw = pyr.levels.at(k).shape();
    for (int h = 0; h < 2; ++h) {
      CHECK(pair[h].score_logits.shape() == Shape({1, 1, hw[2], hw[3]}));
      CHECK(pair[h].mask_logits.shape() == Shape({1, 196, hw[2], hw[3]}));
    }
  }
}

// The mask and score layers initialize to zero; tests that need nonzero
// predictions fill them with random values first.
template <typename Dtype>
void randomize_prediction_layers(MaskHeads<Dtype>& heads, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Dtype> u(-0.5, 0.5);
  for (auto& p : heads.params().items())
    if (p.name.find("mask.weight") != std::string::npos ||
        p.name.find("score.weight") != std::string::npos)
      for (auto& v : p.value.data()) v = u(rng);
}

TEST_CASE("heads are fully convolutional: a crop reproduces the center cell") {
  MaskHeads<float> heads(6, 7, 12, 9);
  randomize_prediction_layers(heads, 21);
  auto full = random_pyramid<float>(6, {{2, {12, 12}}}, 8);

  // 7x7 crop centered at cell (6, 6) feeds the 7x7 head's center output.
  FeaturePyramid<float> crop;
  crop.d = 6;
  auto patch = Tensor<float>::zeros({1, 6, 7, 7});
  auto src = full.levels.at(2).data();
  for (int c = 0; c < 6; ++c)
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x)
        patch.data()[(c * 7 + y) * 7 + x] = src[(c * 12 + (y + 3)) * 12 + (x + 3)];
  crop.levels[2] = patch;

  auto big = heads.forward(full).at(2);
  auto small = heads.forward(crop).at(2);
  for (int h = 0; h < 2; ++h) {
    CHECK(small[h].score_logits.data()[3 * 7 + 3] ==
          doctest::Approx(big[h].score_logits.data()[6 * 12 + 6]));
    for (int m = 0; m < 49; ++m)
      CHECK(small[h].mask_logits.data()[m * 49 + 3 * 7 + 3] ==
            doctest::Approx(big[h].mask_logits.data()[m * 144 + 6 * 12 + 6]));
  }
}

TEST_CASE("targets: centered square marks the cells within one stride") {
  // 64x64 object centered in a 128x128 image -> 5x5 head on level 3.
  auto gt = rect_mask(128, 128, 32, 32, 96, 96);
  std::map<int, std::pair<int, int>> shapes{
      {2, {32, 32}}, {3, {16, 16}}, {4, {8, 8}}, {5, {4, 4}}, {6, {2, 2}}};
  auto t = build_mask_targets({gt}, shapes, 14);
  CHECK(t.skipped_out_of_band == 0);

  auto& lt = t.per_level.at({3, 0});
  int positives = 0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      if (lt.positive[i * 16 + j]) {
        ++positives;
        // Cell center within 8px Chebyshev of (64, 64).
        CHECK(std::max(std::abs((j + 0.5) * 8 - 64), std::abs((i + 0.5) * 8 - 64)) <=
              8.0);
      }
  CHECK(positives == 4);
  CHECK(lt.instances.size() == 4);
  for (auto& [key, other] : t.per_level) {
    if (key == std::make_pair(3, 0)) continue;
    CHECK(other.instances.empty());
    for (auto v : other.positive) CHECK(v == 0);
  }

  // Rasterized grid matches direct area overlap (>50%) for every cell.
  for (auto& inst : lt.instances) {
    double ccx = (inst.cell % 16 + 0.5) * 8, ccy = (inst.cell / 16 + 0.5) * 8;
    double x0 = ccx - 40, y0 = ccy - 40, cell = 80.0 / 14;
    for (int r = 0; r < 14; ++r)
      for (int c = 0; c < 14; ++c) {
        double cx1 = x0 + c * cell, cy1 = y0 + r * cell;
        double ox = std::max(0.0, std::min(cx1 + cell, 96.0) - std::max(cx1, 32.0));
        double oy = std::max(0.0, std::min(cy1 + cell, 96.0) - std::max(cy1, 32.0));
        uint8_t want = ox * oy / (cell * cell) > 0.5;
        CHECK(inst.mask[r * 14 + c] == want);
      }
  }
}

TEST_CASE("targets: tiny and huge objects are skipped and counted") {
  std::map<int, std::pair<int, int>> shapes{{2, {32, 32}}, {3, {16, 16}}};
  auto tiny = rect_mask(128, 128, 60, 60, 70, 70);      // scale 10, below band
  auto ok = rect_mask(128, 128, 40, 40, 72, 72);        // scale 32 -> level 2
  auto t = build_mask_targets({tiny, ok}, shapes, 14);
  CHECK(t.skipped_out_of_band == 1);
  CHECK(!t.per_level.at({2, 0}).instances.empty());
}

TEST_CASE("loss of an all-zero network is log 2 on both terms") {
  MaskHeads<float> heads(4, 4, 8, 1);
  for (auto& p : heads.params().items())
    std::fill(p.value.data().begin(), p.value.data().end(), 0.f);
  auto pyr = random_pyramid<float>(4, {{2, {8, 8}}}, 2);
  auto out = heads.forward(pyr);

  std::map<int, std::pair<int, int>> shapes{{2, {8, 8}}};
  MaskLossConfig cfg;
  std::mt19937_64 rng(3);

  // No objects: score term only.
  auto empty = build_mask_targets({}, shapes, 4);
  auto l0 = mask_loss(out, empty, cfg, rng);
  CHECK(l0.data()[0] == doctest::Approx(std::log(2.0)));

  // One object: score term plus the 10x-weighted mask term.
  auto gt = rect_mask(32, 32, 0, 0, 32, 32);  // scale 32 -> (level 2, 5x5)
  auto t = build_mask_targets({gt}, shapes, 4);
  REQUIRE(!t.per_level.at({2, 0}).instances.empty());
  auto l1 = mask_loss(out, t, cfg, rng);
  CHECK(l1.data()[0] == doctest::Approx(11.0 * std::log(2.0)));
}

TEST_CASE("loss sampling respects the 1:3 ratio and the per-image budget") {
  MaskHeads<float> heads(4, 4, 8, 1);
  randomize_prediction_layers(heads, 22);
  auto pyr = random_pyramid<float>(4, {{2, {16, 16}}}, 2);
  auto out = heads.forward(pyr);
  std::map<int, std::pair<int, int>> shapes{{2, {16, 16}}};
  // Many positives: several objects spread across the grid.
  std::vector<InstanceMask> gts;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j)
      gts.push_back(rect_mask(80, 80, i * 10, j * 20, i * 10 + 32, j * 20 + 32));
  auto t = build_mask_targets(gts, shapes, 4);
  size_t pos_cells = 0;
  for (auto v : t.per_level.at({2, 0}).positive) pos_cells += v;
  CHECK(pos_cells > 32);  // sampler must cap at 128/4
  MaskLossConfig cfg;
  std::mt19937_64 rng(5);
  auto l = mask_loss(out, t, cfg, rng);  // just exercises the cap paths
  CHECK(std::isfinite(l.data()[0]));
}

TEST_CASE("gradients of the full mask loss match finite differences") {
  MaskHeads<double> heads(5, 4, 8, 11);
  randomize_prediction_layers(heads, 23);
  std::map<int, std::pair<int, int>> shapes{{2, {8, 8}}};
  auto gt = rect_mask(32, 32, 2, 2, 30, 30);  // scale 28 -> (level 2, 5x5)
  auto targets = build_mask_targets({gt}, shapes, 4);
  REQUIRE(!targets.per_level.at({2, 0}).instances.empty());

  auto f = [&](const Tensor<double>& x) {
    FeaturePyramid<double> pyr;
    pyr.d = 5;
    pyr.levels[2] = x;
    auto out = heads.forward(pyr);
    MaskLossConfig cfg;
    std::mt19937_64 rng(0);  // same sample every call
    return mask_loss(out, targets, cfg, rng);
  };
  auto x = Tensor<double>::zeros({1, 5, 8, 8}, true);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : x.data()) v = u(rng);
  CHECK(grad_check<double>(f, x, 1e-4) < 1e-5);
}

TEST_CASE("proposal generation: global top-n, canonical regions, no suppression") {
  // Hand-built outputs on two levels with distinct, known score logits.
  std::map<int, std::array<MaskLevelOutput<float>, 2>> out;
  auto make = [](int h, int w, std::vector<float> scores) {
    MaskLevelOutput<float> o;
    o.score_logits = Tensor<float>::from_data({1, 1, h, w}, std::move(scores));
    o.mask_logits = Tensor<float>::zeros({1, 4, h, w});
    return o;
  };
  out[2] = {make(2, 2, {0.5f, -1.f, 2.f, 0.f}), make(2, 2, {-2.f, -2.f, -2.f, 3.f})};
  out[3] = {make(1, 1, {1.f}), make(1, 1, {-3.f})};

  auto props = generate_mask_proposals(out, 2, 4);
  REQUIRE(props.size() == 4);
  // Sorted by descending score: logits 3, 2, 1, 0.5.
  CHECK(props[0].level == 2);
  CHECK(props[0].head == 1);
  CHECK(props[1].level == 2);
  CHECK(props[1].head == 0);
  CHECK(props[2].level == 3);
  CHECK(props[3].score == doctest::Approx(1 / (1 + std::exp(-0.5))));
  // Logit 2 sits at cell (1, 0) of the level-2 coarse head: center (2, 6),
  // region 40 wide, allowed to hang off the image.
  CHECK(props[1].region.x1 == doctest::Approx(2 - 20));
  CHECK(props[1].region.y1 == doctest::Approx(6 - 20));
  CHECK(props[1].region.x2 == doctest::Approx(2 + 20));
  CHECK(props[1].region.y2 == doctest::Approx(6 + 20));
  // Zero mask logits threshold to empty masks.
  for (auto v : props[0].mask) CHECK(v == 0);
  CHECK(props[0].mask.size() == 4);
}
