#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fpn/config.hpp"
#include "fpn/dataset.hpp"

using namespace fpn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("run-length coding round-trips and starts with background") {
  std::vector<uint8_t> m{0, 0, 1, 1, 1, 0, 1};
  auto runs = rle_encode(m);
  CHECK(runs == std::vector<int>{2, 3, 1, 1});
  CHECK(rle_decode(runs, m.size()) == m);

  std::vector<uint8_t> lead{1, 1, 0};
  CHECK(rle_encode(lead) == std::vector<int>{0, 2, 1});

  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<uint8_t> r(200);
    for (auto& v : r) v = rng() & 1;
    CHECK(rle_decode(rle_encode(r), r.size()) == r);
  }
}

TEST_CASE("scenes: masks agree with boxes and pixels carry the objects") {
  DatasetSpec spec;
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    auto scene = generate_scene(spec, rng);
    CHECK(scene.width == 128);
    REQUIRE(scene.image.size() == size_t(3) * 128 * 128);
    for (const auto& obj : scene.objects) {
      REQUIRE(obj.class_id >= 1);
      REQUIRE(obj.class_id <= 3);
      // The box is exactly the tight bound of the mask.
      int min_x = 128, min_y = 128, max_x = -1, max_y = -1;
      size_t on = 0;
      for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x)
          if (obj.mask[y * 128 + x]) {
            ++on;
            min_x = std::min(min_x, x);
            min_y = std::min(min_y, y);
            max_x = std::max(max_x, x);
            max_y = std::max(max_y, y);
          }
      REQUIRE(on > 0);
      CHECK(obj.box.x1 == min_x);
      CHECK(obj.box.y1 == min_y);
      CHECK(obj.box.x2 == max_x + 1);
      CHECK(obj.box.y2 == max_y + 1);
      CHECK(obj.box.x2 <= 128);
      CHECK(obj.box.y2 <= 128);
    }
  }
}

TEST_CASE("object sizes cover all octaves of the configured range") {
  DatasetSpec spec;  // 8..96 px
  std::mt19937_64 rng(11);
  // Octave bins over max(w, h): [8,16), [16,32), [32,64), [64,96].
  std::array<int, 4> bins{};
  int total = 0;
  while (total < 1000) {
    auto scene = generate_scene(spec, rng);
    for (const auto& obj : scene.objects) {
      double s = std::max(obj.box.width(), obj.box.height());
      int b = s < 16 ? 0 : s < 32 ? 1 : s < 64 ? 2 : 3;
      ++bins[b];
      ++total;
    }
  }
  for (int b = 0; b < 4; ++b) CHECK(bins[b] > 50);
}

TEST_CASE("same seed gives byte-identical datasets; different seeds differ") {
  TempDir a("fpn_ds_a"), b("fpn_ds_b"), c("fpn_ds_c");
  DatasetSpec spec;
  generate_dataset(a.path.string(), 5, 42, spec);
  generate_dataset(b.path.string(), 5, 42, spec);
  generate_dataset(c.path.string(), 5, 43, spec);

  CHECK(slurp(a.path / "annotations.txt") == slurp(b.path / "annotations.txt"));
  CHECK(slurp(a.path / "annotations.txt") != slurp(c.path / "annotations.txt"));
  for (int i = 0; i < 5; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%05d.bin", i);
    CHECK(slurp(a.path / "images" / name) == slurp(b.path / "images" / name));
  }
}

TEST_CASE("a dataset loads back exactly as generated") {
  TempDir d("fpn_ds_load");
  DatasetSpec spec;
  generate_dataset(d.path.string(), 4, 9, spec);
  auto ds = load_dataset(d.path.string());
  REQUIRE(ds.scenes.size() == 4);
  CHECK(ds.width == 128);

  // Regenerate into a second directory and compare scene by scene.
  TempDir d2("fpn_ds_load2");
  generate_dataset(d2.path.string(), 4, 9, spec);
  auto ds2 = load_dataset(d2.path.string());
  for (int i = 0; i < 4; ++i) {
    CHECK(ds.scenes[i].image == ds2.scenes[i].image);
    REQUIRE(ds.scenes[i].objects.size() == ds2.scenes[i].objects.size());
    for (size_t o = 0; o < ds.scenes[i].objects.size(); ++o) {
      CHECK(ds.scenes[i].objects[o].mask == ds2.scenes[i].objects[o].mask);
      CHECK(ds.scenes[i].objects[o].class_id == ds2.scenes[i].objects[o].class_id);
    }
  }
}

TEST_CASE("config parser: comments, whitespace, overrides, and errors") {
  auto cfg = ConfigMap::parse(
      "# a comment\n"
      "\n"
      "  pyramid.d =  32 \n"
      "train.base_lr = 0.02\n"
      "pyramid.d = 48\n");
  CHECK(cfg.get_int("pyramid.d", 0) == 48);
  CHECK(cfg.get_double("train.base_lr", 0) == doctest::Approx(0.02));
  CHECK(cfg.get_int("missing.key", 7) == 7);
  CHECK_THROWS(ConfigMap::parse("no equals sign here\n"));
  CHECK_THROWS(cfg.get_int("train.base_lr", 0));  // 0.02 is not an integer
}

TEST_CASE("run config round-trips through its serialized form") {
  RunConfig c;
  c.seed = 99;
  c.pyramid_d = 24;
  c.variant = PyramidVariant::top_down_no_lateral;
  c.stage_channels = {4, 8, 16, 32};
  c.base_lr = 0.005;
  auto parsed = RunConfig::from_config(ConfigMap::parse(c.serialize()));
  CHECK(parsed.serialize() == c.serialize());
  CHECK(parsed.seed == 99);
  CHECK(parsed.variant == PyramidVariant::top_down_no_lateral);
  CHECK(parsed.stage_channels == std::array<int, 4>{4, 8, 16, 32});
}

TEST_CASE("run config validation rejects bad values") {
  CHECK_THROWS(RunConfig::from_config(ConfigMap::parse("data.image_size = 100\n")));
  CHECK_THROWS(RunConfig::from_config(ConfigMap::parse("train.base_lr = 0\n")));
  CHECK_THROWS(RunConfig::from_config(ConfigMap::parse("pyramid.variant = bogus\n")));
}
