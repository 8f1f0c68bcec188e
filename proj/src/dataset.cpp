#include "fpn/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fpn {

const char* class_name(int class_id) {
  switch (class_id) {
    case kClassSquare: return "square";
    case kClassCircle: return "circle";
    case kClassTriangle: return "triangle";
    default: fail("unknown class id ", class_id);
  }
}

namespace {

bool inside_shape(int class_id, double px, double py, double cx, double cy,
                  double s) {
  const double dx = px - cx, dy = py - cy;
  switch (class_id) {
    case kClassSquare:
      return std::abs(dx) <= s / 2 && std::abs(dy) <= s / 2;
    case kClassCircle:
      return dx * dx + dy * dy <= s * s / 4;
    case kClassTriangle: {
      // Upward triangle: apex (cx, cy - s/2), base corners (cx +- s/2,
      // cy + s/2).
      if (dy < -s / 2 || dy > s / 2) return false;
      const double half_width = (dy + s / 2) / 2;  // width grows toward base
      return std::abs(dx) <= half_width;
    }
    default:
      fail("unknown class id ", class_id);
  }
}

}  // namespace

SyntheticScene generate_scene(const DatasetSpec& spec, std::mt19937_64& rng) {
  FPN_CHECK(spec.image_size > 0 && spec.image_size % 32 == 0,
            "image size must be a positive multiple of 32, got ",
            spec.image_size);
  FPN_CHECK(spec.min_object > 0 && spec.max_object <= spec.image_size,
            "bad object size range");
  const int W = spec.image_size, H = spec.image_size;
  SyntheticScene scene;
  scene.width = W;
  scene.height = H;
  scene.image.resize(static_cast<size_t>(3) * H * W);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (auto& v : scene.image) v = static_cast<float>(0.1 * u01(rng));

  std::uniform_int_distribution<int> n_objects(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<int> cls(1, kNumClasses);
  const double log_ratio = std::log(spec.max_object / spec.min_object);

  const int n = n_objects(rng);
  for (int o = 0; o < n; ++o) {
    SceneObject obj;
    obj.class_id = cls(rng);
    const double s = spec.min_object * std::exp(u01(rng) * log_ratio);
    const double cx = s / 2 + u01(rng) * (W - s);
    const double cy = s / 2 + u01(rng) * (H - s);
    float color[3];
    for (auto& c : color) c = static_cast<float>(0.3 + 0.7 * u01(rng));

    obj.mask.assign(static_cast<size_t>(H) * W, 0);
    int min_x = W, min_y = H, max_x = -1, max_y = -1;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - s / 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - s / 2)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + s / 2)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + s / 2)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!inside_shape(obj.class_id, x + 0.5, y + 0.5, cx, cy, s)) continue;
        obj.mask[static_cast<size_t>(y) * W + x] = 1;
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
        for (int c = 0; c < 3; ++c)
          scene.image[(static_cast<size_t>(c) * H + y) * W + x] = color[c];
      }
    if (max_x < 0) continue;  // too small to cover any pixel center
    obj.box = {static_cast<double>(min_x), static_cast<double>(min_y),
               static_cast<double>(max_x + 1), static_cast<double>(max_y + 1)};
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

std::vector<int> rle_encode(const std::vector<uint8_t>& mask) {
  std::vector<int> runs;
  uint8_t current = 0;
  int count = 0;
  for (uint8_t v : mask) {
    if ((v != 0) == (current != 0)) {
      ++count;
    } else {
      runs.push_back(count);
      current = v;
      count = 1;
    }
  }
  runs.push_back(count);
  return runs;
}

std::vector<uint8_t> rle_decode(const std::vector<int>& runs, size_t size) {
  std::vector<uint8_t> mask;
  mask.reserve(size);
  uint8_t current = 0;
  for (int run : runs) {
    FPN_CHECK(run >= 0, "negative run length");
    mask.insert(mask.end(), run, current);
    current = !current;
  }
  FPN_CHECK(mask.size() == size, "rle decodes to ", mask.size(), ", expected ",
            size);
  return mask;
}

namespace {

std::mt19937_64 scene_rng(uint64_t seed, int index) {
  // Independent per-scene stream: splitmix-style mix of (seed, index).
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return std::mt19937_64(z ^ (z >> 31));
}

std::string image_file(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d.bin", index);
  return buf;
}

}  // namespace

void generate_dataset(const std::string& dir, int n_images, uint64_t seed,
                      const DatasetSpec& spec) {
  FPN_CHECK(n_images > 0, "need at least one image");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");

  std::ofstream ann(fs::path(dir) / "annotations.txt");
  FPN_CHECK(ann.good(), "cannot write annotations in ", dir);
  ann << "dataset " << n_images << " " << spec.image_size << " "
      << spec.image_size << " " << seed << "\n";

  for (int i = 0; i < n_images; ++i) {
    auto rng = scene_rng(seed, i);
    auto scene = generate_scene(spec, rng);

    std::ofstream img(fs::path(dir) / "images" / image_file(i), std::ios::binary);
    FPN_CHECK(img.good(), "cannot write image ", i, " in ", dir);
    img.write(reinterpret_cast<const char*>(scene.image.data()),
              static_cast<std::streamsize>(scene.image.size() * sizeof(float)));
    FPN_CHECK(img.good(), "short write for image ", i);

    ann << "image " << i << " images/" << image_file(i) << " "
        << scene.objects.size() << "\n";
    for (const auto& obj : scene.objects) {
      ann << "object " << obj.class_id << " " << obj.box.x1 << " " << obj.box.y1
          << " " << obj.box.x2 << " " << obj.box.y2;
      for (int run : rle_encode(obj.mask)) ann << " " << run;
      ann << "\n";
    }
  }
  FPN_CHECK(ann.good(), "annotation write failed in ", dir);
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream ann(fs::path(dir) / "annotations.txt");
  FPN_CHECK(ann.good(), "cannot open annotations in ", dir);

  std::string tag;
  int n_images = 0;
  uint64_t seed = 0;
  Dataset ds;
  ann >> tag >> n_images >> ds.width >> ds.height >> seed;
  FPN_CHECK(tag == "dataset", "bad annotation header in ", dir);

  for (int i = 0; i < n_images; ++i) {
    int id = -1, n_objects = 0;
    std::string file;
    ann >> tag >> id >> file >> n_objects;
    FPN_CHECK(tag == "image" && id == i, "bad image record ", i, " in ", dir);

    SyntheticScene scene;
    scene.width = ds.width;
    scene.height = ds.height;
    scene.image.resize(static_cast<size_t>(3) * ds.width * ds.height);
    std::ifstream img(fs::path(dir) / file, std::ios::binary);
    FPN_CHECK(img.good(), "missing image file ", file);
    img.read(reinterpret_cast<char*>(scene.image.data()),
             static_cast<std::streamsize>(scene.image.size() * sizeof(float)));
    FPN_CHECK(img.gcount() ==
                  static_cast<std::streamsize>(scene.image.size() * sizeof(float)),
              "short image file ", file);

    for (int o = 0; o < n_objects; ++o) {
      SceneObject obj;
      ann >> tag >> obj.class_id >> obj.box.x1 >> obj.box.y1 >> obj.box.x2 >>
          obj.box.y2;
      FPN_CHECK(tag == "object", "bad object record in image ", i);
      // Runs fill the rest of the line.
      std::vector<int> runs;
      size_t total = 0;
      const size_t numel = static_cast<size_t>(ds.width) * ds.height;
      while (total < numel) {
        int run;
        ann >> run;
        FPN_CHECK(ann.good(), "truncated mask runs in image ", i);
        runs.push_back(run);
        total += run;
      }
      obj.mask = rle_decode(runs, numel);
      scene.objects.push_back(std::move(obj));
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace fpn
