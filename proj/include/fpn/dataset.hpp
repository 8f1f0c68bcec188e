#pragma once

#include <random>
#include <string>

#include "fpn/box.hpp"

namespace fpn {

// Object classes for the synthetic scenes.
inline constexpr int kClassSquare = 1;
inline constexpr int kClassCircle = 2;
inline constexpr int kClassTriangle = 3;
inline constexpr int kNumClasses = 3;

const char* class_name(int class_id);

struct SceneObject {
  int class_id = 0;                // 1..3
  Box box;                        // tight pixel bounds of the mask
  std::vector<uint8_t> mask;      // full-image binary grid, row-major
};

struct SyntheticScene {
  int width = 0, height = 0;
  std::vector<float> image;  // 3 x H x W
  std::vector<SceneObject> objects;
};

struct DatasetSpec {
  int image_size = 128;      // must be a multiple of 32
  double min_object = 8;     // log-uniform size range; spans > 3 octaves
  double max_object = 96;
  int min_objects = 1;
  int max_objects = 4;
};

// One scene with randomly placed filled squares, circles, and triangles
// over a noisy background. Fully determined by the RNG state.
SyntheticScene generate_scene(const DatasetSpec& spec, std::mt19937_64& rng);

// Writes `dir/annotations.txt` plus one raw float32 tensor per image
// under `dir/images/`. Layout and grammar: docs/formats.md. The i-th
// scene's RNG stream depends only on (seed, i), so the output is
// byte-identical across runs with the same arguments.
void generate_dataset(const std::string& dir, int n_images, uint64_t seed,
                      const DatasetSpec& spec);

struct Dataset {
  int width = 0, height = 0;
  std::vector<SyntheticScene> scenes;
};

Dataset load_dataset(const std::string& dir);

// Alternating background/foreground run lengths, background first.
std::vector<int> rle_encode(const std::vector<uint8_t>& mask);
std::vector<uint8_t> rle_decode(const std::vector<int>& runs, size_t size);

}  // namespace fpn
