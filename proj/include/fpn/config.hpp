#pragma once

#include <map>
#include <string>

#include "fpn/pyramid.hpp"

namespace fpn {

// Flat `dotted.key = value` store. Lines are `key = value`, blank, or
// `#` comments; later assignments win. Grammar: docs/formats.md.
class ConfigMap {
 public:
  static ConfigMap parse(const std::string& text);
  static ConfigMap load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Everything a run needs: dataset shape, model widths, schedule, seeds.
// Defaults are desk-scale; serialize() emits the full flat key set so a
// run's config rides along with its outputs.
struct RunConfig {
  uint64_t seed = 1;

  int image_size = 128;
  int train_images = 500;
  int eval_images = 100;

  int stem_channels = 8;
  std::array<int, 4> stage_channels{8, 16, 32, 64};
  std::array<int, 4> blocks_per_stage{1, 1, 1, 1};

  int pyramid_d = 16;
  PyramidVariant variant = PyramidVariant::full_fpn;

  int batch_size = 2;
  int steps = 2000;
  double base_lr = 0.01;
  int lr_decay_step = 1500;    // lr divided by 10 here
  double momentum = 0.9;
  double weight_decay = 1e-4;

  int rpn_batch_anchors = 256;
  int proposals_per_image = 1000;

  int rois_per_image = 64;
  int detector_hidden = 64;

  int mask_d = 16;
  int mask_hidden = 32;
  int mask_resolution = 14;

  static RunConfig from_config(const ConfigMap& cfg);
  std::string serialize() const;
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace fpn
