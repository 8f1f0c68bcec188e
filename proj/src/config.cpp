#include "fpn/config.hpp"

#include <fstream>
#include <sstream>

namespace fpn {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    FPN_CHECK(eq != std::string::npos, "config line ", line_no,
              ": expected `key = value`, got: ", t);
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    FPN_CHECK(!key.empty(), "config line ", line_no, ": empty key");
    cfg.set(key, value);
  }
  return cfg;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path);
  FPN_CHECK(in.good(), "cannot open config ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::string ConfigMap::get_string(const std::string& key,
                                  const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int64_t ConfigMap::get_int(const std::string& key, int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    FPN_CHECK(pos == it->second.size(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    fail("config key ", key, ": expected integer, got `", it->second, "`");
  }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    FPN_CHECK(pos == it->second.size(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    fail("config key ", key, ": expected number, got `", it->second, "`");
  }
}

namespace {

std::array<int, 4> get_int4(const ConfigMap& cfg, const std::string& key,
                            std::array<int, 4> fallback) {
  if (!cfg.contains(key)) return fallback;
  std::istringstream in(cfg.get_string(key, ""));
  std::array<int, 4> out{};
  char comma;
  for (int i = 0; i < 4; ++i) {
    FPN_CHECK(static_cast<bool>(i == 0 ? in >> out[i] : in >> comma >> out[i]),
              "config key ", key, ": expected four comma-separated integers");
  }
  return out;
}

std::string int4(const std::array<int, 4>& v) {
  std::ostringstream os;
  for (int i = 0; i < 4; ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

RunConfig RunConfig::from_config(const ConfigMap& cfg) {
  RunConfig c;
  // Reject unrecognized keys so a typo cannot silently fall back to a
  // default. The recognized set is exactly what serialize() emits.
  {
    ConfigMap known = ConfigMap::parse(c.serialize());
    for (const auto& [key, value] : cfg.values())
      FPN_CHECK(known.values().count(key), "unknown configuration key: ", key);
  }
  c.seed = static_cast<uint64_t>(cfg.get_int("run.seed", c.seed));
  c.image_size = cfg.get_int("data.image_size", c.image_size);
  c.train_images = cfg.get_int("data.train_images", c.train_images);
  c.eval_images = cfg.get_int("data.eval_images", c.eval_images);
  c.stem_channels = cfg.get_int("backbone.stem_channels", c.stem_channels);
  c.stage_channels = get_int4(cfg, "backbone.stage_channels", c.stage_channels);
  c.blocks_per_stage = get_int4(cfg, "backbone.blocks_per_stage", c.blocks_per_stage);
  c.pyramid_d = cfg.get_int("pyramid.d", c.pyramid_d);
  c.variant = parse_variant(cfg.get_string("pyramid.variant", variant_name(c.variant)));
  c.batch_size = cfg.get_int("train.batch_size", c.batch_size);
  c.steps = cfg.get_int("train.steps", c.steps);
  c.base_lr = cfg.get_double("train.base_lr", c.base_lr);
  c.lr_decay_step = cfg.get_int("train.lr_decay_step", c.lr_decay_step);
  c.momentum = cfg.get_double("train.momentum", c.momentum);
  c.weight_decay = cfg.get_double("train.weight_decay", c.weight_decay);
  c.rpn_batch_anchors = cfg.get_int("rpn.batch_anchors", c.rpn_batch_anchors);
  c.proposals_per_image = cfg.get_int("rpn.proposals_per_image", c.proposals_per_image);
  c.rois_per_image = cfg.get_int("detector.rois_per_image", c.rois_per_image);
  c.detector_hidden = cfg.get_int("detector.hidden", c.detector_hidden);
  c.mask_d = cfg.get_int("mask.d", c.mask_d);
  c.mask_hidden = cfg.get_int("mask.hidden", c.mask_hidden);
  c.mask_resolution = cfg.get_int("mask.resolution", c.mask_resolution);

  FPN_CHECK(c.image_size > 0 && c.image_size % 32 == 0,
            "data.image_size must be a positive multiple of 32");
  FPN_CHECK(c.train_images > 0 && c.eval_images > 0, "need nonempty splits");
  FPN_CHECK(c.batch_size > 0 && c.steps > 0, "bad schedule");
  FPN_CHECK(c.base_lr > 0, "train.base_lr must be positive");
  FPN_CHECK(c.pyramid_d > 0 && c.mask_d > 0, "channel widths must be positive");
  return c;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "backbone.blocks_per_stage = " << int4(blocks_per_stage) << "\n";
  os << "backbone.stage_channels = " << int4(stage_channels) << "\n";
  os << "backbone.stem_channels = " << stem_channels << "\n";
  os << "data.eval_images = " << eval_images << "\n";
  os << "data.image_size = " << image_size << "\n";
  os << "data.train_images = " << train_images << "\n";
  os << "detector.hidden = " << detector_hidden << "\n";
  os << "detector.rois_per_image = " << rois_per_image << "\n";
  os << "mask.d = " << mask_d << "\n";
  os << "mask.hidden = " << mask_hidden << "\n";
  os << "mask.resolution = " << mask_resolution << "\n";
  os << "pyramid.d = " << pyramid_d << "\n";
  os << "pyramid.variant = " << variant_name(variant) << "\n";
  os << "rpn.batch_anchors = " << rpn_batch_anchors << "\n";
  os << "rpn.proposals_per_image = " << proposals_per_image << "\n";
  os << "run.seed = " << seed << "\n";
  os << "train.base_lr = " << base_lr << "\n";
  os << "train.batch_size = " << batch_size << "\n";
  os << "train.lr_decay_step = " << lr_decay_step << "\n";
  os << "train.momentum = " << momentum << "\n";
  os << "train.steps = " << steps << "\n";
  os << "train.weight_decay = " << weight_decay << "\n";
  return os.str();
}

RunConfig load_run_config(const std::string& path) {
  return RunConfig::from_config(ConfigMap::load(path));
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  FPN_CHECK(out.good(), "cannot write config ", path);
  out << cfg.serialize();
  FPN_CHECK(out.good(), "config write failed: ", path);
}

}  // namespace fpn
