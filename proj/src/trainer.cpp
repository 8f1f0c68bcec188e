#include "fpn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fpn/grad_check.hpp"

namespace fpn {

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent stream per (seed, purpose, step) so resumed training
// replays the original randomness.
std::mt19937_64 stream(uint64_t seed, uint64_t purpose, uint64_t step) {
  return std::mt19937_64(mix(mix(seed, purpose), step));
}

constexpr uint64_t kInitBackbone = 1, kInitPyramid = 2, kInitRpn = 3,
                   kInitDetector = 4, kInitMask = 5;
constexpr uint64_t kSampleRpn = 10, kSampleRoi = 11, kSampleMask = 12;

std::map<int, std::pair<int, int>> level_shapes_for(const std::vector<int>& levels,
                                                    int image_size) {
  std::map<int, std::pair<int, int>> shapes;
  for (int k : levels) shapes[k] = {image_size >> k, image_size >> k};
  return shapes;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  FPN_CHECK(out.good(), "cannot write ", path);
  out << text;
  FPN_CHECK(out.good(), "write failed: ", path);
}

void write_train_outputs(const std::string& out_dir, const std::string& stem,
                         const ParameterMap<float>& params,
                         SgdOptimizer<float>& opt, const TrainLog& log,
                         const RunConfig& cfg) {
  if (out_dir.empty()) return;
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  save_checkpoint((fs::path(out_dir) / (stem + ".ckpt")).string(), params);
  auto state = opt.state();
  save_checkpoint((fs::path(out_dir) / (stem + "_opt.ckpt")).string(), state);
  std::string text;
  for (size_t i = 0; i < log.losses.size(); ++i)
    text += "step " + std::to_string(i) + " loss " + fmt(log.losses[i]) + "\n";
  write_text((fs::path(out_dir) / (stem + "_log.txt")).string(), text);
  save_run_config(cfg, (fs::path(out_dir) / "config.txt").string());
}

std::vector<Box> gt_boxes_of(const SyntheticScene& scene) {
  std::vector<Box> out;
  for (const auto& o : scene.objects) out.push_back(o.box);
  return out;
}

std::vector<int> gt_classes_of(const SyntheticScene& scene) {
  std::vector<int> out;
  for (const auto& o : scene.objects) out.push_back(o.class_id);
  return out;
}

}  // namespace

const char* ablation_row_name(AblationRow row) {
  switch (row) {
    case AblationRow::c4_baseline: return "c4";
    case AblationRow::c5_baseline: return "c5";
    case AblationRow::fpn: return "fpn";
    case AblationRow::bottom_up: return "bottomup";
    case AblationRow::no_lateral: return "nolateral";
    case AblationRow::finest: return "finest";
  }
  fail("unknown ablation row");
}

std::vector<AblationRow> all_ablation_rows() {
  return {AblationRow::c4_baseline, AblationRow::c5_baseline, AblationRow::fpn,
          AblationRow::bottom_up, AblationRow::no_lateral, AblationRow::finest};
}

AblationRow row_for_variant(PyramidVariant v) {
  switch (v) {
    case PyramidVariant::full_fpn: return AblationRow::fpn;
    case PyramidVariant::bottom_up_only: return AblationRow::bottom_up;
    case PyramidVariant::top_down_no_lateral: return AblationRow::no_lateral;
    case PyramidVariant::finest_only: return AblationRow::finest;
  }
  fail("unknown variant");
}

ProposalModel build_proposal_model(const RunConfig& cfg, AblationRow row) {
  ProposalModel m;
  BackboneConfig bcfg;
  bcfg.stem_channels = cfg.stem_channels;
  bcfg.stage_channels = cfg.stage_channels;
  bcfg.blocks_per_stage = cfg.blocks_per_stage;
  bcfg.seed = mix(cfg.seed, kInitBackbone);
  m.backbone = std::make_shared<Backbone<float>>(bcfg);
  m.params.adopt("backbone", m.backbone->params());

  int head_d = cfg.pyramid_d;
  switch (row) {
    case AblationRow::c4_baseline:
      // Head sits directly on the raw backbone map; no pyramid layers.
      m.levels = {4};
      head_d = cfg.stage_channels[2];
      break;
    case AblationRow::c5_baseline:
      m.levels = {5};
      head_d = cfg.stage_channels[3];
      break;
    case AblationRow::fpn:
    case AblationRow::bottom_up:
    case AblationRow::no_lateral:
      m.levels = {2, 3, 4, 5, 6};
      m.with_p6 = true;
      break;
    case AblationRow::finest:
      m.levels = {2};
      break;
  }
  if (row != AblationRow::c4_baseline && row != AblationRow::c5_baseline) {
    PyramidVariant variant = row == AblationRow::fpn ? PyramidVariant::full_fpn
                             : row == AblationRow::bottom_up
                                 ? PyramidVariant::bottom_up_only
                             : row == AblationRow::no_lateral
                                 ? PyramidVariant::top_down_no_lateral
                                 : PyramidVariant::finest_only;
    m.fpn = std::make_shared<FpnBuilder<float>>(cfg.stage_channels, cfg.pyramid_d,
                                                variant, mix(cfg.seed, kInitPyramid));
    m.params.adopt("fpn", m.fpn->params());
  }

  const int anchors_per_cell = m.levels.size() == 1 ? 15 : 3;
  m.head = std::make_shared<RpnHead<float>>(head_d, anchors_per_cell, true,
                                            m.levels, mix(cfg.seed, kInitRpn));
  m.params.adopt("rpn", m.head->params());
  return m;
}

FeaturePyramid<float> ProposalModel::features(const Tensor<float>& image) const {
  auto c = backbone->forward(image);
  if (!fpn) {
    // Baseline rows: the raw backbone map is the only "pyramid" level.
    FeaturePyramid<float> pyr;
    FPN_CHECK(levels.size() == 1, "baseline model must be single level");
    pyr.levels[levels[0]] = c.c.at(levels[0]);
    pyr.d = static_cast<int>(pyr.levels.at(levels[0]).shape()[1]);
    return pyr;
  }
  auto pyr = fpn->build(c, with_p6);
  FeaturePyramid<float> out;
  out.d = pyr.d;
  out.has_p6 = with_p6;
  for (int k : levels) out.levels[k] = pyr.levels.at(k);
  return out;
}

Tensor<float> image_tensor(const SyntheticScene& scene) {
  return Tensor<float>::from_data({1, 3, scene.height, scene.width}, scene.image);
}

TrainLog train_rpn(ProposalModel& model, const Dataset& data, const RunConfig& cfg,
                   const std::string& out_dir, int start_step,
                   SgdOptimizer<float>* optimizer) {
  FPN_CHECK(!data.scenes.empty(), "empty dataset");
  SgdOptimizer<float> local(cfg.base_lr, cfg.momentum, cfg.weight_decay);
  SgdOptimizer<float>& opt = optimizer ? *optimizer : local;

  const auto shapes = level_shapes_for(model.levels, cfg.image_size);
  const auto anchors = generate_anchors(shapes);
  const auto flat = flatten_anchors(anchors);

  // Labels depend only on the scene, not the step.
  std::vector<AnchorLabels> labels(data.scenes.size());
  std::vector<bool> have_labels(data.scenes.size(), false);
  RpnLossConfig loss_cfg;
  loss_cfg.batch_anchors = cfg.rpn_batch_anchors;
  loss_cfg.max_positives = cfg.rpn_batch_anchors / 2;

  TrainLog log;
  for (int step = start_step; step < cfg.steps; ++step) {
    opt.set_lr(static_cast<float>(step >= cfg.lr_decay_step ? cfg.base_lr * 0.1
                                                            : cfg.base_lr));
    auto rng = stream(cfg.seed, kSampleRpn, step);
    std::vector<Tensor<float>> per_image;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const size_t idx = (static_cast<size_t>(step) * cfg.batch_size + b) %
                         data.scenes.size();
      const auto& scene = data.scenes[idx];
      if (!have_labels[idx]) {
        labels[idx] = assign_anchor_labels(flat, gt_boxes_of(scene));
        have_labels[idx] = true;
      }
      auto outputs = model.head->forward(model.features(image_tensor(scene)));
      per_image.push_back(rpn_loss(outputs, anchors, labels[idx],
                                   gt_boxes_of(scene), loss_cfg, rng));
    }
    auto loss = scale(sum(concat_flat(per_image)),
                      1.0f / static_cast<float>(cfg.batch_size));
    const double v = loss.data()[0];
    FPN_CHECK(std::isfinite(v), "training diverged: loss ", v, " at step ", step);
    loss.backward();
    opt.step(model.params);
    log.losses.push_back(v);
  }
  write_train_outputs(out_dir, "rpn", model.params, opt, log, cfg);
  return log;
}

std::vector<Proposal> propose(const ProposalModel& model,
                              const SyntheticScene& scene, int top_n) {
  auto outputs = model.head->forward(model.features(image_tensor(scene)));
  std::map<int, std::pair<int, int>> shapes;
  for (const auto& [k, o] : outputs)
    shapes[k] = {static_cast<int>(o.logits.shape()[2]),
                 static_cast<int>(o.logits.shape()[3])};
  auto anchors = generate_anchors(shapes);
  ProposalConfig pc;
  pc.post_nms_top_n = top_n;
  return generate_proposals(outputs, anchors, scene.width, scene.height, pc);
}

ProposalReport evaluate_proposals(const ProposalModel& model, const Dataset& data) {
  std::vector<std::vector<Proposal>> props;
  std::vector<std::vector<Box>> gts;
  auto t0 = std::chrono::steady_clock::now();
  for (const auto& scene : data.scenes) {
    props.push_back(propose(model, scene, 1000));
    gts.push_back(gt_boxes_of(scene));
  }
  auto t1 = std::chrono::steady_clock::now();

  ProposalReport r;
  r.ar100 = average_recall(props, gts, 100);
  r.ar1k = average_recall(props, gts, 1000);
  r.ar_small = average_recall(props, gts, 1000, 0, kSmallMaxArea);
  r.ar_medium = average_recall(props, gts, 1000, kSmallMaxArea, kMediumMaxArea);
  r.ar_large = average_recall(props, gts, 1000, kMediumMaxArea);
  r.seconds_per_image =
      std::chrono::duration<double>(t1 - t0).count() / data.scenes.size();
  return r;
}

std::string format_proposal_report(const std::string& row_name,
                                   const ProposalReport& r) {
  std::string s = "proposal-report " + row_name + "\n";
  s += "ar100 " + fmt(r.ar100) + "\n";
  s += "ar1k " + fmt(r.ar1k) + "\n";
  s += "ar_small " + fmt(r.ar_small) + "\n";
  s += "ar_medium " + fmt(r.ar_medium) + "\n";
  s += "ar_large " + fmt(r.ar_large) + "\n";
  return s;
}

DetectorModel build_detector_model(const RunConfig& cfg, ProposalModel base) {
  DetectorModel m;
  m.base = std::move(base);
  for (int k : {2, 3, 4, 5})
    FPN_CHECK(std::count(m.base.levels.begin(), m.base.levels.end(), k),
              "detector needs pyramid levels 2-5, missing ", k);
  m.head = std::make_shared<DetectorHead<float>>(
      cfg.pyramid_d, kNumClasses, cfg.detector_hidden, mix(cfg.seed, kInitDetector));
  m.head_params.adopt("det", m.head->params());
  return m;
}

namespace {

std::vector<Proposal> training_proposals(const ProposalModel& base,
                                         const SyntheticScene& scene, int top_n) {
  // Fixed proposal set for the second stage; GT boxes are appended so
  // foreground examples exist even under a weak proposal model.
  auto props = propose(base, scene, top_n);
  for (const auto& o : scene.objects) props.push_back({o.box, 1.0});
  return props;
}

}  // namespace

TrainLog train_detector(DetectorModel& model, const Dataset& data,
                        const RunConfig& cfg, const std::string& out_dir) {
  FPN_CHECK(!data.scenes.empty(), "empty dataset");
  SgdOptimizer<float> opt(cfg.base_lr, cfg.momentum, cfg.weight_decay);

  // The proposal model is frozen: cache its features and proposals.
  std::vector<FeaturePyramid<float>> feats(data.scenes.size());
  std::vector<std::vector<Proposal>> props(data.scenes.size());
  std::vector<bool> cached(data.scenes.size(), false);

  RoiSamplerConfig sampler;
  sampler.rois_per_image = cfg.rois_per_image;

  TrainLog log;
  for (int step = 0; step < cfg.steps; ++step) {
    opt.set_lr(static_cast<float>(step >= cfg.lr_decay_step ? cfg.base_lr * 0.1
                                                            : cfg.base_lr));
    auto rng = stream(cfg.seed, kSampleRoi, step);
    std::vector<Tensor<float>> per_image;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const size_t idx = (static_cast<size_t>(step) * cfg.batch_size + b) %
                         data.scenes.size();
      const auto& scene = data.scenes[idx];
      if (!cached[idx]) {
        feats[idx] = model.base.features(image_tensor(scene));
        props[idx] = training_proposals(model.base, scene, cfg.proposals_per_image);
        cached[idx] = true;
      }
      auto rois = sample_rois(props[idx], gt_boxes_of(scene),
                              gt_classes_of(scene), sampler, rng);
      if (rois.empty()) continue;
      std::vector<RoI> raw;
      for (const auto& r : rois) raw.push_back(r.roi);
      auto out = model.head->forward(feats[idx], raw);
      per_image.push_back(detector_loss<float>(out, rois));
    }
    FPN_CHECK(!per_image.empty(), "no trainable RoIs at step ", step);
    auto loss = scale(sum(concat_flat(per_image)),
                      1.0f / static_cast<float>(per_image.size()));
    const double v = loss.data()[0];
    FPN_CHECK(std::isfinite(v), "training diverged: loss ", v, " at step ", step);
    loss.backward();
    opt.step(model.head_params);
    log.losses.push_back(v);
  }
  write_train_outputs(out_dir, "det", model.head_params, opt, log, cfg);
  return log;
}

std::vector<Detection> detect(const DetectorModel& model,
                              const SyntheticScene& scene) {
  auto props = propose(model.base, scene, 1000);
  std::vector<RoI> rois;
  for (const auto& p : props) {
    Box b = clip_box(p.box, scene.width, scene.height);
    if (b.width() < 1 || b.height() < 1) continue;
    rois.push_back(make_roi(b, 0));
  }
  if (rois.empty()) return {};
  auto feats = model.base.features(image_tensor(scene));
  auto out = model.head->forward(feats, rois);

  const int cols = kNumClasses + 1;
  std::vector<Detection> all;
  for (size_t r = 0; r < rois.size(); ++r) {
    const float* logits = out.class_logits.data().data() + r * cols;
    double mx = logits[0];
    for (int c = 1; c < cols; ++c) mx = std::max<double>(mx, logits[c]);
    double denom = 0;
    for (int c = 0; c < cols; ++c) denom += std::exp(logits[c] - mx);
    const float* deltas = out.deltas.data().data() + r * 4 * kNumClasses;
    for (int c = 1; c < cols; ++c) {
      Detection d;
      d.class_id = c;
      d.score = std::exp(logits[c] - mx) / denom;
      BoxDeltas bd{deltas[4 * (c - 1)], deltas[4 * (c - 1) + 1],
                   deltas[4 * (c - 1) + 2], deltas[4 * (c - 1) + 3]};
      d.box = clip_box(decode_deltas(rois[r].box, bd), scene.width, scene.height);
      if (d.box.width() >= 1 && d.box.height() >= 1) all.push_back(d);
    }
  }

  // Per-class NMS at 0.5, then the global top 100.
  std::vector<Detection> kept;
  for (int c = 1; c <= kNumClasses; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<const Detection*> refs;
    for (const auto& d : all)
      if (d.class_id == c) {
        boxes.push_back(d.box);
        scores.push_back(d.score);
        refs.push_back(&d);
      }
    for (int i : nms(boxes, scores, 0.5, static_cast<int>(boxes.size())))
      kept.push_back(*refs[i]);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  if (kept.size() > 100) kept.resize(100);
  return kept;
}

DetectionReport evaluate_detection(const DetectorModel& model, const Dataset& data) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Box>> gts;
  std::vector<std::vector<int>> classes;
  auto t0 = std::chrono::steady_clock::now();
  for (const auto& scene : data.scenes) {
    dets.push_back(detect(model, scene));
    gts.push_back(gt_boxes_of(scene));
    classes.push_back(gt_classes_of(scene));
  }
  auto t1 = std::chrono::steady_clock::now();

  DetectionReport r;
  double acc = 0;
  for (double thr = 0.5; thr < 0.951; thr += 0.05)
    acc += average_precision(dets, gts, classes, thr);
  r.ap = acc / 10.0;
  r.ap50 = average_precision(dets, gts, classes, 0.5);

  // Size bins filter both GT and detections by box area.
  auto bin_ap = [&](double lo, double hi) {
    std::vector<std::vector<Detection>> d2(dets.size());
    std::vector<std::vector<Box>> g2(gts.size());
    std::vector<std::vector<int>> c2(gts.size());
    for (size_t i = 0; i < dets.size(); ++i) {
      for (const auto& d : dets[i])
        if (d.box.area() >= lo && d.box.area() < hi) d2[i].push_back(d);
      for (size_t g = 0; g < gts[i].size(); ++g)
        if (gts[i][g].area() >= lo && gts[i][g].area() < hi) {
          g2[i].push_back(gts[i][g]);
          c2[i].push_back(classes[i][g]);
        }
    }
    return average_precision(d2, g2, c2, 0.5);
  };
  r.ap_small = bin_ap(0, kSmallMaxArea);
  r.ap_medium = bin_ap(kSmallMaxArea, kMediumMaxArea);
  r.ap_large = bin_ap(kMediumMaxArea, std::numeric_limits<double>::infinity());
  r.seconds_per_image =
      std::chrono::duration<double>(t1 - t0).count() / data.scenes.size();
  return r;
}

std::string format_detection_report(const DetectionReport& r) {
  std::string s = "detection-report\n";
  s += "ap " + fmt(r.ap) + "\n";
  s += "ap50 " + fmt(r.ap50) + "\n";
  s += "ap_small " + fmt(r.ap_small) + "\n";
  s += "ap_medium " + fmt(r.ap_medium) + "\n";
  s += "ap_large " + fmt(r.ap_large) + "\n";
  return s;
}

MaskModel build_mask_model(const RunConfig& cfg) {
  MaskModel m;
  BackboneConfig bcfg;
  bcfg.stem_channels = cfg.stem_channels;
  bcfg.stage_channels = cfg.stage_channels;
  bcfg.blocks_per_stage = cfg.blocks_per_stage;
  bcfg.seed = mix(cfg.seed, kInitBackbone);
  m.backbone = std::make_shared<Backbone<float>>(bcfg);
  m.fpn = std::make_shared<FpnBuilder<float>>(cfg.stage_channels, cfg.mask_d,
                                              PyramidVariant::full_fpn,
                                              mix(cfg.seed, kInitPyramid));
  m.heads = std::make_shared<MaskHeads<float>>(cfg.mask_d, cfg.mask_resolution,
                                               cfg.mask_hidden,
                                               mix(cfg.seed, kInitMask));
  m.resolution = cfg.mask_resolution;
  m.params.adopt("backbone", m.backbone->params());
  m.params.adopt("fpn", m.fpn->params());
  m.params.adopt("mask", m.heads->params());
  return m;
}

FeaturePyramid<float> MaskModel::features(const Tensor<float>& image) const {
  return fpn->build(backbone->forward(image), /*with_p6=*/true);
}

namespace {

std::vector<InstanceMask> instance_masks_of(const SyntheticScene& scene) {
  std::vector<InstanceMask> out;
  for (const auto& o : scene.objects) {
    InstanceMask m;
    m.width = scene.width;
    m.height = scene.height;
    m.data = o.mask;
    m.box = o.box;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

TrainLog train_masks(MaskModel& model, const Dataset& data, const RunConfig& cfg,
                     const std::string& out_dir) {
  FPN_CHECK(!data.scenes.empty(), "empty dataset");
  SgdOptimizer<float> opt(cfg.base_lr, cfg.momentum, cfg.weight_decay);
  const auto shapes = level_shapes_for({2, 3, 4, 5, 6}, cfg.image_size);

  std::vector<MaskTargets> targets(data.scenes.size());
  std::vector<bool> cached(data.scenes.size(), false);
  MaskLossConfig loss_cfg;

  TrainLog log;
  for (int step = 0; step < cfg.steps; ++step) {
    opt.set_lr(static_cast<float>(step >= cfg.lr_decay_step ? cfg.base_lr * 0.1
                                                            : cfg.base_lr));
    auto rng = stream(cfg.seed, kSampleMask, step);
    std::vector<Tensor<float>> per_image;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const size_t idx = (static_cast<size_t>(step) * cfg.batch_size + b) %
                         data.scenes.size();
      const auto& scene = data.scenes[idx];
      if (!cached[idx]) {
        targets[idx] = build_mask_targets(instance_masks_of(scene), shapes,
                                          cfg.mask_resolution);
        cached[idx] = true;
      }
      auto outputs = model.heads->forward(model.features(image_tensor(scene)));
      per_image.push_back(mask_loss(outputs, targets[idx], loss_cfg, rng));
    }
    auto loss = scale(sum(concat_flat(per_image)),
                      1.0f / static_cast<float>(cfg.batch_size));
    const double v = loss.data()[0];
    FPN_CHECK(std::isfinite(v), "training diverged: loss ", v, " at step ", step);
    loss.backward();
    // The 10x-weighted mask term occasionally produces very large
    // gradients early on; clip so momentum cannot run away.
    clip_gradient_norm(model.params, 5.0f);
    opt.step(model.params);
    log.losses.push_back(v);
  }
  write_train_outputs(out_dir, "mask", model.params, opt, log, cfg);
  return log;
}

MaskReport evaluate_masks(const MaskModel& model, const Dataset& data) {
  std::vector<std::vector<ScoredMask>> props(data.scenes.size());
  std::vector<std::vector<std::vector<uint8_t>>> gts(data.scenes.size());
  auto t0 = std::chrono::steady_clock::now();
  for (size_t i = 0; i < data.scenes.size(); ++i) {
    const auto& scene = data.scenes[i];
    auto outputs = model.heads->forward(model.features(image_tensor(scene)));
    for (auto& p : generate_mask_proposals(outputs, model.resolution, 1000)) {
      props[i].push_back({p.score, rasterize_region_mask(p.region, p.mask,
                                                         model.resolution,
                                                         scene.width,
                                                         scene.height)});
    }
    for (const auto& o : scene.objects) gts[i].push_back(o.mask);
  }
  auto t1 = std::chrono::steady_clock::now();

  MaskReport r;
  r.ar100 = mask_average_recall(props, gts, 100);
  r.ar1k = mask_average_recall(props, gts, 1000);
  r.seconds_per_image =
      std::chrono::duration<double>(t1 - t0).count() / data.scenes.size();
  return r;
}

std::string format_mask_report(const MaskReport& r) {
  std::string s = "mask-report\n";
  s += "ar100 " + fmt(r.ar100) + "\n";
  s += "ar1k " + fmt(r.ar1k) + "\n";
  return s;
}

std::vector<std::pair<AblationRow, ProposalReport>> run_ablations(
    const RunConfig& cfg, const Dataset& train, const Dataset& eval,
    const std::string& out_dir) {
  std::vector<std::pair<AblationRow, ProposalReport>> results;
  for (AblationRow row : all_ablation_rows()) {
    auto model = build_proposal_model(cfg, row);
    train_rpn(model, train, cfg, "");
    auto report = evaluate_proposals(model, eval);
    if (!out_dir.empty()) {
      namespace fs = std::filesystem;
      fs::create_directories(out_dir);
      write_text((fs::path(out_dir) /
                  ("report_" + std::string(ablation_row_name(row)) + ".txt"))
                     .string(),
                 format_proposal_report(ablation_row_name(row), report));
    }
    results.emplace_back(row, report);
  }
  return results;
}

GradCheckSummary run_gradient_checks(uint64_t seed) {
  GradCheckSummary s;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  auto randomize = [&](Tensor<double>& t) {
    for (auto& v : t.data()) v = u(rng);
  };
  auto check_op = [&](Shape shape,
                      std::function<Tensor<double>(const Tensor<double>&)> f) {
    auto x = Tensor<double>::zeros(std::move(shape), true);
    randomize(x);
    s.max_op_error = std::max(s.max_op_error, grad_check<double>(f, x, 1e-5));
  };

  auto w = Tensor<double>::zeros({3, 2, 3, 3});
  randomize(w);
  auto bias = Tensor<double>::zeros({3});
  randomize(bias);
  check_op({1, 2, 6, 6},
           [&](const Tensor<double>& x) { return sum(conv2d(x, w, bias, 1, 1)); });
  check_op({1, 2, 6, 6},
           [&](const Tensor<double>& x) { return sum(conv2d(x, w, bias, 2, 0)); });
  check_op({1, 2, 4, 4},
           [&](const Tensor<double>& x) { return sum(nearest_upsample2x(x)); });
  check_op({1, 2, 4, 4},
           [&](const Tensor<double>& x) { return sum(max_subsample2x(x)); });
  check_op({3, 5}, [&](const Tensor<double>& x) { return sum(relu(x)); });
  check_op({3, 5}, [&](const Tensor<double>& x) { return sum(sigmoid(x)); });
  check_op({3, 5}, [&](const Tensor<double>& x) { return sum(mul(x, x)); });
  auto fw = Tensor<double>::zeros({4, 15});
  randomize(fw);
  auto fb = Tensor<double>::zeros({4});
  randomize(fb);
  check_op({1, 15}, [&](const Tensor<double>& x) {
    return sum(fully_connected(x, fw, fb));
  });
  check_op({2, 3}, [&](const Tensor<double>& x) {
    return softmax_cross_entropy(x, {1, 0});
  });
  check_op({6}, [&](const Tensor<double>& x) {
    return bce_with_logits(x, std::vector<double>{1, 0, 1, 0, 1, 1});
  });
  auto tgt = Tensor<double>::zeros({3, 4});
  randomize(tgt);
  check_op({3, 4},
           [&](const Tensor<double>& x) { return sum(smooth_l1(x, tgt)); });
  check_op({1, 2, 8, 8}, [&](const Tensor<double>& x) {
    return sum(roi_max_pool(x, 0, 1.2, 0.7, 6.3, 7.1, 3));
  });
  check_op({8}, [&](const Tensor<double>& x) {
    return sum(gather(x, {0, 3, 3, 7}));
  });

  // Composite: image -> backbone -> pyramid -> shared proposal head ->
  // scalar loss, differentiated end to end through the image.
  BackboneConfig bcfg;
  bcfg.stem_channels = 2;
  bcfg.stage_channels = {2, 3, 3, 4};
  bcfg.blocks_per_stage = {1, 1, 1, 1};
  bcfg.seed = mix(seed, 77);
  Backbone<double> backbone(bcfg);
  FpnBuilder<double> fpn(bcfg.stage_channels, 4, PyramidVariant::full_fpn,
                         mix(seed, 78));
  RpnHead<double> head(4, 3, true, {2, 3, 4, 5}, mix(seed, 79));
  // Residual closing convs and prediction layers initialize to zero,
  // which would leave the image gradient trivially zero; randomize every
  // parameter so the check exercises the whole graph.
  std::uniform_real_distribution<double> small(-0.3, 0.3);
  for (auto* pm : {&backbone.params(), &fpn.params(), &head.params()})
    for (auto& p : pm->items())
      for (auto& v : p.value.data()) v = small(rng);
  auto composite = [&](const Tensor<double>& img) {
    auto pyr = fpn.build(backbone.forward(img), false);
    auto out = head.forward(pyr);
    std::vector<Tensor<double>> parts;
    for (auto& [k, o] : out) {
      parts.push_back(sum(sigmoid(o.logits)));
      parts.push_back(sum(mul(o.deltas, o.deltas)));
    }
    return sum(concat_flat(parts));
  };
  auto img = Tensor<double>::zeros({1, 3, 32, 32}, true);
  randomize(img);
  // The composite loss is large relative to its smallest per-pixel
  // gradients, so central differences need a wider step than the op
  // checks: at 1e-5 cancellation noise dominates those coordinates,
  // while at 1e-3 the truncation error is still ~1e-6.
  s.max_composite_error = grad_check<double>(composite, img, 1e-3);
  return s;
}

}  // namespace fpn
