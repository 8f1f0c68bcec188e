#pragma once

#include <memory>

#include "fpn/backbone.hpp"
#include "fpn/config.hpp"
#include "fpn/dataset.hpp"
#include "fpn/detector.hpp"
#include "fpn/mask.hpp"
#include "fpn/metrics.hpp"
#include "fpn/rpn.hpp"

namespace fpn {

// Comparison rows of the proposal study: two single-level baselines on
// the raw backbone maps, the full pyramid, and its three structural
// ablations.
enum class AblationRow { c4_baseline, c5_baseline, fpn, bottom_up, no_lateral, finest };

const char* ablation_row_name(AblationRow row);
std::vector<AblationRow> all_ablation_rows();
AblationRow row_for_variant(PyramidVariant v);

// Backbone + pyramid + proposal head with the level set and anchor
// layout implied by the row. Single-level rows host all five anchor
// scales on their one map (15 anchors per cell); pyramid rows spread
// one scale per level (3 per cell).
struct ProposalModel {
  std::shared_ptr<Backbone<float>> backbone;
  std::shared_ptr<FpnBuilder<float>> fpn;
  std::shared_ptr<RpnHead<float>> head;
  ParameterMap<float> params;  // "backbone.*", "fpn.*", "rpn.*"
  std::vector<int> levels;
  bool with_p6 = false;

  FeaturePyramid<float> features(const Tensor<float>& image) const;
};

ProposalModel build_proposal_model(const RunConfig& cfg, AblationRow row);

Tensor<float> image_tensor(const SyntheticScene& scene);

struct TrainLog {
  std::vector<double> losses;  // one entry per step
};

// SGD with momentum; lr divided by 10 at cfg.lr_decay_step; aborts on a
// non-finite loss. Writes `rpn.ckpt`, `rpn_opt.ckpt`, `rpn_log.txt`, and
// the serialized config under out_dir (skipped when out_dir is empty).
// Step s draws all its randomness from (cfg.seed, s), so training
// resumed from a checkpoint at start_step replays the original losses.
TrainLog train_rpn(ProposalModel& model, const Dataset& data, const RunConfig& cfg,
                   const std::string& out_dir, int start_step = 0,
                   SgdOptimizer<float>* optimizer = nullptr);

std::vector<Proposal> propose(const ProposalModel& model,
                              const SyntheticScene& scene, int top_n);

struct ProposalReport {
  double ar100 = 0, ar1k = 0;
  double ar_small = 0, ar_medium = 0, ar_large = 0;
  double seconds_per_image = 0;  // reported separately, never serialized
};

ProposalReport evaluate_proposals(const ProposalModel& model, const Dataset& data);
std::string format_proposal_report(const std::string& row_name,
                                   const ProposalReport& r);

// Second stage on top of a frozen proposal model: the detector trains
// against a fixed set of proposals computed once per image.
struct DetectorModel {
  ProposalModel base;
  std::shared_ptr<DetectorHead<float>> head;
  ParameterMap<float> head_params;  // the trainable part
};

DetectorModel build_detector_model(const RunConfig& cfg, ProposalModel base);

TrainLog train_detector(DetectorModel& model, const Dataset& data,
                        const RunConfig& cfg, const std::string& out_dir);

// Proposals -> per-RoI classification -> class-specific box regression
// -> per-class NMS at 0.5 -> top 100 detections.
std::vector<Detection> detect(const DetectorModel& model,
                              const SyntheticScene& scene);

struct DetectionReport {
  double ap = 0;      // mean over IoU 0.5..0.95
  double ap50 = 0;
  double ap_small = 0, ap_medium = 0, ap_large = 0;
  double seconds_per_image = 0;
};

DetectionReport evaluate_detection(const DetectorModel& model, const Dataset& data);
std::string format_detection_report(const DetectionReport& r);

// Mask proposer: its own backbone + pyramid at mask_d channels plus the
// dual-kernel sliding heads.
struct MaskModel {
  std::shared_ptr<Backbone<float>> backbone;
  std::shared_ptr<FpnBuilder<float>> fpn;
  std::shared_ptr<MaskHeads<float>> heads;
  ParameterMap<float> params;
  int resolution = 14;

  FeaturePyramid<float> features(const Tensor<float>& image) const;
};

MaskModel build_mask_model(const RunConfig& cfg);

TrainLog train_masks(MaskModel& model, const Dataset& data, const RunConfig& cfg,
                     const std::string& out_dir);

struct MaskReport {
  double ar100 = 0, ar1k = 0;
  double seconds_per_image = 0;
};

MaskReport evaluate_masks(const MaskModel& model, const Dataset& data);
std::string format_mask_report(const MaskReport& r);

// One proposal study pass: train + evaluate every row under identical
// data, seeds, and schedule. Reports land in out_dir as
// `report_<row>.txt` when out_dir is nonempty.
std::vector<std::pair<AblationRow, ProposalReport>> run_ablations(
    const RunConfig& cfg, const Dataset& train, const Dataset& eval,
    const std::string& out_dir);

struct GradCheckSummary {
  double max_op_error = 0;         // single differentiable ops
  double max_composite_error = 0;  // backbone -> pyramid -> head graphs
};

// Double-precision central-difference sweep used by the CLI.
GradCheckSummary run_gradient_checks(uint64_t seed);

}  // namespace fpn
