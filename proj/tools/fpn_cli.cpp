// Command-line front end.
//
//   fpn gen-data    --out DIR [--config F] [--seed N] [--count N]
//   fpn train-rpn   --data DIR --out DIR [--config F] [--seed N] [--variant V]
//   fpn train-det   --data DIR --rpn DIR --out DIR [--config F] [--seed N]
//   fpn train-mask  --data DIR --out DIR [--config F] [--seed N]
//   fpn eval        --stage {rpn,det,mask} --model DIR --data DIR [--out DIR]
//   fpn ablate      --out DIR [--config F] [--seed N]
//   fpn grad-check  [--seed N]
//
// Exit codes: 0 success, 1 bad arguments or configuration, 2 failure
// while running (I/O errors, diverged training, malformed data).
// File layouts are described in docs/formats.md.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fpn/trainer.hpp"

namespace fs = std::filesystem;
using namespace fpn;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string variant;
  int64_t seed = -1;  // -1: keep the config's seed
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_variant) {
  cmd->add_option("--config", opts.config_path, "run configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "override the configured seed");
  if (with_variant)
    cmd->add_option("--variant", opts.variant,
                    "pyramid variant: fpn, bottomup, nolateral, finest");
}

// Resolves the effective RunConfig from --config / --seed / --variant.
// Throws std::runtime_error on malformed files or values; the caller
// maps that to exit code 1 because it is a validation problem.
RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = load_run_config(opts.config_path);
  if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
  if (!opts.variant.empty()) cfg.variant = parse_variant(opts.variant);
  return cfg;
}

DatasetSpec spec_for(const RunConfig& cfg) {
  DatasetSpec spec;
  spec.image_size = cfg.image_size;
  // Objects span 8..96 px at the default 128 px images; cap the top end
  // for smaller images so shapes still fit.
  spec.max_object = std::min(spec.max_object, 0.75 * cfg.image_size);
  return spec;
}

void write_report(const std::string& out_dir, const std::string& name,
                  const std::string& text) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / name, std::ios::binary);
  os << text;
  FPN_CHECK(os.good(), "cannot write report to ", out_dir);
}

ProposalModel load_proposal_model(const RunConfig& cfg, const std::string& dir) {
  auto model = build_proposal_model(cfg, row_for_variant(cfg.variant));
  load_checkpoint((fs::path(dir) / "rpn.ckpt").string(), model.params);
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-pyramid proposal/detection toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string out_dir, data_dir, rpn_dir, model_dir, stage;
  int64_t count = -1;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  add_common(gen, opts, false);
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of images (default: train_images)");

  auto* trpn = app.add_subcommand("train-rpn", "train the proposal network");
  add_common(trpn, opts, true);
  trpn->add_option("--data", data_dir, "dataset directory")->required()
      ->check(CLI::ExistingDirectory);
  trpn->add_option("--out", out_dir, "checkpoint/log directory")->required();

  auto* tdet = app.add_subcommand("train-det", "train the detection head");
  add_common(tdet, opts, true);
  tdet->add_option("--data", data_dir, "dataset directory")->required()
      ->check(CLI::ExistingDirectory);
  tdet->add_option("--rpn", rpn_dir, "directory with the trained rpn.ckpt")
      ->required()->check(CLI::ExistingDirectory);
  tdet->add_option("--out", out_dir, "checkpoint/log directory")->required();

  auto* tmask = app.add_subcommand("train-mask", "train the mask proposer");
  add_common(tmask, opts, false);
  tmask->add_option("--data", data_dir, "dataset directory")->required()
      ->check(CLI::ExistingDirectory);
  tmask->add_option("--out", out_dir, "checkpoint/log directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a trained model");
  add_common(ev, opts, true);
  ev->add_option("--stage", stage, "rpn, det, or mask")->required()
      ->check(CLI::IsMember({"rpn", "det", "mask"}));
  ev->add_option("--model", model_dir, "directory with checkpoints")->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--data", data_dir, "dataset directory")->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--out", out_dir, "directory for the report file");

  auto* ab = app.add_subcommand(
      "ablate", "train and evaluate every comparison row");
  add_common(ab, opts, false);
  ab->add_option("--out", out_dir, "directory for reports and datasets")
      ->required();

  auto* gc = app.add_subcommand("grad-check", "run the gradient sweep");
  add_common(gc, opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  RunConfig cfg;
  try {
    cfg = resolve_config(opts);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  try {
    if (gen->parsed()) {
      int n = count > 0 ? static_cast<int>(count) : cfg.train_images;
      generate_dataset(out_dir, n, cfg.seed, spec_for(cfg));
      std::printf("wrote %d images to %s\n", n, out_dir.c_str());

    } else if (trpn->parsed()) {
      auto data = load_dataset(data_dir);
      auto model = build_proposal_model(cfg, row_for_variant(cfg.variant));
      auto log = train_rpn(model, data, cfg, out_dir);
      std::printf("trained %zu steps, final loss %.6f\n", log.losses.size(),
                  log.losses.empty() ? 0.0 : log.losses.back());

    } else if (tdet->parsed()) {
      auto data = load_dataset(data_dir);
      auto model = build_detector_model(cfg, load_proposal_model(cfg, rpn_dir));
      auto log = train_detector(model, data, cfg, out_dir);
      // Copy the frozen first stage next to det.ckpt so the run
      // directory is self-contained for `eval --stage det`.
      save_checkpoint((fs::path(out_dir) / "rpn.ckpt").string(),
                      model.base.params);
      std::printf("trained %zu steps, final loss %.6f\n", log.losses.size(),
                  log.losses.empty() ? 0.0 : log.losses.back());

    } else if (tmask->parsed()) {
      auto data = load_dataset(data_dir);
      auto model = build_mask_model(cfg);
      auto log = train_masks(model, data, cfg, out_dir);
      std::printf("trained %zu steps, final loss %.6f\n", log.losses.size(),
                  log.losses.empty() ? 0.0 : log.losses.back());

    } else if (ev->parsed()) {
      auto data = load_dataset(data_dir);
      if (stage == "rpn") {
        auto model = load_proposal_model(cfg, model_dir);
        auto r = evaluate_proposals(model, data);
        auto text = format_proposal_report(
            ablation_row_name(row_for_variant(cfg.variant)), r);
        std::fputs(text.c_str(), stdout);
        std::printf("seconds_per_image %.4f\n", r.seconds_per_image);
        write_report(out_dir, "report_rpn.txt", text);
      } else if (stage == "det") {
        auto model =
            build_detector_model(cfg, load_proposal_model(cfg, model_dir));
        load_checkpoint((fs::path(model_dir) / "det.ckpt").string(),
                        model.head_params);
        auto r = evaluate_detection(model, data);
        auto text = format_detection_report(r);
        std::fputs(text.c_str(), stdout);
        std::printf("seconds_per_image %.4f\n", r.seconds_per_image);
        write_report(out_dir, "report_det.txt", text);
      } else {
        auto model = build_mask_model(cfg);
        load_checkpoint((fs::path(model_dir) / "mask.ckpt").string(),
                        model.params);
        auto r = evaluate_masks(model, data);
        auto text = format_mask_report(r);
        std::fputs(text.c_str(), stdout);
        std::printf("seconds_per_image %.4f\n", r.seconds_per_image);
        write_report(out_dir, "report_mask.txt", text);
      }

    } else if (ab->parsed()) {
      DatasetSpec spec = spec_for(cfg);
      auto train_dir = (fs::path(out_dir) / "train_data").string();
      auto eval_dir = (fs::path(out_dir) / "eval_data").string();
      generate_dataset(train_dir, cfg.train_images, cfg.seed, spec);
      generate_dataset(eval_dir, cfg.eval_images, cfg.seed + 1, spec);
      auto rows = run_ablations(cfg, load_dataset(train_dir),
                                load_dataset(eval_dir), out_dir);
      for (const auto& [row, r] : rows)
        std::printf("%-10s ar100 %.4f ar1k %.4f small %.4f medium %.4f large %.4f\n",
                    ablation_row_name(row), r.ar100, r.ar1k, r.ar_small,
                    r.ar_medium, r.ar_large);

    } else if (gc->parsed()) {
      auto s = run_gradient_checks(cfg.seed);
      std::printf("max op error        %.3e\n", s.max_op_error);
      std::printf("max composite error %.3e\n", s.max_composite_error);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
