// cunsb command line: train, enhance, degrade, eval. Uses the C API only.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cunsb/cunsb.h"

namespace {

struct Failure {
  int code;
};

void check(cunsb_status s, const std::string& what) {
  if (s == CUNSB_OK) return;
  std::fprintf(stderr, "cunsb: %s: %s (%s)\n", what.c_str(), cunsb_last_error(), cunsb_status_name(s));
  throw Failure{static_cast<int>(s)};
}

struct ConfigDeleter {
  void operator()(cunsb_config* c) const { cunsb_config_free(c); }
};
struct ModelDeleter {
  void operator()(cunsb_model* m) const { cunsb_model_free(m); }
};
using ConfigPtr = std::unique_ptr<cunsb_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<cunsb_model, ModelDeleter>;

ConfigPtr open_config(const std::string& path) {
  cunsb_config* c = nullptr;
  if (path.empty()) check(cunsb_config_create(&c), "config");
  else check(cunsb_config_load(path.c_str(), &c), "config '" + path + "'");
  return ConfigPtr(c);
}

void apply_overrides(cunsb_config* c, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "cunsb: --set expects key=value, got '%s'\n", kv.c_str());
      throw Failure{CUNSB_ERR_USAGE};
    }
    check(cunsb_config_set(c, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set " + kv);
  }
}

std::string config_value(const cunsb_config* c, const char* key) {
  size_t needed = 0;
  check(cunsb_config_get(c, key, nullptr, 0, &needed), key);
  std::string out(needed, '\0');
  check(cunsb_config_get(c, key, out.data(), out.size(), &needed), key);
  out.resize(needed - 1);
  return out;
}

std::uint64_t resolve_seed(const cunsb_config* c, const std::string& seed_flag) {
  if (!seed_flag.empty()) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(seed_flag, &used);
      if (used == seed_flag.size()) return v;
    } catch (const std::exception&) {
    }
    std::fprintf(stderr, "cunsb: --seed expects a non-negative integer, got '%s'\n", seed_flag.c_str());
    throw Failure{CUNSB_ERR_USAGE};
  }
  return std::stoull(config_value(c, "seed"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unpaired bridge-based fundus enhancement"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cunsb_version()));

  std::string config_path, seed_flag, out_dir;
  std::vector<std::string> sets;

  auto* train = app.add_subcommand("train", "Train on unpaired low/high quality PNG directories");
  std::string low_dir, high_dir, resume;
  int max_epochs = -1;
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--low", low_dir, "low-quality image directory")->required();
  train->add_option("--high", high_dir, "high-quality image directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--seed", seed_flag, "overrides CUNSB_SEED and the config seed");
  train->add_option("--max-epochs", max_epochs, "stop after this many epochs");
  train->add_option("--set", sets, "override a config key: key=value");

  auto* enhance = app.add_subcommand("enhance", "Enhance a PNG file or directory with a checkpoint");
  std::string input, checkpoint;
  int step = 0;
  bool all_steps = false;
  enhance->add_option("input", input, "PNG file or directory")->required();
  enhance->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  enhance->add_option("--out", out_dir, "output directory")->required();
  auto* step_opt = enhance->add_option("--step", step, "bridge step k whose prediction is written");
  enhance->add_flag("--all-steps", all_steps, "write every step as <id>_step<k>.png")->excludes(step_opt);
  enhance->add_option("--seed", seed_flag, "sampling seed");
  enhance->add_option("--config", config_path, "require the checkpoint to match this architecture");

  auto* degrade = app.add_subcommand("degrade", "Synthesize low-quality versions of clean images");
  std::string in_dir;
  degrade->add_option("input", in_dir, "clean PNG directory")->required();
  degrade->add_option("--out", out_dir, "output directory")->required();
  degrade->add_option("--spec", config_path, "key=value file with degrade.* keys");
  degrade->add_option("--seed", seed_flag, "overrides CUNSB_SEED and the spec seed");
  degrade->add_option("--set", sets, "override a key: key=value");

  auto* evaluate = app.add_subcommand("eval", "PSNR and SSIM of enhanced images against ground truth");
  std::string enhanced_dir, truth_dir;
  bool per_step = false;
  int image_size = 256;
  evaluate->add_option("enhanced", enhanced_dir, "enhanced PNG directory")->required();
  evaluate->add_option("truth", truth_dir, "ground-truth PNG directory")->required();
  evaluate->add_option("--out", out_dir, "directory for CSV and plot output");
  evaluate->add_flag("--per-step", per_step, "group <id>_step<k> files by step");
  evaluate->add_option("--image-size", image_size, "center-crop and resize side");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : CUNSB_ERR_USAGE;
  }

  try {
    if (*train) {
      ConfigPtr cfg = open_config(config_path);
      apply_overrides(cfg.get(), sets);
      if (!seed_flag.empty()) check(cunsb_config_set(cfg.get(), "seed", seed_flag.c_str()), "--seed");
      cunsb_model* raw = nullptr;
      if (resume.empty()) check(cunsb_model_create(cfg.get(), &raw), "model");
      else check(cunsb_model_load(resume.c_str(), cfg.get(), &raw), "resume '" + resume + "'");
      ModelPtr model(raw);
      check(cunsb_model_train(model.get(), low_dir.c_str(), high_dir.c_str(), out_dir.c_str(), max_epochs), "train");
      std::printf("training finished; checkpoint written to %s/latest.ckpt\n", out_dir.c_str());
    } else if (*enhance) {
      ConfigPtr expected;
      if (!config_path.empty()) expected = open_config(config_path);
      cunsb_model* raw = nullptr;
      check(cunsb_model_load(checkpoint.c_str(), expected.get(), &raw), "checkpoint '" + checkpoint + "'");
      ModelPtr model(raw);
      ConfigPtr defaults = open_config("");
      const std::uint64_t seed = resolve_seed(defaults.get(), seed_flag);
      size_t written = 0;
      check(cunsb_enhance_path(model.get(), input.c_str(), out_dir.c_str(), all_steps ? -1 : step, seed, &written),
            "enhance");
      std::printf("wrote %zu image(s) to %s\n", written, out_dir.c_str());
    } else if (*degrade) {
      ConfigPtr cfg = open_config(config_path);
      apply_overrides(cfg.get(), sets);
      const std::uint64_t seed = resolve_seed(cfg.get(), seed_flag);
      size_t count = 0;
      check(cunsb_degrade_dir(in_dir.c_str(), out_dir.c_str(), cfg.get(), seed, &count), "degrade");
      std::printf("degraded %zu image(s) into %s\n", count, out_dir.c_str());
    } else if (*evaluate) {
      cunsb_eval_summary s{};
      check(cunsb_evaluate(enhanced_dir.c_str(), truth_dir.c_str(), per_step ? 1 : 0, image_size,
                           out_dir.empty() ? nullptr : out_dir.c_str(), &s),
            "eval");
      std::printf("processed %d pair(s), skipped %d; mean PSNR %s dB, mean SSIM %.6f\n", s.processed, s.skipped,
                  std::isinf(s.psnr_mean) ? "inf" : std::to_string(s.psnr_mean).c_str(), s.ssim_mean);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
