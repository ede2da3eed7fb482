#pragma once

// Directory-level entry points behind the C API and the CLI.

#include <cstdint>
#include <string>
#include <vector>

#include "cunsb/config.hpp"
#include "cunsb/trainer.hpp"

namespace cunsb::pipeline {

struct EnhanceOptions {
  int step = 0;            // which x_hat_1^{t_k} to write
  bool all_steps = false;  // write every step as <id>_step<k>.png
  std::uint64_t seed = 0;
};

/// Enhances one (1, 3, H, W) image. Returns one tensor, or N with all_steps.
std::vector<Tensor> enhance_image(const train::Trainer& model, const Tensor& image, const EnhanceOptions& options, Rng& rng);

/// Input is a PNG file or a directory of PNGs. Each image is center-cropped
/// and resized to the model's image_size. Returns the written paths.
std::vector<std::string> enhance_path(const train::Trainer& model, const std::string& input,
                                      const std::string& output_dir, const EnhanceOptions& options);

/// Degrades every PNG in input_dir, writing <stem>.png and <stem>.record.txt.
/// Image k uses an rng seeded from (seed, k). Returns the image count.
int degrade_directory(const std::string& input_dir, const std::string& output_dir,
                      const degrade::DegradationSpec& spec, std::uint64_t seed);

/// Per-image rng used by degrade_directory.
Rng image_rng(std::uint64_t seed, std::uint64_t index);

}  // namespace cunsb::pipeline
