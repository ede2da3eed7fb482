#include "cunsb/pipeline.hpp"

#include <filesystem>

#include "cunsb/error.hpp"
#include "cunsb/image_io.hpp"
#include "cunsb/text.hpp"

namespace cunsb::pipeline {

namespace fs = std::filesystem;

Rng image_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

std::vector<Tensor> enhance_image(const train::Trainer& model, const Tensor& image, const EnhanceOptions& options,
                                  Rng& rng) {
  const train::TrainConfig& cfg = model.config();
  const int n = cfg.bridge.num_steps;
  if (!options.all_steps && (options.step < 0 || options.step >= n)) {
    throw UsageError("enhance: step " + std::to_string(options.step) + " outside [0, " + std::to_string(n) + ")");
  }
  if (image.n() != 1 || image.c() != cfg.generator.in_channels) {
    throw DataError("enhance: expected a " + std::to_string(cfg.generator.in_channels) + "-channel image, got " +
                    std::to_string(image.c()) + " channel(s)");
  }
  return bridge::infer(image, model.generator_fn(), cfg.bridge, options.all_steps, rng, options.all_steps ? 0 : options.step);
}

std::vector<std::string> enhance_path(const train::Trainer& model, const std::string& input,
                                      const std::string& output_dir, const EnhanceOptions& options) {
  std::vector<std::string> inputs;
  std::error_code ec;
  if (fs::is_directory(input, ec)) {
    inputs = io::list_pngs(input);
    if (inputs.empty()) throw DataError("enhance: no PNG images in '" + input + "'");
  } else if (fs::is_regular_file(input, ec)) {
    inputs.push_back(input);
  } else {
    throw DataError("enhance: cannot read input '" + input + "'");
  }
  fs::create_directories(output_dir, ec);
  if (ec) throw DataError("enhance: cannot create '" + output_dir + "': " + ec.message());

  const int size = model.config().image_size;
  Rng rng(options.seed);
  std::vector<std::string> written;
  for (const std::string& path : inputs) {
    const io::Image im = io::read_png(path);
    if (im.channels != 3) {
      throw DataError("enhance: '" + path + "' has " + std::to_string(im.channels) + " channel(s); expected 3 (RGB)");
    }
    const std::vector<Tensor> outs = enhance_image(model, io::to_tensor(io::ingest(im, size)), options, rng);
    const std::string id = io::stem(path);
    for (std::size_t k = 0; k < outs.size(); ++k) {
      const std::string name = options.all_steps ? id + "_step" + std::to_string(k) + ".png" : id + ".png";
      const std::string dst = (fs::path(output_dir) / name).string();
      io::write_png(dst, io::to_image(outs[k]));
      written.push_back(dst);
    }
  }
  return written;
}

int degrade_directory(const std::string& input_dir, const std::string& output_dir,
                      const degrade::DegradationSpec& spec, std::uint64_t seed) {
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto inputs = io::list_pngs(input_dir);
  if (inputs.empty()) throw DataError("degrade: no PNG images in '" + input_dir + "'");
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) throw DataError("degrade: cannot create '" + output_dir + "': " + ec.message());
  int k = 0;
  for (const std::string& path : inputs) {
    Rng rng = image_rng(seed, static_cast<std::uint64_t>(k));
    const Tensor x = io::to_tensor(io::read_png(path));
    const degrade::Degraded d = degrade::compose(x, spec, rng);
    const std::string id = io::stem(path);
    io::write_png((fs::path(output_dir) / (id + ".png")).string(), io::to_image(d.image));
    text::write_file((fs::path(output_dir) / (id + ".record.txt")).string(), degrade::serialize_record(d.record));
    ++k;
  }
  return k;
}

}  // namespace cunsb::pipeline
