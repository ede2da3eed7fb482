#include "cunsb/cunsb.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <stdexcept>
#include <string>

#include "cunsb/config.hpp"
#include "cunsb/error.hpp"
#include "cunsb/evaluate.hpp"
#include "cunsb/image_io.hpp"
#include "cunsb/pipeline.hpp"
#include "cunsb/trainer.hpp"

struct cunsb_config {
  cunsb::config::FullConfig value;
};

struct cunsb_model {
  std::unique_ptr<cunsb::train::Trainer> trainer;
};

struct cunsb_image {
  cunsb::io::Image value;
};

namespace {

thread_local std::string g_last_error;

cunsb_status fail(cunsb_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
cunsb_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return CUNSB_OK;
  } catch (const cunsb::Error& e) {
    return fail(static_cast<cunsb_status>(e.kind()), e.what());
  } catch (const std::invalid_argument& e) {
    return fail(CUNSB_ERR_USAGE, e.what());
  } catch (const std::out_of_range& e) {
    return fail(CUNSB_ERR_USAGE, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CUNSB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(CUNSB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CUNSB_ERR_INTERNAL, "unknown error");
  }
}

void need(const void* p, const char* name) {
  if (!p) throw cunsb::UsageError(std::string(name) + " must not be NULL");
}

cunsb::Tensor stack(const cunsb_image* const* images, std::size_t count, const char* name) {
  need(images, name);
  std::vector<cunsb::Tensor> parts;
  for (std::size_t i = 0; i < count; ++i) {
    need(images[i], name);
    if (images[i]->value.channels != 3) throw cunsb::DataError(std::string(name) + ": images must have 3 channels");
    parts.push_back(cunsb::io::to_tensor(images[i]->value));
    if (!(parts.back().shape() == parts.front().shape())) throw cunsb::DataError(std::string(name) + ": images differ in size");
  }
  return cunsb::concat_batch(parts);
}

}  // namespace

extern "C" {

const char* cunsb_version(void) { return "1.0.0"; }

const char* cunsb_last_error(void) { return g_last_error.c_str(); }

const char* cunsb_status_name(cunsb_status status) {
  switch (status) {
    case CUNSB_OK: return "ok";
    case CUNSB_ERR_USAGE: return "usage error";
    case CUNSB_ERR_DATA: return "data error";
    case CUNSB_ERR_CHECKPOINT: return "checkpoint error";
    case CUNSB_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

cunsb_status cunsb_config_create(cunsb_config** out) {
  return guarded([&] {
    need(out, "out");
    auto c = std::make_unique<cunsb_config>();
    c->value.train.sync();
    cunsb::config::apply_env_seed(c->value);
    *out = c.release();
  });
}

cunsb_status cunsb_config_load(const char* path, cunsb_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto c = std::make_unique<cunsb_config>();
    c->value = cunsb::config::load_file(path);
    *out = c.release();
  });
}

cunsb_status cunsb_config_set(cunsb_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    cunsb::config::set_value(config->value, key, value);
    config->value.train.sync();
  });
}

cunsb_status cunsb_config_get(const cunsb_config* config, const char* key, char* buf, size_t capacity, size_t* needed) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    const auto kv = cunsb::config::to_key_values(config->value);
    const auto it = kv.find(key);
    if (it == kv.end()) throw cunsb::UsageError(std::string("unknown config key '") + key + "'");
    const std::size_t size = it->second.size() + 1;
    if (needed) *needed = size;
    if (buf && capacity >= size) std::memcpy(buf, it->second.c_str(), size);
    else if (buf && capacity > 0) throw cunsb::UsageError("buffer too small for config value");
  });
}

void cunsb_config_free(cunsb_config* config) { delete config; }

cunsb_status cunsb_image_create(int width, int height, int channels, const uint8_t* pixels, cunsb_image** out) {
  return guarded([&] {
    need(out, "out");
    need(pixels, "pixels");
    if (width < 1 || height < 1 || (channels != 1 && channels != 3)) {
      throw cunsb::UsageError("image must have positive size and 1 or 3 channels");
    }
    auto im = std::make_unique<cunsb_image>();
    im->value.width = width;
    im->value.height = height;
    im->value.channels = channels;
    im->value.pixels.assign(pixels, pixels + static_cast<std::size_t>(width) * height * channels);
    *out = im.release();
  });
}

cunsb_status cunsb_image_load_png(const char* path, cunsb_image** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto im = std::make_unique<cunsb_image>();
    im->value = cunsb::io::read_png(path);
    *out = im.release();
  });
}

cunsb_status cunsb_image_save_png(const cunsb_image* image, const char* path) {
  return guarded([&] {
    need(image, "image");
    need(path, "path");
    cunsb::io::write_png(path, image->value);
  });
}

int cunsb_image_width(const cunsb_image* image) { return image ? image->value.width : 0; }
int cunsb_image_height(const cunsb_image* image) { return image ? image->value.height : 0; }
int cunsb_image_channels(const cunsb_image* image) { return image ? image->value.channels : 0; }
const uint8_t* cunsb_image_pixels(const cunsb_image* image) { return image ? image->value.pixels.data() : nullptr; }
void cunsb_image_free(cunsb_image* image) { delete image; }

cunsb_status cunsb_model_create(const cunsb_config* config, cunsb_model** out) {
  return guarded([&] {
    need(out, "out");
    auto m = std::make_unique<cunsb_model>();
    cunsb::train::TrainConfig cfg = config ? config->value.train : cunsb::train::TrainConfig{};
    m->trainer = std::make_unique<cunsb::train::Trainer>(cfg);
    *out = m.release();
  });
}

cunsb_status cunsb_model_load(const char* path, const cunsb_config* expected, cunsb_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto m = std::make_unique<cunsb_model>();
    m->trainer = cunsb::train::Trainer::load(path, expected ? &expected->value.train : nullptr);
    *out = m.release();
  });
}

cunsb_status cunsb_model_save(const cunsb_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    model->trainer->save(path);
  });
}

int cunsb_model_num_steps(const cunsb_model* model) { return model ? model->trainer->config().bridge.num_steps : 0; }

void cunsb_model_free(cunsb_model* model) { delete model; }

cunsb_status cunsb_model_train_step(cunsb_model* model, const cunsb_image* const* low, const cunsb_image* const* high,
                                    size_t count, cunsb_loss_report* report) {
  return guarded([&] {
    need(model, "model");
    if (count < 2) throw cunsb::UsageError("train_step needs at least two images per domain");
    const cunsb::train::StepResult r = model->trainer->train_step(stack(low, count, "low"), stack(high, count, "high"));
    if (report) {
      report->adv = r.report.adv;
      report->sb_transport = r.report.sb_transport;
      report->sb_entropy = r.report.sb_entropy;
      report->ssim_gen = r.report.ssim_gen;
      report->ssim_idt = r.report.ssim_idt;
      report->patchnce = r.report.patchnce;
      report->total = r.report.total;
      report->discriminator_loss = r.discriminator_loss;
      report->critic_statistic = r.critic_statistic;
      report->t_index = r.t_index;
    }
  });
}

cunsb_status cunsb_model_train(cunsb_model* model, const char* low_dir, const char* high_dir, const char* out_dir,
                               int max_epochs) {
  return guarded([&] {
    need(model, "model");
    need(low_dir, "low_dir");
    need(high_dir, "high_dir");
    const auto data = cunsb::train::load_dataset(low_dir, high_dir, model->trainer->config().image_size);
    cunsb::train::TrainOptions opts;
    opts.output_dir = out_dir ? out_dir : "";
    opts.max_epochs = max_epochs;
    cunsb::train::run_training(*model->trainer, data, opts);
  });
}

cunsb_status cunsb_model_enhance(const cunsb_model* model, const cunsb_image* input, int step, uint64_t seed,
                                 cunsb_image** outs, size_t capacity, size_t* count) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    if (input->value.channels != 3) {
      throw cunsb::DataError("enhance expects a 3-channel image, got " + std::to_string(input->value.channels));
    }
    cunsb::pipeline::EnhanceOptions opts;
    opts.all_steps = step < 0;
    opts.step = step < 0 ? 0 : step;
    opts.seed = seed;
    cunsb::Rng rng(seed);
    const int size = model->trainer->config().image_size;
    const auto results = cunsb::pipeline::enhance_image(
        *model->trainer, cunsb::io::to_tensor(cunsb::io::ingest(input->value, size)), opts, rng);
    if (count) *count = results.size();
    if (outs && capacity < results.size()) throw cunsb::UsageError("output array too small");
    for (std::size_t i = 0; outs && i < results.size(); ++i) {
      outs[i] = new cunsb_image{cunsb::io::to_image(results[i])};
    }
  });
}

cunsb_status cunsb_enhance_path(const cunsb_model* model, const char* input, const char* out_dir, int step,
                                uint64_t seed, size_t* written) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    need(out_dir, "out_dir");
    cunsb::pipeline::EnhanceOptions opts;
    opts.all_steps = step < 0;
    opts.step = step < 0 ? 0 : step;
    opts.seed = seed;
    const auto files = cunsb::pipeline::enhance_path(*model->trainer, input, out_dir, opts);
    if (written) *written = files.size();
  });
}

cunsb_status cunsb_degrade_dir(const char* in_dir, const char* out_dir, const cunsb_config* config, uint64_t seed,
                               size_t* count) {
  return guarded([&] {
    need(in_dir, "in_dir");
    need(out_dir, "out_dir");
    cunsb::degrade::DegradationSpec spec = config ? config->value.degrade : cunsb::degrade::DegradationSpec{};
    spec.seed = seed;
    const int n = cunsb::pipeline::degrade_directory(in_dir, out_dir, spec, seed);
    if (count) *count = static_cast<size_t>(n);
  });
}

cunsb_status cunsb_evaluate(const char* enhanced_dir, const char* truth_dir, int per_step, int image_size,
                            const char* out_dir, cunsb_eval_summary* summary) {
  return guarded([&] {
    need(enhanced_dir, "enhanced_dir");
    need(truth_dir, "truth_dir");
    cunsb::eval::EvalOptions opts;
    opts.per_step = per_step != 0;
    opts.image_size = image_size;
    opts.output_dir = out_dir ? out_dir : "";
    const auto r = cunsb::eval::evaluate_dataset(enhanced_dir, truth_dir, opts);
    if (summary) {
      summary->processed = r.processed;
      summary->skipped = r.skipped;
      summary->psnr_mean = r.overall[0].mean;
      summary->ssim_mean = r.overall[1].mean;
    }
  });
}

}  // extern "C"
