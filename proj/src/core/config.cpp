#include "cunsb/config.hpp"

#include <cstdlib>
#include <functional>
#include <stdexcept>

#include "cunsb/error.hpp"
#include "cunsb/text.hpp"

namespace cunsb::config {

namespace {

struct Field {
  std::string key;
  std::function<std::string(FullConfig&)> get;
  std::function<void(FullConfig&, const std::string&)> set;
  bool degrade = false;
};

template <class Ref>
Field real(std::string key, Ref ref) {
  return {key, [ref](FullConfig& c) { return text::format_double(ref(c)); },
          [ref, key](FullConfig& c, const std::string& v) { ref(c) = text::parse_double(v, key); }};
}

template <class Ref>
Field integer(std::string key, Ref ref) {
  return {key, [ref](FullConfig& c) { return std::to_string(ref(c)); },
          [ref, key](FullConfig& c, const std::string& v) {
            const long long x = text::parse_int(v, key);
            if (x < -2147483647LL || x > 2147483647LL) throw std::invalid_argument(key + ": out of range");
            ref(c) = static_cast<int>(x);
          }};
}

template <class Ref>
Field boolean(std::string key, Ref ref) {
  return {key, [ref](FullConfig& c) { return std::string(ref(c) ? "true" : "false"); },
          [ref, key](FullConfig& c, const std::string& v) { ref(c) = text::parse_bool(v, key); }};
}

template <class Ref>
Field range(std::string key, Ref ref) {
  return {key,
          [ref](FullConfig& c) { return text::format_double(ref(c).lo) + "," + text::format_double(ref(c).hi); },
          [ref, key](FullConfig& c, const std::string& v) {
            const auto parts = text::split(v, ',');
            if (parts.size() != 2) throw std::invalid_argument(key + ": expected 'lo,hi'");
            ref(c).lo = text::parse_double(parts[0], key);
            ref(c).hi = text::parse_double(parts[1], key);
          },
          true};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = FullConfig;
    std::vector<Field> f;
    f.push_back(integer("epochs", [](C& c) -> int& { return c.train.epochs; }));
    f.push_back(integer("decay_start_epoch", [](C& c) -> int& { return c.train.decay_start_epoch; }));
    f.push_back(integer("batch_size", [](C& c) -> int& { return c.train.batch_size; }));
    f.push_back(real("learning_rate", [](C& c) -> double& { return c.train.learning_rate; }));
    f.push_back(real("adam_beta1", [](C& c) -> double& { return c.train.adam_beta1; }));
    f.push_back(real("adam_beta2", [](C& c) -> double& { return c.train.adam_beta2; }));
    f.push_back(real("lambda_sb", [](C& c) -> double& { return c.train.weights.lambda_sb; }));
    f.push_back(real("lambda_p", [](C& c) -> double& { return c.train.weights.lambda_p; }));
    f.push_back(real("lambda_s", [](C& c) -> double& { return c.train.weights.lambda_s; }));
    f.push_back(real("tau", [](C& c) -> double& { return c.train.bridge.tau; }));
    f.push_back(integer("num_steps", [](C& c) -> int& { return c.train.bridge.num_steps; }));
    f.push_back({"seed", [](C& c) { return std::to_string(c.train.seed); },
                 [](C& c, const std::string& v) { c.train.seed = text::parse_u64(v, "seed"); }});

    f.push_back(integer("generator.in_channels", [](C& c) -> int& { return c.train.generator.in_channels; }));
    f.push_back(integer("generator.base_channels", [](C& c) -> int& { return c.train.generator.base_channels; }));
    f.push_back(integer("generator.depth", [](C& c) -> int& { return c.train.generator.depth; }));
    f.push_back(integer("generator.num_bottleneck", [](C& c) -> int& { return c.train.generator.num_bottleneck; }));
    f.push_back(integer("generator.time_embed_dim", [](C& c) -> int& { return c.train.generator.time_embed_dim; }));
    f.push_back(integer("generator.noise_dim", [](C& c) -> int& { return c.train.generator.noise_dim; }));
    f.push_back(integer("generator.dsc_kernel_size", [](C& c) -> int& { return c.train.generator.dsc_kernel_size; }));
    f.push_back({"generator.dsc_axes", [](C& c) { return net::to_string(c.train.generator.dsc_axes); },
                 [](C& c, const std::string& v) { c.train.generator.dsc_axes = net::parse_dsc_axes(v); }});
    f.push_back(boolean("generator.use_skips", [](C& c) -> bool& { return c.train.generator.use_skips; }));

    f.push_back(integer("discriminator.in_channels", [](C& c) -> int& { return c.train.discriminator.in_channels; }));
    f.push_back(integer("discriminator.base_channels", [](C& c) -> int& { return c.train.discriminator.base_channels; }));
    f.push_back(integer("discriminator.num_layers", [](C& c) -> int& { return c.train.discriminator.num_layers; }));
    f.push_back(integer("discriminator.time_embed_dim", [](C& c) -> int& { return c.train.discriminator.time_embed_dim; }));

    f.push_back(integer("critic.in_channels", [](C& c) -> int& { return c.train.critic.in_channels; }));
    f.push_back(integer("critic.base_channels", [](C& c) -> int& { return c.train.critic.base_channels; }));
    f.push_back(integer("critic.num_layers", [](C& c) -> int& { return c.train.critic.num_layers; }));

    f.push_back(integer("ssim.window", [](C& c) -> int& { return c.train.ssim.window; }));
    f.push_back(integer("ssim.scales", [](C& c) -> int& { return c.train.ssim.scales; }));
    f.push_back(real("ssim.sigma", [](C& c) -> double& { return c.train.ssim.sigma; }));
    f.push_back(integer("nce.dim", [](C& c) -> int& { return c.train.nce_dim; }));
    f.push_back(integer("nce.patches", [](C& c) -> int& { return c.train.nce_patches; }));
    f.push_back(real("nce.temperature", [](C& c) -> double& { return c.train.nce_temperature; }));
    f.push_back(boolean("identity_at_step_time", [](C& c) -> bool& { return c.train.identity_at_step_time; }));

    f.push_back(integer("image_size", [](C& c) -> int& { return c.train.image_size; }));
    f.push_back(integer("log_every", [](C& c) -> int& { return c.train.log_every; }));
    f.push_back(integer("sample_every", [](C& c) -> int& { return c.train.sample_every; }));
    f.push_back(integer("checkpoint_every", [](C& c) -> int& { return c.train.checkpoint_every; }));

    const auto deg = [&f](Field field) {
      field.degrade = true;
      f.push_back(std::move(field));
    };
    deg(boolean("degrade.illumination", [](C& c) -> bool& { return c.degrade.illumination; }));
    deg(range("degrade.field_amplitude", [](C& c) -> degrade::Range& { return c.degrade.field_amplitude; }));
    deg(range("degrade.field_offset", [](C& c) -> degrade::Range& { return c.degrade.field_offset; }));
    deg(range("degrade.gamma", [](C& c) -> degrade::Range& { return c.degrade.gamma; }));
    deg(range("degrade.brightness", [](C& c) -> degrade::Range& { return c.degrade.brightness; }));
    deg(boolean("degrade.blur", [](C& c) -> bool& { return c.degrade.blur; }));
    deg(range("degrade.blur_sigma", [](C& c) -> degrade::Range& { return c.degrade.blur_sigma; }));
    deg(boolean("degrade.spots", [](C& c) -> bool& { return c.degrade.spots; }));
    deg({"degrade.spot_count",
         [](C& c) { return std::to_string(c.degrade.spot_count.lo) + "," + std::to_string(c.degrade.spot_count.hi); },
         [](C& c, const std::string& v) {
           const auto parts = text::split(v, ',');
           if (parts.size() != 2) throw std::invalid_argument("degrade.spot_count: expected 'lo,hi'");
           c.degrade.spot_count.lo = static_cast<int>(text::parse_int(parts[0], "degrade.spot_count"));
           c.degrade.spot_count.hi = static_cast<int>(text::parse_int(parts[1], "degrade.spot_count"));
         }});
    deg(range("degrade.spot_radius", [](C& c) -> degrade::Range& { return c.degrade.spot_radius; }));
    deg(range("degrade.spot_opacity", [](C& c) -> degrade::Range& { return c.degrade.spot_opacity; }));
    deg(range("degrade.spot_edge", [](C& c) -> degrade::Range& { return c.degrade.spot_edge; }));
    deg(real("degrade.bright_spot_probability", [](C& c) -> double& { return c.degrade.bright_spot_probability; }));
    deg(real("degrade.mask_threshold", [](C& c) -> double& { return c.degrade.mask_threshold; }));
    return f;
  }();
  return table;
}

const Field* find(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

KeyValues collect(const FullConfig& config, bool want_degrade) {
  FullConfig copy = config;
  KeyValues out;
  for (const Field& f : fields()) {
    if (f.degrade == want_degrade) out[f.key] = f.get(copy);
  }
  return out;
}

}  // namespace

KeyValues train_key_values(const train::TrainConfig& config) {
  FullConfig c;
  c.train = config;
  return collect(c, false);
}

KeyValues degrade_key_values(const degrade::DegradationSpec& spec) {
  FullConfig c;
  c.degrade = spec;
  return collect(c, true);
}

KeyValues to_key_values(const FullConfig& config) {
  KeyValues out = collect(config, false);
  out.merge(collect(config, true));
  return out;
}

void set_value(FullConfig& config, const std::string& key, const std::string& value) {
  const Field* f = find(key);
  if (!f) throw UsageError("unknown config key '" + key + "'");
  try {
    f->set(config, value);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid config value: ") + e.what());
  }
}

FullConfig from_key_values(const KeyValues& values) {
  FullConfig c;
  for (const auto& [k, v] : values) set_value(c, k, v);
  c.train.sync();
  return c;
}

void apply_env_seed(FullConfig& config) {
  const char* env = std::getenv("CUNSB_SEED");
  if (!env || !*env) return;
  try {
    config.train.seed = text::parse_u64(env, "CUNSB_SEED");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

FullConfig load_file(const std::string& path) {
  std::string content;
  try {
    content = text::read_file(path);
  } catch (const DataError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  KeyValues kv;
  try {
    kv = text::parse_key_values(content, path);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  FullConfig c = from_key_values(kv);
  apply_env_seed(c);
  return c;
}

const std::vector<std::string>& architecture_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) {
      if (f.key.rfind("generator.", 0) == 0 || f.key.rfind("discriminator.", 0) == 0 ||
          f.key.rfind("critic.", 0) == 0) {
        k.push_back(f.key);
      }
    }
    k.push_back("num_steps");
    k.push_back("nce.dim");
    return k;
  }();
  return keys;
}

}  // namespace cunsb::config
