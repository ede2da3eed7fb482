#pragma once

// Flat key=value configuration covering training, bridge, network and
// degradation settings. Unknown keys are rejected.

#include <map>
#include <string>
#include <vector>

#include "cunsb/degrade.hpp"
#include "cunsb/trainer.hpp"

namespace cunsb::config {

struct FullConfig {
  train::TrainConfig train;
  degrade::DegradationSpec degrade;
};

using KeyValues = std::map<std::string, std::string>;

/// Every training key with its current value. Degradation keys are
/// prefixed "degrade.".
KeyValues train_key_values(const train::TrainConfig& config);
KeyValues degrade_key_values(const degrade::DegradationSpec& spec);
KeyValues to_key_values(const FullConfig& config);

/// Sets one key. Throws UsageError for unknown keys or malformed values.
void set_value(FullConfig& config, const std::string& key, const std::string& value);

FullConfig from_key_values(const KeyValues& values);
/// Parses the file and, when CUNSB_SEED is set, overrides the seed.
FullConfig load_file(const std::string& path);
/// Applies CUNSB_SEED if present. Throws UsageError when it is malformed.
void apply_env_seed(FullConfig& config);

/// Keys that fix the network layout; a checkpoint and a config must agree on these.
const std::vector<std::string>& architecture_keys();

}  // namespace cunsb::config
