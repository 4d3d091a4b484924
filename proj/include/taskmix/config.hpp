// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taskmix/meta_train.hpp"
#include "taskmix/task_data.hpp"

namespace taskmix {

/// Everything a train/experiment run needs, validated.
struct RunConfig {
  std::filesystem::path dataset;
  Method method = Method::maml;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int threads = 0; // 0 keeps the OpenMP default
  LoadOptions load;
  MetaConfig meta;
  std::filesystem::path output_dir;
};

/// The complete key set with default values. Nullable keys default to null.
nlohmann::json default_config_json();

/// Overlays `user` on the defaults; unknown keys and type changes are
/// rejected with ConfigError naming the dotted key.
nlohmann::json merge_config(const nlohmann::json &user);

/// Reads and merges a config file. A relative "dataset" path is resolved
/// against the file's directory.
nlohmann::json load_config_file(const std::filesystem::path &path);

/// Sets `dotted.key` from its command-line text, typed after the default.
void apply_override(nlohmann::json &config, std::string_view dotted_key, std::string_view value);

RunConfig parse_run_config(const nlohmann::json &merged);

} // namespace taskmix
