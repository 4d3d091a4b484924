// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "taskmix/nn.hpp"

namespace taskmix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDiverged = 4;

/// Entry point of the `taskmix` binary; also driven in-process by tests.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

/// Cell result file name inside `<experiment>/cells/`.
std::string cell_file_name(const std::string &method, std::uint64_t seed);

void save_params(const std::filesystem::path &path, const ModelParams<float> &params);
ModelParams<float> load_params(const std::filesystem::path &path);

} // namespace taskmix::cli
