// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace taskmix {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seed for the substream owned by (root, purpose, id). Purposes in use:
/// "init", "split", "batch", "synth", "beta", "finetune".
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t id = 0) noexcept;

/// A single consumer's random stream. Never shared between consumers, so
/// turning one feature on or off does not shift the draws seen by another.
class RngStream {
public:
  RngStream() : engine_(0) {}
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}
  RngStream(std::uint64_t root, std::string_view purpose, std::uint64_t id = 0)
      : engine_(derive_seed(root, purpose, id)) {}

  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  /// Uniform integer in [0, n). Requires n >= 1.
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  std::mt19937_64 &engine() noexcept { return engine_; }

private:
  std::mt19937_64 engine_;
};

} // namespace taskmix
