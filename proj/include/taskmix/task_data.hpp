// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tasks, datasets, the TMXF feature file + JSON manifest, class weights,
// stratified splits and batch sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taskmix/batch.hpp"
#include "taskmix/matrix.hpp"
#include "taskmix/rng.hpp"

namespace taskmix {

enum class Role { meta_train, meta_test };
enum class Split { train, validation, test };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);
std::string_view to_string(Split split);

struct Splits {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> validation;
  std::vector<std::uint32_t> test;

  const std::vector<std::uint32_t> &get(Split s) const;
  bool operator==(const Splits &) const = default;
};

struct SplitFractions {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

/// One (domain, language) subset: features, labels, splits and the
/// zero-padded inverse-frequency class weights computed from its train split.
struct Task {
  std::string id;
  Role role = Role::meta_train;
  std::size_t n_classes = 0;
  Matrix<float> features; // [n×D]
  std::vector<std::uint32_t> labels;
  Splits splits;
  std::vector<float> class_weights; // [C_max]
  std::string language;
  std::string domain;

  std::size_t size() const noexcept { return labels.size(); }
  bool operator==(const Task &) const = default;
};

struct Dataset {
  std::vector<Task> tasks;
  std::size_t dim = 0;
  std::size_t max_classes = 0;

  std::vector<std::size_t> indices(Role role) const;
  std::size_t num_meta_train() const { return indices(Role::meta_train).size(); }
  bool operator==(const Dataset &) const = default;
};

/// w_c = n / (C_t·n_c) for c < C_t, 0 for the padding up to C_max.
/// Throws DataError when a class in [0, C_t) never occurs.
std::vector<double> compute_class_weights(std::span<const std::uint32_t> labels,
                                          std::size_t n_classes, std::size_t max_classes);

/// Stratified train/validation/test split, deterministic per stream state.
Splits auto_split(std::span<const std::uint32_t> labels, std::size_t n_classes,
                  const SplitFractions &fractions, RngStream &rng);

/// Checks every Task invariant and fills class_weights for the given C_max.
void finalize_task(Task &task, std::size_t max_classes);

/// Fills max_classes and every task's class weights, validating the set.
void finalize_dataset(Dataset &dataset);

/// Raw content of one TMXF file.
struct FeatureFile {
  std::size_t n_classes = 0;
  Matrix<float> features;
  std::vector<std::uint32_t> labels;
};

void write_feature_file(const std::filesystem::path &path, const Matrix<float> &features,
                        std::span<const std::uint32_t> labels, std::size_t n_classes);
FeatureFile read_feature_file(const std::filesystem::path &path);

struct LoadOptions {
  SplitFractions fractions;
  std::uint64_t split_seed = 0; // used only for tasks without explicit splits
};

Dataset load_dataset(const std::filesystem::path &manifest_path, const LoadOptions &options = {});

/// Writes `<dir>/manifest.json` plus one `<id>.tmxf` per task, splits inline.
void write_dataset(const Dataset &dataset, const std::filesystem::path &dir);

/// B rows drawn uniformly with replacement from the split, one-hot labels of
/// width C_max and the task's class weights.
Batch<float> sample_batch(const Task &task, Split split, std::size_t batch_size, RngStream &rng);

/// The whole split in stored order.
Batch<float> split_batch(const Task &task, Split split);

/// CSV `label,f0,...,f{D-1}` to `<out_dir>/<id>.tmxf`, registering the task in
/// `<out_dir>/manifest.json` (created if absent, dim must match otherwise).
void convert_csv(const std::filesystem::path &csv_path, const std::string &id, Role role,
                 const std::filesystem::path &out_dir);

} // namespace taskmix
