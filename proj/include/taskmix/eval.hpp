// SPDX-License-Identifier: Apache-2.0
#pragma once

// The multi-seed protocol: per seed, (meta-)train, fine-tune every meta-test
// task, score its test split; then aggregate mean ± sample std per method.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskmix/meta_train.hpp"
#include "taskmix/task_data.hpp"

namespace taskmix {

inline constexpr std::uint64_t kDefaultSeeds[] = {0, 1, 2};

struct MetricsReport {
  std::uint64_t seed = 0;
  std::map<std::string, double> per_task; // meta_test task id → Macro F1
  double average_macro_f1 = 0.0;

  bool operator==(const MetricsReport &) const = default;
};

struct TrialSummary {
  std::string method;
  double mean = 0.0;
  double std = 0.0; // sample (n−1) convention, 0 for a single seed
  std::vector<MetricsReport> reports;

  bool operator==(const TrialSummary &) const = default;
};

/// Unweighted mean of the per-task scores.
double average_macro_f1(const std::map<std::string, double> &per_task);

/// One (method, seed) cell of the experiment matrix.
MetricsReport run_cell(const Dataset &dataset, Method method, const MetaConfig &config, std::uint64_t seed,
                       std::ostream *history = nullptr);

TrialSummary summarize(std::string method, std::vector<MetricsReport> reports);

TrialSummary run_trials(const Dataset &dataset, Method method, const MetaConfig &config,
                        std::span<const std::uint64_t> seeds);

nlohmann::json to_json(const MetricsReport &report);
MetricsReport report_from_json(const nlohmann::json &j);
nlohmann::json to_json(const TrialSummary &summary);
TrialSummary summary_from_json(const nlohmann::json &j);

/// "mean ± std" at three decimals.
std::string format_mean_std(double mean, double std);

struct ReportDocument {
  nlohmann::json json; // array of summaries, full precision
  std::string table;   // mean ± std rows, best first
};

ReportDocument render_report(std::vector<TrialSummary> summaries);

} // namespace taskmix
