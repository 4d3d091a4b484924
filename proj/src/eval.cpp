// SPDX-License-Identifier: Apache-2.0
#include "taskmix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>

#include "taskmix/error.hpp"
#include "taskmix/metrics.hpp"

namespace taskmix {

using json = nlohmann::json;

double average_macro_f1(const std::map<std::string, double> &per_task) {
  if (per_task.empty())
    throw UsageError("average over an empty task set");
  double sum = 0.0;
  for (const auto &[id, score] : per_task)
    sum += score;
  return sum / static_cast<double>(per_task.size());
}

MetricsReport run_cell(const Dataset &dataset, Method method, const MetaConfig &base, std::uint64_t seed,
                       std::ostream *history) {
  const auto test_tasks = dataset.indices(Role::meta_test);
  if (test_tasks.empty())
    throw DataError("dataset has no meta_test task to evaluate");
  MetaConfig config = base;
  config.seed = seed;
  config.augmentation = augmentation_for(method);
  config.validate();

  ModelParams<float> theta;
  switch (method) {
  case Method::vanilla: {
    RngStream init(seed, "init", 0);
    theta = init_params<float>(geometry_for(dataset, config), init);
    break;
  }
  case Method::mtl:
    theta = mtl_train(dataset, config, history).params;
    break;
  default:
    theta = meta_train(dataset, config, history).params;
    break;
  }

  std::vector<double> scores(test_tasks.size());
  std::vector<std::exception_ptr> errors(test_tasks.size());
  const long long count = static_cast<long long>(test_tasks.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long long k = 0; k < count; ++k) {
    try {
      const std::size_t index = test_tasks[static_cast<std::size_t>(k)];
      const Task &task = dataset.tasks[index];
      scores[static_cast<std::size_t>(k)] = evaluate_model(finetune(theta, task, config, index).params, task);
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);

  MetricsReport report;
  report.seed = seed;
  for (std::size_t k = 0; k < test_tasks.size(); ++k)
    report.per_task[dataset.tasks[test_tasks[k]].id] = scores[k];
  report.average_macro_f1 = average_macro_f1(report.per_task);
  return report;
}

TrialSummary summarize(std::string method, std::vector<MetricsReport> reports) {
  if (reports.empty())
    throw UsageError("summarize: no seed reports");
  TrialSummary s;
  s.method = std::move(method);
  double sum = 0.0;
  for (const auto &r : reports)
    sum += r.average_macro_f1;
  const double n = static_cast<double>(reports.size());
  s.mean = sum / n;
  if (reports.size() > 1) {
    double sq = 0.0;
    for (const auto &r : reports)
      sq += (r.average_macro_f1 - s.mean) * (r.average_macro_f1 - s.mean);
    s.std = std::sqrt(sq / (n - 1.0));
  }
  s.reports = std::move(reports);
  return s;
}

TrialSummary run_trials(const Dataset &dataset, Method method, const MetaConfig &config,
                        std::span<const std::uint64_t> seeds) {
  if (seeds.empty())
    throw UsageError("run_trials: at least one seed is required");
  std::vector<MetricsReport> reports;
  for (std::uint64_t seed : seeds) {
    try {
      reports.push_back(run_cell(dataset, method, config, seed));
    } catch (const TrainingError &e) {
      throw TrainingError(e.step(), std::string(to_string(method)) + " seed " + std::to_string(seed) + ": " + e.what());
    }
  }
  return summarize(std::string(to_string(method)), std::move(reports));
}

json to_json(const MetricsReport &r) {
  json per_task = json::object();
  for (const auto &[id, score] : r.per_task)
    per_task[id] = score;
  return json{{"seed", r.seed}, {"average_macro_f1", r.average_macro_f1}, {"per_task", per_task}};
}

MetricsReport report_from_json(const json &j) {
  MetricsReport r;
  try {
    r.seed = j.at("seed").get<std::uint64_t>();
    r.average_macro_f1 = j.at("average_macro_f1").get<double>();
    for (const auto &[id, score] : j.at("per_task").items())
      r.per_task[id] = score.get<double>();
  } catch (const json::exception &e) {
    throw DataError(std::string("malformed seed report: ") + e.what());
  }
  return r;
}

json to_json(const TrialSummary &s) {
  json seeds = json::array();
  for (const auto &r : s.reports)
    seeds.push_back(to_json(r));
  return json{{"method", s.method}, {"mean", s.mean}, {"std", s.std}, {"seeds", seeds}};
}

TrialSummary summary_from_json(const json &j) {
  TrialSummary s;
  try {
    s.method = j.at("method").get<std::string>();
    s.mean = j.at("mean").get<double>();
    s.std = j.at("std").get<double>();
    for (const auto &r : j.at("seeds"))
      s.reports.push_back(report_from_json(r));
  } catch (const json::exception &e) {
    throw DataError(std::string("malformed trial summary: ") + e.what());
  }
  return s;
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f \xC2\xB1 %.3f", mean, std);
  return buf;
}

ReportDocument render_report(std::vector<TrialSummary> summaries) {
  if (summaries.empty())
    throw UsageError("render_report: nothing to report");
  std::stable_sort(summaries.begin(), summaries.end(),
                   [](const TrialSummary &a, const TrialSummary &b) { return a.mean > b.mean; });
  ReportDocument doc;
  doc.json = json::array();
  std::size_t width = std::string_view("Method").size();
  for (const auto &s : summaries)
    width = std::max(width, s.method.size());
  std::ostringstream table;
  auto pad = [width](const std::string &text) { return text + std::string(width - text.size() + 2, ' '); };
  table << pad("Method") << "Average Macro F1\n";
  for (const auto &s : summaries) {
    doc.json.push_back(to_json(s));
    table << pad(s.method) << format_mean_std(s.mean, s.std) << '\n';
  }
  doc.table = table.str();
  return doc;
}

} // namespace taskmix
