// SPDX-License-Identifier: Apache-2.0
#include "taskmix/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <exception>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "taskmix/config.hpp"
#include "taskmix/error.hpp"
#include "taskmix/eval.hpp"
#include "taskmix/meta_train.hpp"
#include "taskmix/synth.hpp"
#include "taskmix/task_data.hpp"

namespace taskmix::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char *kExitHelp = "Exit codes: 0 ok, 2 config error, 3 data error, 4 training divergence.";
constexpr const char *kOverrideHelp =
    "Any config key can be overridden with a flag of the same dotted name,\n"
    "e.g. --dataset data/manifest.json --meta.inner_lr 0.05 --mix.n_synthetic=0 --model.neck 64,64.";

void write_file(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_list(const std::string &text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      items.push_back(item);
  return items;
}

/// `--a.b value` / `--a.b=value` pairs left over after CLI11 parsing.
void apply_overrides(json &config, const std::vector<std::string> &extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string &token = extras[i];
    if (token.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument '" + token + "'");
    std::string key = token.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size())
        throw ConfigError("flag --" + key + " needs a value");
      value = extras[++i];
    }
    apply_override(config, key, value);
  }
}

json build_config(const std::string &config_path, const std::vector<std::string> &extras) {
  json cfg = config_path.empty() ? default_config_json() : load_config_file(config_path);
  apply_overrides(cfg, extras);
  return cfg;
}

void apply_threads(const RunConfig &rc) {
  if (rc.threads > 0)
    omp_set_num_threads(rc.threads);
}

Dataset load_for(const RunConfig &rc) {
  if (rc.dataset.empty())
    throw ConfigError("dataset is not set (config key 'dataset')");
  if (!fs::exists(rc.dataset))
    throw DataError("dataset manifest " + rc.dataset.string() + " does not exist");
  return load_dataset(rc.dataset, rc.load);
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

std::vector<Method> parse_methods(const std::string &text) {
  std::vector<Method> out;
  if (text.empty())
    return {std::begin(kAllMethods), std::end(kAllMethods)};
  for (const auto &name : split_list(text))
    if (const Method m = parse_method(name); std::find(out.begin(), out.end(), m) == out.end())
      out.push_back(m);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string &text) {
  std::vector<std::uint64_t> seeds;
  for (const auto &s : split_list(text)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    if (used != s.size() || s.front() == '-')
      throw ConfigError("seeds: '" + s + "' is not a non-negative integer");
    seeds.push_back(v);
  }
  if (seeds.empty())
    throw ConfigError("seeds: empty list");
  return seeds;
}

json cell_json(const std::string &method, const MetricsReport &r) {
  json j = to_json(r);
  j["method"] = method;
  return j;
}

int cmd_synth(const std::string &name, double scale, const std::string &out_dir, std::uint64_t seed,
              std::size_t dim, std::ostream &out) {
  SynthSpec spec = preset(name, scale);
  spec.seed = seed;
  if (dim > 0)
    spec.dim = dim;
  const Dataset ds = gen_dataset(spec);
  write_dataset(ds, out_dir);
  out << "wrote " << ds.tasks.size() << " tasks (" << ds.num_meta_train() << " meta_train) to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string &config_path, const std::string &method, const std::string &out_dir,
              const std::vector<std::string> &extras, std::ostream &out) {
  json cfg = build_config(config_path, extras);
  if (!method.empty())
    cfg["method"] = method;
  if (!out_dir.empty())
    cfg["output"]["dir"] = out_dir;
  const RunConfig rc = parse_run_config(cfg);
  if (rc.output_dir.empty())
    throw ConfigError("output directory is not set (--out or output.dir)");
  apply_threads(rc);
  const Dataset ds = load_for(rc);
  fs::create_directories(rc.output_dir);
  write_file(rc.output_dir / "config.json", cfg.dump(2) + "\n");

  MetaConfig meta = rc.meta;
  meta.seed = rc.seeds.front();
  meta.augmentation = augmentation_for(rc.method);
  std::ofstream history(rc.output_dir / "history.jsonl", std::ios::binary);
  TrainedModel model;
  if (rc.method == Method::vanilla) {
    RngStream init(meta.seed, "init", 0);
    model.params = init_params<float>(geometry_for(ds, meta), init);
  } else if (rc.method == Method::mtl) {
    model = mtl_train(ds, meta, &history);
  } else {
    model = meta_train(ds, meta, &history);
  }
  save_params(rc.output_dir / "params.tmxp", model.params);
  const json summary{{"method", to_string(rc.method)},
                     {"seed", meta.seed},
                     {"augmentation", to_string(meta.augmentation)},
                     {"stopped_at", model.stopped_at},
                     {"best_step", model.best_step},
                     {"best_validation_loss", model.best_value}};
  write_file(rc.output_dir / "train.json", summary.dump(2) + "\n");
  out << to_string(rc.method) << ": stopped at step " << model.stopped_at << ", best step " << model.best_step
      << " (validation loss " << model.best_value << ")\n";
  return kExitOk;
}

std::optional<MetricsReport> cached_cell(const fs::path &path, const std::string &method, std::uint64_t seed) {
  if (!fs::exists(path))
    return std::nullopt;
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || j.value("method", "") != method || !j.contains("seed") || j["seed"] != seed)
    return std::nullopt;
  try {
    return report_from_json(j);
  } catch (const DataError &) {
    return std::nullopt;
  }
}

int cmd_experiment(const std::string &config_path, const std::string &methods_arg, const std::string &seeds_arg,
                   const std::string &out_dir, const std::vector<std::string> &extras, std::ostream &out) {
  json cfg = build_config(config_path, extras);
  if (!seeds_arg.empty())
    cfg["seeds"] = parse_seeds(seeds_arg);
  if (!out_dir.empty())
    cfg["output"]["dir"] = out_dir;
  const RunConfig rc = parse_run_config(cfg);
  if (rc.output_dir.empty())
    throw ConfigError("output directory is not set (--out or output.dir)");
  const std::vector<Method> methods = parse_methods(methods_arg);
  apply_threads(rc);
  const Dataset ds = load_for(rc);

  const fs::path dir = rc.output_dir;
  const fs::path cells = dir / "cells";
  fs::create_directories(cells);
  // "method" and "output" do not influence cell results
  json effective = cfg;
  effective.erase("method");
  effective.erase("output");
  const std::string config_text = effective.dump(2) + "\n";
  if (fs::exists(dir / "config.json") && read_file(dir / "config.json") != config_text)
    throw ConfigError(dir.string() + " holds results produced with a different config");
  write_file(dir / "config.json", config_text);
  write_file(dir / "run_meta.json", json{{"started", timestamp()}}.dump(2) + "\n");

  struct Cell {
    std::string method;
    std::uint64_t seed;
    fs::path file;
    std::optional<MetricsReport> report;
    std::string log;
  };
  std::vector<Cell> grid;
  for (Method method : methods)
    for (std::uint64_t seed : rc.seeds) {
      const std::string name(to_string(method));
      const fs::path file = cells / cell_file_name(name, seed);
      grid.push_back({name, seed, file, cached_cell(file, name, seed), ""});
    }

  // one pending cell per worker; results merge in grid order
  std::vector<std::size_t> pending;
  for (std::size_t c = 0; c < grid.size(); ++c)
    if (!grid[c].report)
      pending.push_back(c);
  std::vector<std::exception_ptr> failures(pending.size());
  const long n_pending = static_cast<long>(pending.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long k = 0; k < n_pending; ++k) {
    Cell &cell = grid[pending[k]];
    try {
      std::ofstream history(cells / (cell.file.stem().string() + ".history.jsonl"), std::ios::binary);
      try {
        cell.report = run_cell(ds, parse_method(cell.method), rc.meta, cell.seed, &history);
      } catch (const TrainingError &e) {
        throw TrainingError(e.step(), cell.method + " seed " + std::to_string(cell.seed) + ": " + e.what());
      }
      write_file(cell.file, cell_json(cell.method, *cell.report).dump(2) + "\n");
    } catch (...) {
      failures[k] = std::current_exception();
    }
  }
  for (const auto &f : failures)
    if (f)
      std::rethrow_exception(f);

  std::vector<TrialSummary> summaries;
  for (std::size_t c = 0; c < grid.size();) {
    std::vector<MetricsReport> reports;
    const std::string &method = grid[c].method;
    for (; c < grid.size() && grid[c].method == method; ++c) {
      out << method << " seed " << grid[c].seed << ": average macro F1 " << grid[c].report->average_macro_f1
          << (std::find(pending.begin(), pending.end(), c) == pending.end() ? " (cached)" : "") << "\n";
      reports.push_back(*grid[c].report);
    }
    summaries.push_back(summarize(method, std::move(reports)));
  }
  const ReportDocument doc = render_report(summaries);
  write_file(dir / "summary.json", doc.json.dump(2) + "\n");
  write_file(dir / "report.txt", doc.table);
  out << doc.table;
  return kExitOk;
}

int cmd_report(const std::string &in_dir, std::ostream &out) {
  const fs::path dir = in_dir;
  if (!fs::is_directory(dir))
    throw DataError(in_dir + " is not a directory");
  std::vector<fs::path> files;
  if (fs::is_directory(dir / "cells"))
    for (const auto &e : fs::directory_iterator(dir / "cells"))
      if (e.path().extension() == ".json")
        files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<TrialSummary> summaries;
  if (!files.empty()) {
    std::map<std::string, std::vector<MetricsReport>> by_method;
    for (const auto &f : files) {
      const json j = json::parse(read_file(f), nullptr, false);
      if (j.is_discarded() || !j.contains("method"))
        throw DataError(f.string() + ": not a cell result");
      by_method[j["method"].get<std::string>()].push_back(report_from_json(j));
    }
    for (auto &[method, reports] : by_method) {
      std::sort(reports.begin(), reports.end(),
                [](const MetricsReport &a, const MetricsReport &b) { return a.seed < b.seed; });
      summaries.push_back(summarize(method, std::move(reports)));
    }
  } else if (fs::exists(dir / "summary.json")) {
    const json j = json::parse(read_file(dir / "summary.json"), nullptr, false);
    if (j.is_discarded() || !j.is_array())
      throw DataError((dir / "summary.json").string() + ": malformed");
    for (const auto &s : j)
      summaries.push_back(summary_from_json(s));
  }
  if (summaries.empty())
    throw DataError("no experiment results found in " + in_dir);
  const ReportDocument doc = render_report(std::move(summaries));
  write_file(dir / "report.json", doc.json.dump(2) + "\n");
  out << doc.table;
  return kExitOk;
}

} // namespace

std::string cell_file_name(const std::string &method, std::uint64_t seed) {
  return method + "__seed" + std::to_string(seed) + ".json";
}

void save_params(const fs::path &path, const ModelParams<float> &params) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  auto put = [&out](std::uint32_t v) {
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    out.write(b, 4);
  };
  const Geometry &g = params.geometry();
  out.write("TMXP", 4);
  put(1);
  put(static_cast<std::uint32_t>(g.input_dim));
  put(static_cast<std::uint32_t>(g.neck.size()));
  for (std::size_t w : g.neck)
    put(static_cast<std::uint32_t>(w));
  put(static_cast<std::uint32_t>(g.classes));
  for (float v : params.values()) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put(u);
  }
}

ModelParams<float> load_params(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  auto get = [&]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char *>(b), 4))
      throw DataError(path.string() + ": truncated file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
  };
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "TMXP", 4) != 0)
    throw DataError(path.string() + ": bad magic");
  if (get() != 1)
    throw DataError(path.string() + ": unsupported version");
  Geometry g;
  g.input_dim = get();
  g.neck.resize(get());
  for (auto &w : g.neck)
    w = get();
  g.classes = get();
  g.validate();
  ModelParams<float> p(g);
  for (float &v : p.values()) {
    const std::uint32_t u = get();
    std::memcpy(&v, &u, 4);
  }
  return p;
}

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Meta-learning engine: MAML with MetaMix and TaskMix over precomputed features", "taskmix"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.footer(kExitHelp);

  std::string preset_name, synth_out;
  double scale = 0.05;
  std::uint64_t synth_seed = 0;
  std::size_t dim = 0;
  auto *synth = app.add_subcommand("synth", "Generate a synthetic long/wide dataset (manifest + TMXF files)");
  synth->add_option("--preset", preset_name, "long | wide")->required()->check(CLI::IsMember({"long", "wide"}));
  synth->add_option("--scale", scale, "Fraction of the regime's examples per task, in (0, 1]")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--dim", dim, "Feature dimension (default: preset's)");

  std::string csv, task_id, role, convert_out;
  auto *convert = app.add_subcommand("convert", "Convert a label,f0,...,f{D-1} CSV into a TMXF task file");
  convert->add_option("--csv", csv, "Input CSV")->required();
  convert->add_option("--id", task_id, "Task id")->required();
  convert->add_option("--role", role, "meta_train | meta_test")->required()->check(CLI::IsMember({"meta_train", "meta_test"}));
  convert->add_option("--out", convert_out, "Dataset directory holding manifest.json")->required();

  std::string train_config, train_method, train_out;
  auto *train = app.add_subcommand("train", "Run the meta-training (or MTL) stage and save parameters");
  train->add_option("--config", train_config, "JSON config file");
  train->add_option("--method", train_method, "mtl | vanilla | maml | maml+metamix | maml+taskmix | maml+metamix+taskmix");
  train->add_option("--out", train_out, "Output directory");
  train->allow_extras();
  train->footer(kOverrideHelp);

  std::string exp_config, exp_methods, exp_seeds, exp_out;
  auto *experiment = app.add_subcommand("experiment", "Run methods x seeds and write the mean ± std report (resumable)");
  experiment->add_option("--config", exp_config, "JSON config file");
  experiment->add_option("--methods", exp_methods, "Comma-separated methods (default: all six)");
  experiment->add_option("--seeds", exp_seeds, "Comma-separated seeds (default: config seeds)");
  experiment->add_option("--out", exp_out, "Output directory");
  experiment->allow_extras();
  experiment->footer(kOverrideHelp);

  std::string report_in;
  auto *report = app.add_subcommand("report", "Print the mean ± std table of an experiment directory");
  report->add_option("--in", report_in, "Experiment directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth)
      return cmd_synth(preset_name, scale, synth_out, synth_seed, dim, out);
    if (*convert) {
      convert_csv(csv, task_id, parse_role(role), convert_out);
      out << "converted " << csv << " into " << convert_out << "\n";
      return kExitOk;
    }
    if (*train)
      return cmd_train(train_config, train_method, train_out, train->remaining(), out);
    if (*experiment)
      return cmd_experiment(exp_config, exp_methods, exp_seeds, exp_out, experiment->remaining(), out);
    if (*report)
      return cmd_report(report_in, out);
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError &e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainingError &e) {
    err << "training error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

} // namespace taskmix::cli
