// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support.hpp"
#include "taskmix/cli.hpp"
#include "taskmix/config.hpp"
#include "taskmix/task_data.hpp"

using namespace taskmix;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("taskmix_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string config_error(json user) {
  try {
    parse_run_config(merge_config(user));
  } catch (const ConfigError &e) {
    return e.what();
  }
  return "";
}

/// A tiny dataset plus a config that trains it in well under a second.
fs::path fixture(const fs::path &dir) {
  write_dataset(testing::tiny_dataset(), dir / "data");
  const json cfg{{"dataset", "data/manifest.json"},
                 {"seeds", {0, 1}},
                 {"model", {{"neck", {8}}}},
                 {"meta", {{"batch_size", 16}, {"inner_steps", 2}, {"max_step", 6}, {"eval_interval", 3}}},
                 {"finetune", {{"max_steps", 10}, {"eval_interval", 5}}}};
  std::ofstream(dir / "config.json") << cfg.dump(2);
  return dir / "config.json";
}

} // namespace

TEST_CASE("config validation names the key") {
  CHECK(config_error({{"mix", {{"eta", 0}}}}) == "mix.eta must be > 0");
  CHECK(config_error({{"mix", {{"eta", -0.5}}}}) == "mix.eta must be > 0");
  CHECK(config_error({{"mix", {{"n_synthetic", -1}}}}) == "mix.n_synthetic must be >= 0");
  CHECK(config_error({{"meta", {{"inner_steps", -1}}}}) == "meta.inner_steps must be >= 0");
  CHECK(config_error({{"meta", {{"grad_mode", "second"}}}}).find("meta.grad_mode") != std::string::npos);
  CHECK(config_error({{"meta", {{"inner_lr", 0}}}}) == "meta.inner_lr must be > 0");
  CHECK(config_error({{"meta", {{"batch_size", 0}}}}) == "meta.batch_size must be >= 1");
  CHECK(config_error({{"split", {{"train", 0.5}}}}).find("split") != std::string::npos);
  CHECK(config_error({{"method", "reptile"}}).find("unknown method") != std::string::npos);
  CHECK_THROWS_WITH_AS(merge_config({{"meta", {{"inner_lrr", 1}}}}), "unknown config key 'meta.inner_lrr'", ConfigError);
  CHECK_THROWS_WITH_AS(merge_config({{"meta", {{"inner_lr", "fast"}}}}), doctest::Contains("meta.inner_lr"),
                       ConfigError);
  CHECK(config_error(json::object()).empty());
}

TEST_CASE("defaults follow the reference hyperparameters") {
  const RunConfig rc = parse_run_config(default_config_json());
  CHECK(rc.seeds.size() == 3);
  CHECK(rc.meta.inner_steps == 5);
  CHECK(rc.meta.batch_size == 1024);
  CHECK(rc.meta.schedule.max_step == 5000);
  CHECK(rc.meta.mix.eta == 0.5);
  CHECK_FALSE(rc.meta.mix.n_synthetic.has_value());
  CHECK(rc.meta.neck == std::vector<std::size_t>{768, 768, 768});
}

TEST_CASE("dotted overrides") {
  json cfg = default_config_json();
  apply_override(cfg, "meta.inner_lr", "0.05");
  apply_override(cfg, "mix.n_synthetic", "3");
  apply_override(cfg, "model.neck", "64,32");
  apply_override(cfg, "method", "maml+metamix");
  apply_override(cfg, "seeds", "[4]");
  const RunConfig rc = parse_run_config(cfg);
  CHECK(rc.meta.inner_lr == 0.05);
  CHECK(rc.meta.mix.n_synthetic == 3u);
  CHECK(rc.meta.neck == std::vector<std::size_t>{64, 32});
  CHECK(rc.method == Method::maml_metamix);
  CHECK(rc.seeds == std::vector<std::uint64_t>{4});
  CHECK_THROWS_AS(apply_override(cfg, "meta.nope", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "meta", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "meta.inner_lr", "fast"), ConfigError);
}

TEST_CASE("bundled configs parse") {
  for (const char *name : {"long.json", "wide.json", "desk-long.json", "desk-wide.json"}) {
    CAPTURE(name);
    const RunConfig rc = parse_run_config(load_config_file(fs::path(TASKMIX_CONFIG_DIR) / name));
    CHECK(rc.seeds.size() == 3);
    CHECK(rc.meta.inner_steps == 5);
    CHECK(rc.meta.mix.eta == 0.5);
  }
  const RunConfig wide = parse_run_config(load_config_file(fs::path(TASKMIX_CONFIG_DIR) / "wide.json"));
  CHECK(wide.meta.neck == std::vector<std::size_t>{768, 768, 768});
  CHECK(wide.meta.batch_size == 1024);
  CHECK(wide.meta.schedule.max_step == 5000);
}

TEST_CASE("synth command") {
  const fs::path dir = scratch("synth");
  REQUIRE(run({"synth", "--preset", "long", "--scale", "0.05", "--out", (dir / "a").string(), "--seed", "3"}).code == 0);
  REQUIRE(run({"synth", "--preset", "long", "--scale", "0.05", "--out", (dir / "b").string(), "--seed", "3"}).code == 0);
  std::size_t files = 0;
  for (const auto &e : fs::directory_iterator(dir / "a")) {
    if (e.path().extension() == ".tmxf")
      ++files;
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
  }
  CHECK(files == 11);

  const Result bad = run({"synth", "--preset", "tall", "--out", (dir / "c").string()});
  CHECK(bad.code == cli::kExitConfig);
  CHECK(bad.err.find("Usage") != std::string::npos);
  CHECK(run({"synth", "--preset", "long", "--scale", "3", "--out", (dir / "c").string()}).code == cli::kExitConfig);
  CHECK(run({"bogus"}).code == cli::kExitConfig);
  const Result help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("experiment") != std::string::npos);
}

TEST_CASE("convert command") {
  const fs::path dir = scratch("convert");
  {
    std::ofstream f(dir / "x.csv");
    f.precision(17);
    f << "label,f0,f1\n";
    for (int i = 0; i < 40; ++i)
      f << (i % 2) << "," << 0.1 * i << "," << 1.0 / (i + 1) << "\n";
  }
  CHECK(run({"convert", "--csv", (dir / "x.csv").string(), "--id", "x", "--role", "meta_train", "--out",
             (dir / "ds").string()}).code == 0);
  CHECK(run({"convert", "--csv", (dir / "x.csv").string(), "--id", "y", "--role", "meta_test", "--out",
             (dir / "ds").string()}).code == 0);
  const Dataset ds = load_dataset(dir / "ds" / "manifest.json");
  REQUIRE(ds.tasks.size() == 2);
  CHECK(ds.tasks[0].features(13, 0) == static_cast<float>(0.1 * 13));
  CHECK(ds.tasks[0].features(13, 1) == static_cast<float>(1.0 / 14));
  {
    std::ofstream f(dir / "bad.csv");
    f << "label,f0,f1\n0,1,2\n1,x,2\n";
  }
  const Result bad = run({"convert", "--csv", (dir / "bad.csv").string(), "--id", "z", "--role", "meta_test", "--out",
                          (dir / "ds").string()});
  CHECK(bad.code == cli::kExitData);
  CHECK(bad.err.find(":3:") != std::string::npos);
  CHECK(run({"convert", "--csv", (dir / "x.csv").string(), "--id", "x", "--role", "learner", "--out",
             (dir / "ds").string()}).code == cli::kExitConfig);
}

TEST_CASE("train command") {
  const fs::path dir = scratch("train");
  const fs::path cfg = fixture(dir);
  const Result r = run({"train", "--config", cfg.string(), "--method", "maml+taskmix", "--out", (dir / "run").string(),
                        "--meta.inner_lr", "0.05", "--mix.n_synthetic=2"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json summary = json::parse(slurp(dir / "run" / "train.json"));
  CHECK(summary["augmentation"] == "taskmix");
  const json used = json::parse(slurp(dir / "run" / "config.json"));
  CHECK(used["meta"]["inner_lr"] == 0.05);
  CHECK(used["mix"]["n_synthetic"] == 2);
  CHECK_FALSE(slurp(dir / "run" / "history.jsonl").empty());
  const auto params = cli::load_params(dir / "run" / "params.tmxp");
  CHECK(params.geometry().neck == std::vector<std::size_t>{8});
  cli::save_params(dir / "copy.tmxp", params);
  CHECK(slurp(dir / "copy.tmxp") == slurp(dir / "run" / "params.tmxp"));

  CHECK(run({"train", "--config", cfg.string(), "--out", (dir / "x").string(), "--dataset", (dir / "nope.json").string()})
            .code == cli::kExitData);
  CHECK(run({"train", "--out", (dir / "x").string()}).code == cli::kExitConfig);
  CHECK(run({"train", "--config", cfg.string(), "--out", (dir / "x").string(), "--mix.eta", "0"}).code ==
        cli::kExitConfig);
  CHECK(run({"train", "--config", cfg.string(), "--out", (dir / "x").string(), "--meta.bogus", "1"}).code ==
        cli::kExitConfig);
  CHECK(run({"train", "--config", cfg.string(), "--out", (dir / "x").string(), "--meta.inner_lr", "1e30"}).code ==
        cli::kExitDiverged);
}

TEST_CASE("experiment and report commands") {
  const fs::path dir = scratch("experiment");
  const fs::path cfg = fixture(dir);
  const fs::path out = dir / "exp";
  const std::vector<std::string> args{"experiment", "--config", cfg.string(), "--methods", "maml,vanilla,maml+taskmix",
                                      "--out", out.string()};
  const Result first = run(args);
  REQUIRE_MESSAGE(first.code == 0, first.err);
  const json summary = json::parse(slurp(out / "summary.json"));
  CHECK(summary.size() == 3);
  CHECK(summary[0]["seeds"].size() == 2);
  CHECK(fs::exists(out / "report.txt"));
  CHECK(fs::exists(out / "run_meta.json"));

  const fs::path cell = out / "cells" / cli::cell_file_name("maml", 1);
  const std::string kept = slurp(cell);
  fs::remove(cell);
  const Result again = run(args);
  REQUIRE(again.code == 0);
  CHECK(slurp(cell) == kept);
  std::size_t cached = 0;
  for (std::size_t pos = 0; (pos = again.out.find("(cached)", pos)) != std::string::npos; ++pos)
    ++cached;
  CHECK(cached == 5);
  CHECK(slurp(out / "summary.json") == summary.dump(2) + "\n");

  const Result changed = run({"experiment", "--config", cfg.string(), "--out", out.string(), "--meta.max_step", "7"});
  CHECK(changed.code == cli::kExitConfig);

  const Result rep = run({"report", "--in", out.string()});
  REQUIRE(rep.code == 0);
  CHECK(rep.out == slurp(out / "report.txt"));
  CHECK(json::parse(slurp(out / "report.json")) == summary);

  CHECK(run({"report", "--in", scratch("empty").string()}).code == cli::kExitData);
  CHECK(run({"report", "--in", (dir / "missing").string()}).code == cli::kExitData);
}
