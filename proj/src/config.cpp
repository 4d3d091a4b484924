// SPDX-License-Identifier: Apache-2.0
#include "taskmix/config.hpp"

#include <cmath>
#include <fstream>

#include "taskmix/error.hpp"

namespace taskmix {

using json = nlohmann::json;
namespace fs = std::filesystem;

json default_config_json() {
  return json{
      {"dataset", ""},
      {"method", "maml"},
      {"seeds", {0, 1, 2}},
      {"threads", 0},
      {"split", {{"train", 0.7}, {"validation", 0.1}, {"test", 0.2}, {"seed", 0}}},
      {"model", {{"neck", {768, 768, 768}}}},
      {"meta",
       {{"inner_lr", 0.1},
        {"outer_lr", 1e-3},
        {"lr_min", 0.0},
        {"inner_steps", 5},
        {"batch_size", 1024},
        {"grad_mode", "first_order"},
        {"max_step", 5000},
        {"eval_interval", 50},
        {"patience", 10}}},
      {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
      {"mix", {{"eta", 0.5}, {"n_synthetic", nullptr}, {"fixed_lambda", nullptr}}},
      {"finetune", {{"lr", 1e-3}, {"max_steps", 500}, {"batch_size", 1024}, {"eval_interval", 10}, {"patience", 10}}},
      {"output", {{"dir", ""}}},
  };
}

namespace {

bool compatible(const json &def, const json &val) {
  if (def.is_null())
    return val.is_null() || val.is_number();
  if (def.is_number())
    return val.is_number();
  return def.type() == val.type();
}

void overlay(json &target, const json &user, const std::string &prefix) {
  if (!user.is_object())
    throw ConfigError((prefix.empty() ? std::string("config") : prefix) + " must be an object");
  for (const auto &[key, value] : user.items()) {
    const std::string dotted = prefix.empty() ? key : prefix + "." + key;
    if (!target.contains(key))
      throw ConfigError("unknown config key '" + dotted + "'");
    json &slot = target[key];
    if (slot.is_object()) {
      overlay(slot, value, dotted);
      continue;
    }
    if (!compatible(slot, value))
      throw ConfigError("config key '" + dotted + "' has the wrong type");
    slot = value;
  }
}

json *lookup(json &config, std::string_view dotted, std::string &name) {
  json *node = &config;
  std::size_t start = 0;
  name.assign(dotted);
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (!node->is_object() || !node->contains(part))
      throw ConfigError("unknown config key '" + name + "'");
    node = &(*node)[part];
    if (dot == std::string_view::npos)
      return node;
    start = dot + 1;
  }
}

double number_at(const json &cfg, const char *section, const char *key) {
  return cfg.at(section).at(key).get<double>();
}

/// Non-negative integer at section.key; negative or fractional values are
/// rejected with the key's name.
std::size_t count_at(const json &cfg, const char *section, const char *key) {
  const json &v = cfg.at(section).at(key);
  const double d = v.get<double>();
  if (d < 0)
    throw ConfigError(std::string(section) + "." + key + " must be >= 0");
  if (d != std::floor(d))
    throw ConfigError(std::string(section) + "." + key + " must be an integer");
  return static_cast<std::size_t>(d);
}

} // namespace

json merge_config(const json &user) {
  json merged = default_config_json();
  overlay(merged, user, "");
  return merged;
}

json load_config_file(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file " + path.string());
  json user;
  try {
    user = json::parse(in);
  } catch (const json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  json merged = merge_config(user);
  const std::string dataset = merged["dataset"].get<std::string>();
  if (!dataset.empty() && fs::path(dataset).is_relative())
    merged["dataset"] = (path.parent_path() / dataset).lexically_normal().string();
  return merged;
}

void apply_override(json &config, std::string_view dotted_key, std::string_view text) {
  std::string name;
  json *slot = lookup(config, dotted_key, name);
  const std::string value(text);
  if (slot->is_object())
    throw ConfigError("config key '" + name + "' is a section, not a value");
  if (slot->is_string()) {
    *slot = value;
    return;
  }
  json parsed;
  if (slot->is_array() && !value.empty() && value.front() != '[') {
    parsed = json::parse("[" + value + "]", nullptr, false);
  } else {
    parsed = json::parse(value, nullptr, false);
  }
  if (parsed.is_discarded() || !compatible(*slot, parsed))
    throw ConfigError("config key '" + name + "': cannot use value '" + value + "'");
  *slot = parsed;
}

RunConfig parse_run_config(const json &cfg) {
  RunConfig rc;
  try {
    rc.dataset = cfg.at("dataset").get<std::string>();
    rc.method = parse_method(cfg.at("method").get<std::string>());
    rc.seeds.clear();
    for (const json &s : cfg.at("seeds")) {
      if (!s.is_number_integer() || s.get<long long>() < 0)
        throw ConfigError("seeds must be non-negative integers");
      rc.seeds.push_back(s.get<std::uint64_t>());
    }
    if (rc.seeds.empty())
      throw ConfigError("seeds must list at least one seed");
    rc.threads = cfg.at("threads").get<int>();
    if (rc.threads < 0)
      throw ConfigError("threads must be >= 0");

    rc.load.fractions = {number_at(cfg, "split", "train"), number_at(cfg, "split", "validation"),
                         number_at(cfg, "split", "test")};
    rc.load.split_seed = count_at(cfg, "split", "seed");

    MetaConfig &m = rc.meta;
    m.neck.clear();
    for (const json &w : cfg.at("model").at("neck")) {
      if (!w.is_number_integer() || w.get<long long>() < 1)
        throw ConfigError("model.neck widths must be integers >= 1");
      m.neck.push_back(w.get<std::size_t>());
    }
    m.inner_lr = number_at(cfg, "meta", "inner_lr");
    if (!(m.inner_lr > 0))
      throw ConfigError("meta.inner_lr must be > 0");
    m.schedule.lr_max = number_at(cfg, "meta", "outer_lr");
    if (!(m.schedule.lr_max > 0))
      throw ConfigError("meta.outer_lr must be > 0");
    m.schedule.lr_min = number_at(cfg, "meta", "lr_min");
    if (!(m.schedule.lr_min >= 0 && m.schedule.lr_min <= m.schedule.lr_max))
      throw ConfigError("meta.lr_min must lie in [0, meta.outer_lr]");
    m.inner_steps = count_at(cfg, "meta", "inner_steps");
    m.batch_size = count_at(cfg, "meta", "batch_size");
    if (m.batch_size == 0)
      throw ConfigError("meta.batch_size must be >= 1");
    m.grad_mode = parse_grad_mode(cfg.at("meta").at("grad_mode").get<std::string>());
    m.schedule.max_step = count_at(cfg, "meta", "max_step");
    m.eval_interval = count_at(cfg, "meta", "eval_interval");
    if (m.eval_interval == 0)
      throw ConfigError("meta.eval_interval must be >= 1");
    m.patience = count_at(cfg, "meta", "patience");

    m.adam.beta1 = number_at(cfg, "adam", "beta1");
    m.adam.beta2 = number_at(cfg, "adam", "beta2");
    m.adam.eps = number_at(cfg, "adam", "eps");
    if (!(m.adam.beta1 >= 0 && m.adam.beta1 < 1) || !(m.adam.beta2 >= 0 && m.adam.beta2 < 1))
      throw ConfigError("adam.beta1 and adam.beta2 must lie in [0, 1)");
    if (!(m.adam.eps > 0))
      throw ConfigError("adam.eps must be > 0");

    m.mix.eta = number_at(cfg, "mix", "eta");
    if (!(m.mix.eta > 0))
      throw ConfigError("mix.eta must be > 0");
    if (!cfg.at("mix").at("n_synthetic").is_null())
      m.mix.n_synthetic = count_at(cfg, "mix", "n_synthetic");
    if (!cfg.at("mix").at("fixed_lambda").is_null()) {
      m.mix.fixed_lambda = number_at(cfg, "mix", "fixed_lambda");
      if (!(*m.mix.fixed_lambda >= 0 && *m.mix.fixed_lambda <= 1))
        throw ConfigError("mix.fixed_lambda must lie in [0, 1]");
    }

    m.finetune.lr = number_at(cfg, "finetune", "lr");
    if (!(m.finetune.lr > 0))
      throw ConfigError("finetune.lr must be > 0");
    m.finetune.max_steps = count_at(cfg, "finetune", "max_steps");
    m.finetune.batch_size = count_at(cfg, "finetune", "batch_size");
    if (m.finetune.batch_size == 0)
      throw ConfigError("finetune.batch_size must be >= 1");
    m.finetune.eval_interval = count_at(cfg, "finetune", "eval_interval");
    if (m.finetune.eval_interval == 0)
      throw ConfigError("finetune.eval_interval must be >= 1");
    m.finetune.patience = count_at(cfg, "finetune", "patience");

    rc.output_dir = cfg.at("output").at("dir").get<std::string>();
  } catch (const json::exception &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (std::abs(rc.load.fractions.train + rc.load.fractions.validation + rc.load.fractions.test - 1.0) > 1e-9 ||
      rc.load.fractions.train <= 0 || rc.load.fractions.validation < 0 || rc.load.fractions.test < 0)
    throw ConfigError("split fractions must be non-negative, train > 0, and sum to 1");
  rc.meta.validate();
  return rc;
}

} // namespace taskmix
