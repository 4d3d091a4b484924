// SPDX-License-Identifier: Apache-2.0
#include "taskmix/meta_train.hpp"

#include <cmath>
#include <exception>
#include <ostream>
#include <string>

#include <json.hpp>

#include "taskmix/error.hpp"
#include "taskmix/metrics.hpp"

namespace taskmix {

namespace {

constexpr std::uint64_t kMetaMixStreamBase = 1ULL << 32;

bool has_taskmix(Augmentation a) { return a == Augmentation::taskmix || a == Augmentation::both; }
bool has_metamix(Augmentation a) { return a == Augmentation::metamix || a == Augmentation::both; }

/// Flat float vector usable with the update rules in optim.hpp.
struct FlatParams {
  std::vector<float> data;
  std::span<float> values() noexcept { return data; }
  std::span<const float> values() const noexcept { return data; }
};

void accumulate(std::span<float> into, std::span<const float> from) {
  for (std::size_t i = 0; i < into.size(); ++i)
    into[i] += from[i];
}

/// Runs body(k) for k in [0, n) across threads and rethrows the first
/// failure (lowest k) on the calling thread.
template <class Fn> void parallel_slots(std::size_t n, Fn &&body) {
  std::vector<std::exception_ptr> errors(n);
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long k = 0; k < count; ++k) {
    try {
      body(static_cast<std::size_t>(k));
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

double batch_loss(const ModelParams<float> &p, const Batch<float> &b) {
  return static_cast<double>(weighted_ce<float>(forward(p, b.x), b.y, b.w));
}

} // namespace

std::string_view to_string(Method m) {
  switch (m) {
  case Method::mtl: return "mtl";
  case Method::vanilla: return "vanilla";
  case Method::maml: return "maml";
  case Method::maml_metamix: return "maml+metamix";
  case Method::maml_taskmix: return "maml+taskmix";
  case Method::maml_metamix_taskmix: return "maml+metamix+taskmix";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods)
    if (to_string(m) == name)
      return m;
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected mtl, vanilla, maml, maml+metamix, maml+taskmix, maml+metamix+taskmix)");
}

std::string_view to_string(Augmentation a) {
  switch (a) {
  case Augmentation::none: return "none";
  case Augmentation::metamix: return "metamix";
  case Augmentation::taskmix: return "taskmix";
  case Augmentation::both: return "both";
  }
  return "?";
}

std::string_view to_string(GradMode m) { return m == GradMode::exact ? "exact" : "first_order"; }

GradMode parse_grad_mode(std::string_view name) {
  if (name == "first_order")
    return GradMode::first_order;
  if (name == "exact")
    return GradMode::exact;
  throw ConfigError("meta.grad_mode must be first_order or exact, got '" + std::string(name) + "'");
}

Augmentation augmentation_for(Method m) {
  switch (m) {
  case Method::maml_metamix: return Augmentation::metamix;
  case Method::maml_taskmix: return Augmentation::taskmix;
  case Method::maml_metamix_taskmix: return Augmentation::both;
  default: return Augmentation::none;
  }
}

void MetaConfig::validate() const {
  for (std::size_t w : neck)
    if (w == 0)
      throw ConfigError("model.neck widths must be >= 1");
  if (!(inner_lr > 0.0))
    throw ConfigError("meta.inner_lr must be > 0");
  if (!(schedule.lr_max > 0.0))
    throw ConfigError("meta.outer_lr must be > 0");
  if (schedule.max_step > 0)
    schedule.validate();
  else if (!(schedule.lr_min >= 0.0 && schedule.lr_min <= schedule.lr_max))
    throw ConfigError("meta.lr_min must lie in [0, outer_lr]");
  if (batch_size == 0)
    throw ConfigError("meta.batch_size must be >= 1");
  if (eval_interval == 0)
    throw ConfigError("meta.eval_interval must be >= 1");
  mix.validate();
  if (!(finetune.lr > 0.0))
    throw ConfigError("finetune.lr must be > 0");
  if (finetune.batch_size == 0)
    throw ConfigError("finetune.batch_size must be >= 1");
  if (finetune.eval_interval == 0)
    throw ConfigError("finetune.eval_interval must be >= 1");
}

Geometry geometry_for(const Dataset &dataset, const MetaConfig &config) {
  Geometry g{dataset.dim, config.neck, dataset.max_classes};
  g.validate();
  return g;
}

void write_history_line(std::ostream &out, const HistoryEntry &e) {
  nlohmann::json j{{"step", e.step}, {"lr", e.lr}};
  j["train_loss"] = e.train_loss ? nlohmann::json(*e.train_loss) : nlohmann::json(nullptr);
  j["validation"] = e.validation ? nlohmann::json(*e.validation) : nlohmann::json(nullptr);
  out << j.dump() << '\n';
}

MetaLearner::MetaLearner(const Dataset &dataset, const MetaConfig &config)
    : MetaLearner(dataset, config, [&] {
        RngStream init(config.seed, "init", 0);
        return init_params<float>(geometry_for(dataset, config), init);
      }()) {}

MetaLearner::MetaLearner(const Dataset &dataset, const MetaConfig &config, ModelParams<float> init)
    : dataset_(dataset), config_(config), train_tasks_(dataset.indices(Role::meta_train)),
      theta_(std::move(init)), adam_(theta_.size(), config.adam),
      pair_rng_(config.seed, "synth", 0) {
  config_.validate();
  if (train_tasks_.empty())
    throw UsageError("meta-training needs at least one meta_train task");
  if (!(theta_.geometry() == geometry_for(dataset, config)))
    throw ShapeError("initial parameters do not match the dataset geometry");
  for (std::size_t t : train_tasks_) {
    batch_rngs_.emplace_back(config.seed, "batch", t);
    train_full_.push_back(split_batch(dataset.tasks[t], Split::train));
    validation_full_.push_back(split_batch(dataset.tasks[t], Split::validation));
  }
  const std::size_t n_synth = has_taskmix(config.augmentation) ? config.mix.synthetic_count(train_tasks_.size()) : 0;
  for (std::size_t n = 0; n < n_synth; ++n)
    taskmix_rngs_.emplace_back(config.seed, "beta", n);
  if (has_metamix(config.augmentation))
    for (std::size_t k = 0; k < train_tasks_.size() + n_synth; ++k)
      metamix_rngs_.emplace_back(config.seed, "beta", kMetaMixStreamBase + k);
}

StepStats MetaLearner::step(std::size_t step_index) {
  const std::size_t T = train_tasks_.size();
  const std::size_t n = config_.inner_steps;
  const std::size_t B = config_.batch_size;
  StepStats stats;
  stats.lr = config_.schedule.max_step > 0 ? cosine_lr(step_index, config_.schedule) : config_.schedule.lr_max;

  // support and query both come from the train split
  std::vector<TaskBatches> real(T);
  parallel_slots(T, [&](std::size_t t) {
    const Task &task = dataset_.tasks[train_tasks_[t]];
    for (std::size_t k = 0; k < n; ++k)
      real[t].support.push_back(sample_batch(task, Split::train, B, batch_rngs_[t]));
    real[t].query = sample_batch(task, Split::train, B, batch_rngs_[t]);
  });

  std::vector<SyntheticTaskBatch> synthetic =
      taskmix_synthesize(real, taskmix_rngs_.size(), config_.mix, pair_rng_, taskmix_rngs_);

  std::vector<const TaskBatches *> slots;
  slots.reserve(T + synthetic.size());
  for (const auto &r : real)
    slots.push_back(&r);
  for (const auto &s : synthetic)
    slots.push_back(&s.batches);
  const std::size_t S = slots.size();
  stats.adapted_tasks = S;

  const bool metamix = has_metamix(config_.augmentation);
  std::vector<std::vector<Batch<float>>> queries(S);
  for (std::size_t k = 0; k < S; ++k) {
    queries[k].push_back(slots[k]->query);
    if (metamix)
      queries[k].push_back(metamix_augment(slots[k]->query, config_.mix, metamix_rngs_[k]));
  }

  const NetworkObjective<float> objective;
  const bool exact = config_.grad_mode == GradMode::exact;
  std::vector<GradientSet<float>> grads(S);
  std::vector<double> losses(S, 0.0);
  parallel_slots(S, [&](std::size_t k) {
    auto adapted = inner_adapt(objective, theta_, std::span<const Batch<float>>(slots[k]->support),
                               config_.inner_lr, exact);
    // the mixed-query term joins the plain one as an average of the two
    auto mg = meta_gradient(objective, adapted.params, exact ? &adapted.trace : nullptr,
                            std::span<const Batch<float>>(queries[k]), config_.grad_mode,
                            metamix ? 0.5 : 1.0);
    grads[k] = std::move(mg.grad);
    losses[k] = mg.query_loss;
  });

  GradientSet<float> total = std::move(grads[0]);
  double loss_sum = losses[0];
  for (std::size_t k = 1; k < S; ++k) {
    accumulate(total.values(), grads[k].values());
    loss_sum += losses[k];
  }
  stats.mean_query_loss = loss_sum / static_cast<double>(S);
  if (!std::isfinite(stats.mean_query_loss))
    throw NumericError("non-finite query loss");
  theta_ = adam_step(adam_, std::move(theta_), total, stats.lr);
  return stats;
}

double MetaLearner::validation_loss() const {
  const NetworkObjective<float> objective;
  std::vector<double> per_task(train_tasks_.size(), 0.0);
  parallel_slots(train_tasks_.size(), [&](std::size_t t) {
    const Batch<float> &eval = validation_full_[t].size() > 0 ? validation_full_[t] : train_full_[t];
    ModelParams<float> p = theta_;
    for (std::size_t k = 0; k < config_.inner_steps; ++k)
      p = sgd_step(std::move(p), objective.gradient(p, train_full_[t]).grad, config_.inner_lr);
    per_task[t] = batch_loss(p, eval);
  });
  double sum = 0.0;
  for (double v : per_task)
    sum += v;
  return sum / static_cast<double>(per_task.size());
}

TrainedModel meta_train(const Dataset &dataset, const MetaConfig &config, std::ostream *history) {
  MetaLearner learner(dataset, config);
  EarlyStopper<ModelParams<float>> stopper(config.patience, Direction::minimize);
  TrainedModel out;

  auto record = [&](const HistoryEntry &e) {
    out.history.push_back(e);
    if (history)
      write_history_line(*history, e);
  };
  auto validate = [&](std::size_t step) {
    double v = 0.0;
    try {
      v = learner.validation_loss();
    } catch (const NumericError &e) {
      throw TrainingError(step, e.what());
    }
    if (!std::isfinite(v))
      throw TrainingError(step, "non-finite validation loss");
    return v;
  };

  const double v0 = validate(0);
  stopper.update(v0, 0, learner.params());
  record({0, config.schedule.max_step > 0 ? cosine_lr(0, config.schedule) : config.schedule.lr_max,
          std::nullopt, v0});

  const std::size_t max_step = config.schedule.max_step;
  for (std::size_t s = 0; s < max_step; ++s) {
    StepStats stats;
    try {
      stats = learner.step(s);
    } catch (const NumericError &e) {
      throw TrainingError(s + 1, e.what());
    }
    const std::size_t done = s + 1;
    out.stopped_at = done;
    HistoryEntry e{done, stats.lr, stats.mean_query_loss, std::nullopt};
    bool stop = false;
    if (done % config.eval_interval == 0 || done == max_step) {
      e.validation = validate(done);
      stop = stopper.update(*e.validation, done, learner.params());
    }
    record(e);
    if (stop)
      break;
  }
  out.params = stopper.best();
  out.best_step = stopper.best_step();
  out.best_value = stopper.best_value();
  return out;
}

TrainedModel finetune(const ModelParams<float> &init, const Task &task, const MetaConfig &config,
                      std::uint64_t stream_id) {
  if (task.role != Role::meta_test)
    throw UsageError("finetune: task '" + task.id + "' is not a meta_test task");
  const FinetuneConfig &fc = config.finetune;
  RngStream rng(config.seed, "finetune", stream_id);
  const bool whole_split = task.splits.train.size() <= fc.batch_size;
  const Batch<float> fixed = whole_split ? split_batch(task, Split::train) : Batch<float>{};
  const bool has_validation = !task.splits.validation.empty();

  TrainedModel out;
  ModelParams<float> theta = init;
  AdamState<float> adam(theta.size(), config.adam);
  EarlyStopper<ModelParams<float>> stopper(fc.patience, Direction::maximize);
  if (has_validation) {
    const double v = evaluate_split(theta, task, Split::validation);
    stopper.update(v, 0, theta);
    out.history.push_back({0, fc.lr, std::nullopt, v});
  }
  for (std::size_t s = 0; s < fc.max_steps; ++s) {
    LossAndGradient<float> lg;
    try {
      lg = whole_split ? backward(theta, fixed) : backward(theta, sample_batch(task, Split::train, fc.batch_size, rng));
    } catch (const NumericError &e) {
      throw TrainingError(s + 1, "finetune '" + task.id + "': " + e.what());
    }
    if (!is_finite(lg.loss))
      throw TrainingError(s + 1, "finetune '" + task.id + "': non-finite loss");
    theta = adam_step(adam, std::move(theta), lg.grad, fc.lr);
    const std::size_t done = s + 1;
    out.stopped_at = done;
    HistoryEntry e{done, fc.lr, static_cast<double>(lg.loss), std::nullopt};
    bool stop = false;
    if (has_validation && (done % fc.eval_interval == 0 || done == fc.max_steps)) {
      e.validation = evaluate_split(theta, task, Split::validation);
      stop = stopper.update(*e.validation, done, theta);
    }
    out.history.push_back(e);
    if (stop)
      break;
  }
  if (stopper.has_best()) {
    out.params = stopper.best();
    out.best_step = stopper.best_step();
    out.best_value = stopper.best_value();
  } else {
    out.params = std::move(theta);
    out.best_step = out.stopped_at;
  }
  return out;
}

TrainedModel mtl_train(const Dataset &dataset, const MetaConfig &config, std::ostream *history) {
  config.validate();
  const auto train_tasks = dataset.indices(Role::meta_train);
  if (train_tasks.empty())
    throw UsageError("mtl_train needs at least one meta_train task");
  const Geometry geometry = geometry_for(dataset, config);
  const std::size_t T = train_tasks.size();

  RngStream init_rng(config.seed, "init", 0);
  ModelParams<float> shared = init_params<float>(geometry, init_rng);
  const std::size_t head_size = shared.head().size();
  std::vector<FlatParams> heads(T);
  for (std::size_t t = 0; t < T; ++t) {
    RngStream head_rng(config.seed, "init", 1 + t);
    const ModelParams<float> fresh = init_params<float>(geometry, head_rng);
    heads[t].data.assign(fresh.head().begin(), fresh.head().end());
  }
  AdamState<float> shared_adam(shared.size(), config.adam);
  std::vector<AdamState<float>> head_adam(T, AdamState<float>(head_size, config.adam));
  std::vector<RngStream> batch_rngs;
  std::vector<Batch<float>> validation;
  for (std::size_t t : train_tasks) {
    batch_rngs.emplace_back(config.seed, "batch", t);
    const Task &task = dataset.tasks[t];
    validation.push_back(split_batch(task, task.splits.validation.empty() ? Split::train : Split::validation));
  }

  auto with_head = [&](std::size_t t) {
    ModelParams<float> p = shared;
    std::copy(heads[t].data.begin(), heads[t].data.end(), p.head().begin());
    return p;
  };

  using Snapshot = std::pair<ModelParams<float>, std::vector<FlatParams>>;
  EarlyStopper<Snapshot> stopper(config.patience, Direction::minimize);
  TrainedModel out;
  auto record = [&](const HistoryEntry &e) {
    out.history.push_back(e);
    if (history)
      write_history_line(*history, e);
  };
  auto validate = [&](std::size_t step) {
    std::vector<double> per_task(T);
    parallel_slots(T, [&](std::size_t t) { per_task[t] = batch_loss(with_head(t), validation[t]); });
    double sum = 0.0;
    for (double v : per_task)
      sum += v;
    const double v = sum / static_cast<double>(T);
    if (!std::isfinite(v))
      throw TrainingError(step, "non-finite validation loss");
    return v;
  };

  const std::size_t max_step = config.schedule.max_step;
  const double lr0 = max_step > 0 ? cosine_lr(0, config.schedule) : config.schedule.lr_max;
  const double v0 = validate(0);
  stopper.update(v0, 0, Snapshot{shared, heads});
  record({0, lr0, std::nullopt, v0});

  for (std::size_t s = 0; s < max_step; ++s) {
    const double lr = cosine_lr(s, config.schedule);
    std::vector<LossAndGradient<float>> parts(T);
    try {
      parallel_slots(T, [&](std::size_t t) {
        const Task &task = dataset.tasks[train_tasks[t]];
        parts[t] = backward(with_head(t), sample_batch(task, Split::train, config.batch_size, batch_rngs[t]));
      });
    } catch (const NumericError &e) {
      throw TrainingError(s + 1, e.what());
    }
    GradientSet<float> neck_grad(geometry);
    double loss_sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      loss_sum += static_cast<double>(parts[t].loss);
      auto g = parts[t].grad.values();
      auto acc = neck_grad.values();
      const std::size_t neck_size = acc.size() - head_size;
      for (std::size_t i = 0; i < neck_size; ++i)
        acc[i] += g[i];
    }
    if (!std::isfinite(loss_sum))
      throw TrainingError(s + 1, "non-finite training loss");
    shared = adam_step(shared_adam, std::move(shared), neck_grad, lr);
    for (std::size_t t = 0; t < T; ++t) {
      FlatParams hg;
      auto head_grad = parts[t].grad.head();
      hg.data.assign(head_grad.begin(), head_grad.end());
      heads[t] = adam_step(head_adam[t], std::move(heads[t]), hg, lr);
    }

    const std::size_t done = s + 1;
    out.stopped_at = done;
    HistoryEntry e{done, lr, loss_sum / static_cast<double>(T), std::nullopt};
    bool stop = false;
    if (done % config.eval_interval == 0 || done == max_step) {
      e.validation = validate(done);
      stop = stopper.update(*e.validation, done, Snapshot{shared, heads});
    }
    record(e);
    if (stop)
      break;
  }

  out.params = stopper.best().first;
  RngStream fresh_rng(config.seed, "init", kMtlFreshHeadStream);
  const ModelParams<float> fresh = init_params<float>(geometry, fresh_rng);
  std::copy(fresh.head().begin(), fresh.head().end(), out.params.head().begin());
  out.best_step = stopper.best_step();
  out.best_value = stopper.best_value();
  return out;
}

} // namespace taskmix
