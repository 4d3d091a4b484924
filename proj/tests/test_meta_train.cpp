// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <omp.h>

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "support.hpp"
#include "taskmix/metrics.hpp"
#include "taskmix/meta_train.hpp"

using namespace taskmix;
using taskmix::testing::tiny_config;
using taskmix::testing::tiny_dataset;

namespace {

std::vector<ModelParams<float>> trajectory(const Dataset &ds, const MetaConfig &cfg, std::size_t steps) {
  MetaLearner learner(ds, cfg);
  std::vector<ModelParams<float>> out{learner.params()};
  for (std::size_t s = 0; s < steps; ++s) {
    learner.step(s);
    out.push_back(learner.params());
  }
  return out;
}

std::vector<double> validations(const TrainedModel &m) {
  std::vector<double> v;
  for (const auto &e : m.history)
    if (e.validation)
      v.push_back(*e.validation);
  return v;
}

} // namespace

TEST_CASE("method roster") {
  CHECK(std::size(kAllMethods) == 6);
  for (Method m : kAllMethods)
    CHECK(parse_method(to_string(m)) == m);
  CHECK(augmentation_for(Method::maml_taskmix) == Augmentation::taskmix);
  CHECK(augmentation_for(Method::maml_metamix) == Augmentation::metamix);
  CHECK(augmentation_for(Method::maml_metamix_taskmix) == Augmentation::both);
  CHECK(augmentation_for(Method::maml) == Augmentation::none);
  CHECK_THROWS_AS(parse_method("reptile"), ConfigError);
  const MetaConfig defaults;
  CHECK(defaults.inner_steps == 5);
  CHECK(defaults.batch_size == 1024);
  CHECK(defaults.schedule.max_step == 5000);
  CHECK(defaults.grad_mode == GradMode::first_order);
}

TEST_CASE("TaskMix with no synthetic tasks is plain MAML") {
  const Dataset ds = tiny_dataset();
  MetaConfig base = tiny_config();
  MetaConfig tm = base;
  tm.augmentation = Augmentation::taskmix;
  tm.mix.n_synthetic = 0;
  CHECK(trajectory(ds, base, 8) == trajectory(ds, tm, 8));
  const TrainedModel a = meta_train(ds, base), b = meta_train(ds, tm);
  CHECK(a.params == b.params);
  CHECK(validations(a) == validations(b));
}

TEST_CASE("MetaMix at lambda 1 is plain MAML") {
  const Dataset ds = tiny_dataset();
  MetaConfig base = tiny_config();
  MetaConfig mm = base;
  mm.augmentation = Augmentation::metamix;
  mm.mix.fixed_lambda = 1.0;
  CHECK(trajectory(ds, base, 8) == trajectory(ds, mm, 8));
  for (GradMode mode : {GradMode::first_order, GradMode::exact}) {
    base.grad_mode = mm.grad_mode = mode;
    CHECK(trajectory(ds, base, 3) == trajectory(ds, mm, 3));
  }
}

TEST_CASE("no inner steps: first-order and exact updates coincide") {
  const Dataset ds = tiny_dataset();
  MetaConfig fo = tiny_config();
  fo.inner_steps = 0;
  MetaConfig ex = fo;
  ex.grad_mode = GradMode::exact;
  CHECK(trajectory(ds, fo, 6) == trajectory(ds, ex, 6));

  fo.inner_steps = ex.inner_steps = 2;
  CHECK_FALSE(trajectory(ds, fo, 2) == trajectory(ds, ex, 2));
}

TEST_CASE("augmentation changes the trajectory when active") {
  const Dataset ds = tiny_dataset();
  MetaConfig base = tiny_config();
  for (Augmentation a : {Augmentation::metamix, Augmentation::taskmix, Augmentation::both}) {
    MetaConfig c = base;
    c.augmentation = a;
    CHECK_FALSE(trajectory(ds, base, 2) == trajectory(ds, c, 2));
  }
}

TEST_CASE("TaskMix doubles the adapted tasks per step but not the outer updates") {
  const Dataset ds = tiny_dataset(3, 7);
  MetaConfig c = tiny_config();
  c.augmentation = Augmentation::taskmix;
  c.schedule.max_step = 4;
  MetaLearner learner(ds, c);
  CHECK(learner.step(0).adapted_tasks == 14);
  const TrainedModel m = meta_train(ds, c);
  CHECK(m.stopped_at == 4);
  CHECK(m.history.size() == 5);
}

TEST_CASE("one task, no inner steps: plain Adam on the query batches") {
  Dataset ds = tiny_dataset(5, 1);
  MetaConfig c = tiny_config();
  c.inner_steps = 0;
  const auto traj = trajectory(ds, c, 5);

  const std::size_t task = ds.indices(Role::meta_train).front();
  RngStream init(c.seed, "init", 0);
  ModelParams<float> p = init_params<float>(geometry_for(ds, c), init);
  AdamState<float> adam(p.size(), c.adam);
  RngStream batches(c.seed, "batch", task);
  for (std::size_t s = 0; s < 5; ++s) {
    const auto lg = backward(p, sample_batch(ds.tasks[task], Split::train, c.batch_size, batches));
    p = adam_step(adam, std::move(p), lg.grad, cosine_lr(s, c.schedule));
    CHECK(p == traj[s + 1]);
  }
}

TEST_CASE("meta_train contracts") {
  const Dataset ds = tiny_dataset();
  MetaConfig c = tiny_config();

  SUBCASE("zero steps return the initial parameters") {
    c.schedule.max_step = 0;
    RngStream init(c.seed, "init", 0);
    const TrainedModel m = meta_train(ds, c);
    CHECK(m.params == init_params<float>(geometry_for(ds, c), init));
    CHECK(m.stopped_at == 0);
  }
  SUBCASE("deterministic per seed, different across seeds") {
    const TrainedModel a = meta_train(ds, c), b = meta_train(ds, c);
    CHECK(a.params == b.params);
    c.seed = 1;
    CHECK_FALSE(meta_train(ds, c).params == a.params);
  }
  SUBCASE("thread count does not change the result") {
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const TrainedModel one = meta_train(ds, c);
    omp_set_num_threads(3);
    const TrainedModel three = meta_train(ds, c);
    omp_set_num_threads(saved);
    CHECK(one.params == three.params);
  }
  SUBCASE("validation loss improves and the best snapshot is returned") {
    c.schedule.max_step = 60;
    std::ostringstream log;
    const TrainedModel m = meta_train(ds, c, &log);
    const auto v = validations(m);
    REQUIRE(v.size() >= 2);
    CHECK(m.best_value < v.front());
    CHECK(m.best_value == *std::min_element(v.begin(), v.end()));
    MetaLearner probe(ds, c, m.params);
    CHECK(probe.validation_loss() == m.best_value);

    std::istringstream lines(log.str());
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("step"));
      CHECK(j.contains("lr"));
      CHECK(j.contains("train_loss"));
      CHECK(j.contains("validation"));
      ++count;
    }
    CHECK(count == m.history.size());
  }
  SUBCASE("early stopping halts a stalled run") {
    c.schedule = {1e-9, 0.0, 200};
    c.patience = 2;
    c.eval_interval = 5;
    const TrainedModel m = meta_train(ds, c);
    CHECK(m.stopped_at < 200);
  }
  SUBCASE("divergence reports the step") {
    c.inner_lr = 1e30;
    CHECK_THROWS_AS(meta_train(ds, c), TrainingError);
  }
}

TEST_CASE("finetune") {
  const Dataset ds = tiny_dataset();
  const MetaConfig c = tiny_config();
  const std::size_t test_idx = ds.indices(Role::meta_test).front();
  const Task &task = ds.tasks[test_idx];
  RngStream init(0, "init", 0);
  const auto theta = init_params<float>(geometry_for(ds, c), init);

  const TrainedModel ft = finetune(theta, task, c, test_idx);
  CHECK(ft.best_value >= evaluate_split(theta, task, Split::validation));
  CHECK(ft.best_value == evaluate_split(ft.params, task, Split::validation));
  CHECK(finetune(theta, task, c, test_idx).params == ft.params);

  CHECK_THROWS_AS(finetune(theta, ds.tasks[ds.indices(Role::meta_train).front()], c, 0), UsageError);
}

TEST_CASE("padded logits never win the argmax") {
  const Dataset ds = tiny_dataset();
  const MetaConfig c = tiny_config();
  RngStream init(0, "init", 0);
  auto theta = init_params<float>(geometry_for(ds, c), init);
  for (const Task &t : ds.tasks) {
    if (t.n_classes == ds.max_classes)
      continue;
    for (std::size_t k = t.n_classes; k < ds.max_classes; ++k)
      theta.head_bias()[k] = 1e6f;
    for (std::uint32_t p : predict(theta, t.features, t.n_classes))
      CHECK(p < t.n_classes);
    return;
  }
  FAIL("fixture has no task with padded classes");
}

TEST_CASE("multi-task baseline") {
  const Dataset ds = tiny_dataset();
  MetaConfig c = tiny_config();
  c.schedule.max_step = 30;
  const TrainedModel m = mtl_train(ds, c);
  RngStream fresh(c.seed, "init", kMtlFreshHeadStream);
  const auto head = init_params<float>(geometry_for(ds, c), fresh);
  CHECK(std::equal(m.params.head().begin(), m.params.head().end(), head.head().begin()));
  RngStream start(c.seed, "init", 0);
  const auto initial = init_params<float>(geometry_for(ds, c), start);
  CHECK_FALSE(std::equal(m.params.weights(0).begin(), m.params.weights(0).end(), initial.weights(0).begin()));
  CHECK(mtl_train(ds, c).params == m.params);

  const Dataset single = tiny_dataset(4, 1);
  CHECK(mtl_train(single, c).best_value < mtl_train(single, c).history.front().validation.value());
}

TEST_CASE("config validation") {
  MetaConfig c = tiny_config();
  c.inner_lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.mix.eta = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
