// SPDX-License-Identifier: Apache-2.0
#pragma once

// MAML meta-training with optional MetaMix / TaskMix augmentation,
// meta-test fine-tuning, and the multi-task baseline.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "taskmix/mixing.hpp"
#include "taskmix/nn.hpp"
#include "taskmix/optim.hpp"
#include "taskmix/task_data.hpp"
#include "taskmix/unroll.hpp"

namespace taskmix {

enum class Augmentation { none, metamix, taskmix, both };

enum class Method { mtl, vanilla, maml, maml_metamix, maml_taskmix, maml_metamix_taskmix };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);
std::string_view to_string(Augmentation a);
std::string_view to_string(GradMode m);
GradMode parse_grad_mode(std::string_view name);
Augmentation augmentation_for(Method m);
inline constexpr Method kAllMethods[] = {Method::mtl,          Method::vanilla,      Method::maml,
                                        Method::maml_metamix, Method::maml_taskmix, Method::maml_metamix_taskmix};

struct FinetuneConfig {
  double lr = 1e-3;
  std::size_t max_steps = 500;
  std::size_t batch_size = 1024;
  std::size_t eval_interval = 10;
  std::size_t patience = 10;
};

struct MetaConfig {
  std::vector<std::size_t> neck{768, 768, 768};
  double inner_lr = 0.1;
  /// Outer learning rate: schedule.lr_max, annealed to lr_min by max_step.
  Schedule schedule{1e-3, 0.0, 5000};
  std::size_t inner_steps = 5;
  std::size_t batch_size = 1024;
  GradMode grad_mode = GradMode::first_order;
  Augmentation augmentation = Augmentation::none;
  MixConfig mix;
  std::size_t eval_interval = 50;
  std::size_t patience = 10;
  AdamHyper adam;
  FinetuneConfig finetune;
  std::uint64_t seed = 0;

  void validate() const;
};

Geometry geometry_for(const Dataset &dataset, const MetaConfig &config);

struct HistoryEntry {
  std::size_t step = 0;
  double lr = 0.0;
  std::optional<double> train_loss;
  std::optional<double> validation;
};

/// One history record as a single JSON line.
void write_history_line(std::ostream &out, const HistoryEntry &entry);

struct TrainedModel {
  ModelParams<float> params; // the early stopper's best snapshot
  std::vector<HistoryEntry> history;
  std::size_t stopped_at = 0;
  std::size_t best_step = 0;
  double best_value = 0.0;
};

struct StepStats {
  double lr = 0.0;
  double mean_query_loss = 0.0;
  std::size_t adapted_tasks = 0; // T plus any synthetic tasks
};

/// State of one meta-training run: θ, the outer Adam state and every RNG
/// substream. Batch streams are keyed by task, the TaskMix pair stream and
/// each λ stream are separate, so augmentation never shifts the batches.
class MetaLearner {
public:
  MetaLearner(const Dataset &dataset, const MetaConfig &config);
  MetaLearner(const Dataset &dataset, const MetaConfig &config, ModelParams<float> init);

  /// One outer update: draw batches, optionally synthesize tasks, adapt every
  /// task, then a single Adam step on the summed meta-gradients.
  StepStats step(std::size_t step_index);

  /// Mean over meta-train tasks of the validation-split loss after n
  /// first-order SGD steps on the full train split.
  double validation_loss() const;

  const ModelParams<float> &params() const noexcept { return theta_; }
  const MetaConfig &config() const noexcept { return config_; }
  std::size_t num_meta_train() const noexcept { return train_tasks_.size(); }

private:
  const Dataset &dataset_;
  MetaConfig config_;
  std::vector<std::size_t> train_tasks_;
  ModelParams<float> theta_;
  AdamState<float> adam_;
  std::vector<RngStream> batch_rngs_;
  RngStream pair_rng_;
  std::vector<RngStream> taskmix_rngs_;
  std::vector<RngStream> metamix_rngs_;
  std::vector<Batch<float>> train_full_;
  std::vector<Batch<float>> validation_full_;
};

/// Meta-trains for up to schedule.max_step outer steps, early stopping on
/// the mean meta-train validation loss. `history` receives JSON lines.
TrainedModel meta_train(const Dataset &dataset, const MetaConfig &config, std::ostream *history = nullptr);

/// Adam fine-tuning of all parameters on a meta-test task's train split,
/// early stopped on validation Macro F1. `stream_id` keys the batch stream.
TrainedModel finetune(const ModelParams<float> &init, const Task &task, const MetaConfig &config,
                      std::uint64_t stream_id);

/// Joint training with a private head per meta-train task. The returned
/// params hold the trained neck and a freshly initialized head.
TrainedModel mtl_train(const Dataset &dataset, const MetaConfig &config, std::ostream *history = nullptr);

/// Stream id of the freshly initialized head handed out by mtl_train.
inline constexpr std::uint64_t kMtlFreshHeadStream = 0xfeedULL;

} // namespace taskmix
