#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posttrain/adam.h"
#include "posttrain/corpus.h"
#include "posttrain/encoder.h"
#include "posttrain/metrics.h"
#include "posttrain/tokenizer.h"

namespace posttrain {

// ----------------------------------------------------------------------------
// Losses
// ----------------------------------------------------------------------------

template <typename T>
struct DkLoss {
  Tensor<T> total;
  Tensor<T> mlm;  // undefined when the batch has no masked positions
  Tensor<T> nsp;
  std::size_t masked = 0;
};

// L_MLM + L_NSP. L_MLM averages over masked positions unless
// `mlm_normalizer` is given, in which case the summed cross-entropy is
// divided by it; the MLM term is dropped when nothing is masked.
template <typename T>
DkLoss<T> dk_loss(const ModelParameters<T>& params, const ModelConfig& config,
                  std::span<const DkExample* const> batch,
                  const ForwardOptions& options = {},
                  std::optional<double> mlm_normalizer = std::nullopt);

// Mean of the start and end pointer cross-entropies, document positions
// only. Every feature must carry an answer.
template <typename T>
Tensor<T> mrc_loss(const ModelParameters<T>& params, const ModelConfig& config,
                   std::span<const MrcFeature* const> batch,
                   const ForwardOptions& options = {});

// Cross-entropy of the tag head over labelled positions.
template <typename T>
Tensor<T> ae_loss(const ModelParameters<T>& params, const ModelConfig& config,
                  std::span<const BioFeature* const> batch,
                  const ForwardOptions& options = {});

template <typename T>
Tensor<T> asc_loss(const ModelParameters<T>& params, const ModelConfig& config,
                   std::span<const AscFeature* const> batch,
                   const ForwardOptions& options = {});

// ----------------------------------------------------------------------------
// Joint post-training
// ----------------------------------------------------------------------------

struct PostTrainConfig {
  std::size_t max_len = 320;
  std::size_t batch_per_knowledge = 16;
  std::size_t sub_batches = 2;
  double learning_rate = 3e-5;
  std::int64_t warmup_steps = 0;
  // Number of steps a run performs.
  std::uint64_t total_steps = 1;
  std::uint64_t seed = 0;
  // Write a checkpoint every this many steps; 0 writes only the final one.
  std::uint64_t checkpoint_every = 0;
  bool dropout = true;

  void validate() const;
};

struct StepReport {
  std::uint64_t step = 0;
  double l_dk = 0.0;
  double l_mlm = 0.0;
  double l_nsp = 0.0;
  double l_mrc = 0.0;
  double total = 0.0;
  double learning_rate = 0.0;
  std::size_t masked = 0;
  // True when the DK batch had no masked position.
  bool mlm_omitted = false;
};

// Dropout seeds for a step are derived from (seed, step, stream, position in
// the full batch), so they do not depend on how the batch is split.
struct StepSeeds {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  bool dropout = true;
};

// Splits both batches into u sub-batches, backpropagates
// (L_DK(dk_i) + L_MRC(mrc_i)) / u for each and leaves the summed gradients on
// the parameters. Does not clear existing grads.
template <typename T>
StepReport accumulate_joint_gradients(const ModelParameters<T>& params,
                                      const ModelConfig& config,
                                      std::span<const DkExample* const> dk,
                                      std::span<const MrcFeature* const> mrc,
                                      std::size_t u, const StepSeeds& seeds);

// zero grads, accumulate over u sub-batches, one Adam update.
template <typename T>
StepReport posttrain_step(ModelParameters<T>& params, const ModelConfig& config,
                          Adam<T>& adam, std::span<const DkExample* const> dk,
                          std::span<const MrcFeature* const> mrc,
                          std::size_t u, const StepSeeds& seeds);

// Optimizer list for post-training. Every tensor, in named() order, so the
// optimizer state lines up with checkpoint blobs; the tag and class heads get
// no gradient here and Adam leaves them as they are.
template <typename T>
std::vector<Tensor<T>> posttrain_parameters(const ModelParameters<T>& params);

template <typename T>
struct TrainingState {
  ModelParameters<T> params;
  std::optional<AdamState<T>> adam;
  std::uint64_t step = 0;
};

using StepCallback = std::function<void(const StepReport&)>;

// Runs config.total_steps joint steps from state.step, cycling both streams
// (features without an answer are skipped). Appends one JSON line per step
// to <out_dir>/train_log.jsonl, writes <out_dir>/checkpoint-<step>.ptck
// periodically and <out_dir>/final.ptck at the end; returns the final path.
template <typename T>
std::string posttrain_run(const PostTrainConfig& config,
                          const ModelConfig& model_config,
                          const Digest& vocab_digest, TrainingState<T>& state,
                          std::span<const DkExample> dk_stream,
                          std::span<const MrcFeature> mrc_stream,
                          const std::string& out_dir,
                          const StepCallback& on_step = {});

std::string step_log_line(const StepReport& report, double seconds);

// ----------------------------------------------------------------------------
// Fine-tuning
// ----------------------------------------------------------------------------

enum class Task { kRrc, kAe, kAsc };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view s);

struct FineTuneConfig {
  Task task = Task::kRrc;
  std::size_t max_epochs = 4;
  double learning_rate = 3e-5;
  std::size_t batch_size = 32;
  std::size_t max_len = 320;
  std::uint64_t seed = 0;
  // Global gradient-norm clip; 0 disables it.
  double max_grad_norm = 0.0;
  // Stop after the epoch whose validation metric reaches this value.
  std::optional<double> stop_at_metric;
  bool dropout = true;

  void validate() const;
};

struct TaskData {
  std::vector<MrcExample> rrc;
  std::vector<BioExample> ae;
  std::vector<AscExample> asc;

  std::size_t size(Task task) const;
};

struct EpochReport {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  EvalReport valid;
};

template <typename T>
struct FineTuneResult {
  ModelParameters<T> params;  // best epoch
  std::size_t best_epoch = 0;
  EvalReport best;
  std::vector<EpochReport> epochs;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochReport&)>;

// Up to max_epochs passes over `train`; after each the model is scored on
// `valid` with the task's major metric (F1, chunk F1, Macro-F1) and the best
// epoch is kept.
template <typename T>
FineTuneResult<T> finetune(const FineTuneConfig& config,
                           const ModelConfig& model_config,
                           const Vocabulary& vocab, ModelParameters<T> init,
                           const TaskData& train, const TaskData& valid,
                           const EpochCallback& on_epoch = {});

template <typename T>
EvalReport evaluate_task(Task task, const ModelParameters<T>& params,
                         const ModelConfig& model_config,
                         const Vocabulary& vocab, const TaskData& data,
                         std::size_t max_len);

// Encoder plus the head of `task`.
template <typename T>
std::vector<Tensor<T>> task_parameters(const ModelParameters<T>& params,
                                       Task task);

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation
  std::vector<double> values;
};

std::vector<MetricSummary> summarize_reports(std::span<const EvalReport> runs);

inline constexpr std::size_t kDefaultSeedRuns = 9;

}  // namespace posttrain
