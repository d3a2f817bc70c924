#include "posttrain/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"
#include "posttrain/checkpoint.h"
#include "posttrain/error.h"
#include "posttrain/inference.h"
#include "posttrain/ops.h"

namespace posttrain {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t example_seed(std::uint64_t seed, std::uint64_t step,
                           std::uint64_t stream, std::uint64_t index) {
  return mix(mix(mix(seed) ^ step) ^ ((stream << 40) | index));
}

template <typename T>
double value_of(const Tensor<T>& t) {
  return t.defined() ? static_cast<double>(t.item()) : 0.0;
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("non-finite " + what);
}

template <typename T>
std::vector<Tensor<T>> filter_parameters(
    const ModelParameters<T>& params,
    const std::function<bool(const std::string&)>& keep) {
  std::vector<Tensor<T>> out;
  params.visit([&](const std::string& name, const Tensor<T>& t) {
    if (keep(name)) out.push_back(t);
  });
  return out;
}

bool starts_with(const std::string& s, std::string_view prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

template <typename T>
void clip_gradients(std::span<const Tensor<T>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const T factor = static_cast<T>(max_norm / norm);
  for (auto p : params) {
    if (!p.has_grad()) continue;
    for (T& g : p.grad()) g *= factor;
  }
}

template <typename Feature>
std::vector<const PackedInput*> inputs_of(
    std::span<const Feature* const> batch) {
  std::vector<const PackedInput*> inputs;
  inputs.reserve(batch.size());
  for (const auto* f : batch) inputs.push_back(&f->input);
  return inputs;
}

}  // namespace

// ----------------------------------------------------------------------------

template <typename T>
DkLoss<T> dk_loss(const ModelParameters<T>& params, const ModelConfig& config,
                  std::span<const DkExample* const> batch,
                  const ForwardOptions& options,
                  std::optional<double> mlm_normalizer) {
  if (batch.empty()) throw InvalidArgument("dk_loss: empty batch");
  const auto out = forward(params, config, inputs_of(batch), options);
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> originals;
  std::vector<std::int32_t> labels;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (const auto& t : batch[b]->targets) {
      rows.push_back(b * out.length + static_cast<std::size_t>(t.position));
      originals.push_back(t.original);
    }
    labels.push_back(static_cast<std::int32_t>(batch[b]->label));
  }
  DkLoss<T> loss;
  loss.masked = rows.size();
  loss.nsp = ops::cross_entropy(pair_probs(params, out), labels);
  if (!rows.empty()) {
    loss.mlm = ops::cross_entropy(mlm_probs(params, out, rows), originals,
                                  mlm_normalizer);
    loss.total = ops::add(loss.mlm, loss.nsp);
  } else {
    loss.total = loss.nsp;
  }
  return loss;
}

template <typename T>
Tensor<T> mrc_loss(const ModelParameters<T>& params, const ModelConfig& config,
                   std::span<const MrcFeature* const> batch,
                   const ForwardOptions& options) {
  if (batch.empty()) throw InvalidArgument("mrc_loss: empty batch");
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<std::int32_t> starts, ends;
  for (const auto* f : batch) {
    if (!f->has_answer) {
      throw InvalidArgument("mrc_loss: feature '" + f->id + "' has no answer");
    }
    masks.push_back(f->input.right_side_mask());
    starts.push_back(f->start);
    ends.push_back(f->end);
  }
  const auto out = forward(params, config, inputs_of(batch), options);
  const auto [l1, l2] = span_probs(params, out, masks);
  return ops::scale(
      ops::add(ops::cross_entropy(l1, starts), ops::cross_entropy(l2, ends)),
      static_cast<T>(0.5));
}

template <typename T>
Tensor<T> ae_loss(const ModelParameters<T>& params, const ModelConfig& config,
                  std::span<const BioFeature* const> batch,
                  const ForwardOptions& options) {
  if (batch.empty()) throw InvalidArgument("ae_loss: empty batch");
  const auto out = forward(params, config, inputs_of(batch), options);
  std::vector<std::int32_t> targets(out.batch * out.length, kIgnoreLabel);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& labels = batch[b]->token_labels;
    for (std::size_t i = 0; i < out.length && i < labels.size(); ++i) {
      targets[b * out.length + i] = labels[i];
    }
  }
  return ops::cross_entropy(tag_probs(params, out), targets);
}

template <typename T>
Tensor<T> asc_loss(const ModelParameters<T>& params, const ModelConfig& config,
                   std::span<const AscFeature* const> batch,
                   const ForwardOptions& options) {
  if (batch.empty()) throw InvalidArgument("asc_loss: empty batch");
  const auto out = forward(params, config, inputs_of(batch), options);
  std::vector<std::int32_t> targets;
  for (const auto* f : batch) targets.push_back(static_cast<std::int32_t>(f->label));
  return ops::cross_entropy(class_probs(params, out), targets);
}

// ----------------------------------------------------------------------------

void PostTrainConfig::validate() const {
  if (batch_per_knowledge == 0) {
    throw InvalidArgument("batch_per_knowledge must be positive");
  }
  if (sub_batches == 0 || batch_per_knowledge % sub_batches != 0) {
    throw InvalidArgument("sub_batches (" + std::to_string(sub_batches) +
                          ") must divide batch_per_knowledge (" +
                          std::to_string(batch_per_knowledge) + ")");
  }
  if (total_steps == 0) throw InvalidArgument("total_steps must be at least 1");
  if (!(learning_rate > 0.0)) {
    throw InvalidArgument("learning_rate must be positive");
  }
  if (max_len < 8) throw InvalidArgument("max_len must be at least 8");
}

template <typename T>
StepReport accumulate_joint_gradients(const ModelParameters<T>& params,
                                      const ModelConfig& config,
                                      std::span<const DkExample* const> dk,
                                      std::span<const MrcFeature* const> mrc,
                                      std::size_t u, const StepSeeds& seeds) {
  if (dk.empty() || mrc.empty()) {
    throw InvalidArgument("posttrain step needs both DK and MRC examples");
  }
  if (u == 0 || dk.size() % u != 0 || mrc.size() % u != 0) {
    throw InvalidArgument("u=" + std::to_string(u) +
                          " does not divide batch sizes " +
                          std::to_string(dk.size()) + " and " +
                          std::to_string(mrc.size()));
  }
  std::size_t masked = 0;
  for (const auto* ex : dk) masked += ex->targets.size();

  std::vector<std::uint64_t> dk_seeds(dk.size()), mrc_seeds(mrc.size());
  for (std::size_t i = 0; i < dk.size(); ++i) {
    dk_seeds[i] = example_seed(seeds.seed, seeds.step, 0, i);
  }
  for (std::size_t i = 0; i < mrc.size(); ++i) {
    mrc_seeds[i] = example_seed(seeds.seed, seeds.step, 1, i);
  }

  const std::size_t dk_sub = dk.size() / u;
  const std::size_t mrc_sub = mrc.size() / u;
  const std::optional<double> normalizer =
      masked > 0 ? std::optional<double>(static_cast<double>(masked) / u)
                 : std::nullopt;
  const T inv_u = static_cast<T>(1.0 / static_cast<double>(u));

  StepReport report;
  report.step = seeds.step;
  report.masked = masked;
  report.mlm_omitted = masked == 0;
  for (std::size_t i = 0; i < u; ++i) {
    ForwardOptions dk_options;
    dk_options.train = seeds.dropout;
    dk_options.example_seeds =
        std::span<const std::uint64_t>(dk_seeds).subspan(i * dk_sub, dk_sub);
    ForwardOptions mrc_options;
    mrc_options.train = seeds.dropout;
    mrc_options.example_seeds =
        std::span<const std::uint64_t>(mrc_seeds).subspan(i * mrc_sub, mrc_sub);

    const auto d = dk_loss(params, config, dk.subspan(i * dk_sub, dk_sub),
                           dk_options, normalizer);
    const auto m =
        mrc_loss(params, config, mrc.subspan(i * mrc_sub, mrc_sub), mrc_options);
    const Tensor<T> partial = ops::scale(ops::add(d.total, m), inv_u);
    const double value = value_of(partial);
    require_finite(value, "loss at step " + std::to_string(seeds.step));
    backward(partial);

    report.l_mlm += value_of(d.mlm) / static_cast<double>(u);
    report.l_nsp += value_of(d.nsp) / static_cast<double>(u);
    report.l_mrc += value_of(m) / static_cast<double>(u);
    report.total += value;
  }
  report.l_dk = report.l_mlm + report.l_nsp;
  return report;
}

template <typename T>
StepReport posttrain_step(ModelParameters<T>& params, const ModelConfig& config,
                          Adam<T>& adam, std::span<const DkExample* const> dk,
                          std::span<const MrcFeature* const> mrc,
                          std::size_t u, const StepSeeds& seeds) {
  params.zero_grad();
  StepReport report =
      accumulate_joint_gradients(params, config, dk, mrc, u, seeds);
  adam.step();
  report.learning_rate = adam.current_learning_rate();
  return report;
}

template <typename T>
std::vector<Tensor<T>> posttrain_parameters(const ModelParameters<T>& params) {
  return params.all();
}

std::string step_log_line(const StepReport& report, double seconds) {
  nlohmann::ordered_json j;
  j["step"] = report.step;
  j["l_dk"] = report.l_dk;
  j["l_mlm"] = report.l_mlm;
  j["l_nsp"] = report.l_nsp;
  j["l_mrc"] = report.l_mrc;
  j["lr"] = report.learning_rate;
  j["seconds"] = seconds;
  j["mlm_omitted"] = report.mlm_omitted;
  return j.dump();
}

template <typename T>
std::string posttrain_run(const PostTrainConfig& config,
                          const ModelConfig& model_config,
                          const Digest& vocab_digest, TrainingState<T>& state,
                          std::span<const DkExample> dk_stream,
                          std::span<const MrcFeature> mrc_stream,
                          const std::string& out_dir,
                          const StepCallback& on_step) {
  config.validate();
  std::vector<const DkExample*> dk;
  for (const auto& ex : dk_stream) dk.push_back(&ex);
  std::vector<const MrcFeature*> mrc;
  for (const auto& f : mrc_stream) {
    if (f.has_answer) mrc.push_back(&f);
  }
  if (dk.empty()) throw InvalidArgument("empty DK stream");
  if (mrc.empty()) throw InvalidArgument("no answerable MRC examples");

  AdamOptions adam_options;
  adam_options.learning_rate = config.learning_rate;
  adam_options.warmup_steps = config.warmup_steps;
  Adam<T> adam(posttrain_parameters(state.params), adam_options);
  if (state.adam) adam.load_state(*state.adam);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  std::ofstream log(dir / "train_log.jsonl", std::ios::app);
  if (!log) throw DataError("cannot write file: " + (dir / "train_log.jsonl").string());

  CheckpointMeta meta;
  meta.config = model_config;
  meta.seed = config.seed;
  meta.vocab_digest = vocab_digest;

  const std::size_t batch = config.batch_per_knowledge;
  std::vector<const DkExample*> dk_batch(batch);
  std::vector<const MrcFeature*> mrc_batch(batch);
  const auto started = std::chrono::steady_clock::now();
  for (std::uint64_t k = 0; k < config.total_steps; ++k) {
    const std::uint64_t t = state.step;
    for (std::size_t j = 0; j < batch; ++j) {
      dk_batch[j] = dk[(t * batch + j) % dk.size()];
      mrc_batch[j] = mrc[(t * batch + j) % mrc.size()];
    }
    StepReport report =
        posttrain_step(state.params, model_config, adam,
                       std::span<const DkExample* const>(dk_batch),
                       std::span<const MrcFeature* const>(mrc_batch),
                       config.sub_batches, {config.seed, t, config.dropout});
    state.step = t + 1;
    report.step = state.step;
    const double seconds = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - started)
                               .count();
    log << step_log_line(report, seconds) << '\n';
    if (on_step) on_step(report);
    if (config.checkpoint_every > 0 &&
        state.step % config.checkpoint_every == 0) {
      meta.step = state.step;
      const auto state_now = adam.state();
      save_checkpoint(
          (dir / ("checkpoint-" + std::to_string(state.step) + ".ptck")).string(),
          meta, state.params, &state_now);
    }
  }
  log.flush();
  state.adam = adam.state();
  meta.step = state.step;
  const std::string final_path = (dir / "final.ptck").string();
  save_checkpoint(final_path, meta, state.params, &*state.adam);
  return final_path;
}

// ----------------------------------------------------------------------------

std::string_view to_string(Task task) {
  switch (task) {
    case Task::kRrc:
      return "rrc";
    case Task::kAe:
      return "ae";
    case Task::kAsc:
      return "asc";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view s) {
  if (s == "rrc") return Task::kRrc;
  if (s == "ae") return Task::kAe;
  if (s == "asc") return Task::kAsc;
  return std::nullopt;
}

void FineTuneConfig::validate() const {
  if (max_epochs == 0) throw InvalidArgument("max_epochs must be at least 1");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(learning_rate > 0.0)) {
    throw InvalidArgument("learning_rate must be positive");
  }
  if (max_len < 8) throw InvalidArgument("max_len must be at least 8");
  if (max_grad_norm < 0.0) {
    throw InvalidArgument("max_grad_norm must not be negative");
  }
}

std::size_t TaskData::size(Task task) const {
  switch (task) {
    case Task::kRrc:
      return rrc.size();
    case Task::kAe:
      return ae.size();
    case Task::kAsc:
      return asc.size();
  }
  return 0;
}

template <typename T>
std::vector<Tensor<T>> task_parameters(const ModelParameters<T>& params,
                                       Task task) {
  std::vector<std::string_view> heads;
  switch (task) {
    case Task::kRrc:
      heads = {"head.span_start.", "head.span_end."};
      break;
    case Task::kAe:
      heads = {"head.tag."};
      break;
    case Task::kAsc:
      heads = {"head.class."};
      break;
  }
  return filter_parameters<T>(params, [&](const std::string& name) {
    if (!starts_with(name, "head.")) return true;
    return std::any_of(heads.begin(), heads.end(),
                       [&](std::string_view h) { return starts_with(name, h); });
  });
}

template <typename T>
EvalReport evaluate_task(Task task, const ModelParameters<T>& params,
                         const ModelConfig& model_config,
                         const Vocabulary& vocab, const TaskData& data,
                         std::size_t max_len) {
  PredictOptions options;
  options.max_len = max_len;
  switch (task) {
    case Task::kRrc:
      return evaluate_rrc(params, model_config, vocab,
                          std::span<const MrcExample>(data.rrc), options);
    case Task::kAe:
      return evaluate_ae(params, model_config, vocab,
                         std::span<const BioExample>(data.ae), options);
    case Task::kAsc:
      return evaluate_asc(params, model_config, vocab,
                          std::span<const AscExample>(data.asc), options);
  }
  throw InvalidArgument("unknown task");
}

template <typename T>
FineTuneResult<T> finetune(const FineTuneConfig& config,
                           const ModelConfig& model_config,
                           const Vocabulary& vocab, ModelParameters<T> init,
                           const TaskData& train, const TaskData& valid,
                           const EpochCallback& on_epoch) {
  config.validate();
  const Task task = config.task;
  if (train.size(task) == 0) throw InvalidArgument("empty training set");
  if (valid.size(task) == 0) throw InvalidArgument("empty validation set");

  ModelParameters<T> params = std::move(init);
  std::vector<MrcFeature> rrc;
  std::vector<BioFeature> ae;
  std::vector<AscFeature> asc;
  std::size_t n = 0;
  switch (task) {
    case Task::kRrc:
      for (auto& f : featurize_mrc(vocab, train.rrc, config.max_len)) {
        if (f.has_answer) rrc.push_back(std::move(f));
      }
      if (rrc.empty()) {
        throw InvalidArgument("no training example keeps its answer at max_len " +
                              std::to_string(config.max_len));
      }
      n = rrc.size();
      break;
    case Task::kAe:
      ae = featurize_bio(vocab, train.ae, config.max_len);
      n = ae.size();
      break;
    case Task::kAsc:
      asc = featurize_asc(vocab, train.asc, config.max_len);
      n = asc.size();
      break;
  }

  auto batch_loss = [&](std::span<const std::size_t> idx,
                        const ForwardOptions& options) -> Tensor<T> {
    switch (task) {
      case Task::kRrc: {
        std::vector<const MrcFeature*> b;
        for (auto i : idx) b.push_back(&rrc[i]);
        return mrc_loss(params, model_config,
                        std::span<const MrcFeature* const>(b), options);
      }
      case Task::kAe: {
        std::vector<const BioFeature*> b;
        for (auto i : idx) b.push_back(&ae[i]);
        return ae_loss(params, model_config,
                       std::span<const BioFeature* const>(b), options);
      }
      case Task::kAsc: {
        std::vector<const AscFeature*> b;
        for (auto i : idx) b.push_back(&asc[i]);
        return asc_loss(params, model_config,
                        std::span<const AscFeature* const>(b), options);
      }
    }
    throw InvalidArgument("unknown task");
  };

  const auto trainable = task_parameters(params, task);
  AdamOptions adam_options;
  adam_options.learning_rate = config.learning_rate;
  Adam<T> adam(trainable, adam_options);

  FineTuneResult<T> result;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix(config.seed));
  std::vector<std::uint64_t> seeds;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochReport ep;
    ep.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const auto idx = std::span<const std::size_t>(order).subspan(start, end - start);
      seeds.clear();
      for (auto i : idx) seeds.push_back(example_seed(config.seed, epoch, 2, i));
      ForwardOptions options;
      options.train = config.dropout;
      options.example_seeds = seeds;
      params.zero_grad();
      const Tensor<T> loss = batch_loss(idx, options);
      const double value = value_of(loss);
      require_finite(value, "loss in epoch " + std::to_string(epoch));
      backward(loss);
      if (config.max_grad_norm > 0.0) {
        clip_gradients<T>(trainable, config.max_grad_norm);
      }
      adam.step();
      loss_sum += value * static_cast<double>(idx.size());
      ++ep.steps;
      ++result.steps;
    }
    ep.train_loss = loss_sum / static_cast<double>(n);
    ep.valid = evaluate_task(task, params, model_config, vocab, valid,
                             config.max_len);
    if (ep.valid.primary > best) {
      best = ep.valid.primary;
      result.best_epoch = epoch;
      result.best = ep.valid;
      result.params = params.clone();
    }
    result.epochs.push_back(ep);
    if (on_epoch) on_epoch(ep);
    if (config.stop_at_metric && ep.valid.primary >= *config.stop_at_metric) {
      break;
    }
  }
  return result;
}

std::vector<MetricSummary> summarize_reports(std::span<const EvalReport> runs) {
  std::vector<MetricSummary> out;
  if (runs.empty()) return out;
  for (const auto& [name, unused] : runs.front().metrics) {
    MetricSummary s;
    s.name = name;
    for (const auto& r : runs) s.values.push_back(r.metric(name));
    const double n = static_cast<double>(s.values.size());
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
    if (s.values.size() > 1) {
      double sq = 0.0;
      for (double v : s.values) sq += (v - s.mean) * (v - s.mean);
      s.stdev = std::sqrt(sq / (n - 1.0));
    }
    out.push_back(std::move(s));
  }
  return out;
}

#define POSTTRAIN_INSTANTIATE_TRAINING(T)                                     \
  template DkLoss<T> dk_loss(const ModelParameters<T>&, const ModelConfig&,   \
                             std::span<const DkExample* const>,               \
                             const ForwardOptions&, std::optional<double>);   \
  template Tensor<T> mrc_loss(const ModelParameters<T>&, const ModelConfig&,  \
                              std::span<const MrcFeature* const>,             \
                              const ForwardOptions&);                         \
  template Tensor<T> ae_loss(const ModelParameters<T>&, const ModelConfig&,   \
                             std::span<const BioFeature* const>,              \
                             const ForwardOptions&);                          \
  template Tensor<T> asc_loss(const ModelParameters<T>&, const ModelConfig&,  \
                              std::span<const AscFeature* const>,             \
                              const ForwardOptions&);                         \
  template StepReport accumulate_joint_gradients(                             \
      const ModelParameters<T>&, const ModelConfig&,                          \
      std::span<const DkExample* const>, std::span<const MrcFeature* const>,  \
      std::size_t, const StepSeeds&);                                         \
  template StepReport posttrain_step(                                         \
      ModelParameters<T>&, const ModelConfig&, Adam<T>&,                      \
      std::span<const DkExample* const>, std::span<const MrcFeature* const>,  \
      std::size_t, const StepSeeds&);                                         \
  template std::vector<Tensor<T>> posttrain_parameters(                       \
      const ModelParameters<T>&);                                             \
  template std::string posttrain_run(                                         \
      const PostTrainConfig&, const ModelConfig&, const Digest&,              \
      TrainingState<T>&, std::span<const DkExample>,                          \
      std::span<const MrcFeature>, const std::string&, const StepCallback&);  \
  template std::vector<Tensor<T>> task_parameters(const ModelParameters<T>&,  \
                                                  Task);                      \
  template EvalReport evaluate_task(Task, const ModelParameters<T>&,          \
                                    const ModelConfig&, const Vocabulary&,    \
                                    const TaskData&, std::size_t);            \
  template FineTuneResult<T> finetune(                                        \
      const FineTuneConfig&, const ModelConfig&, const Vocabulary&,           \
      ModelParameters<T>, const TaskData&, const TaskData&,                   \
      const EpochCallback&);

POSTTRAIN_INSTANTIATE_TRAINING(float)
POSTTRAIN_INSTANTIATE_TRAINING(double)

#undef POSTTRAIN_INSTANTIATE_TRAINING

}  // namespace posttrain
