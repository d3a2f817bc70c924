#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "posttrain/encoder.h"
#include "posttrain/ops.h"
#include "posttrain/tokenizer.h"
#include "posttrain/training.h"
#include "synthetic.h"

namespace pt = posttrain;

namespace {

const pt::Vocabulary& vocab() {
  static const pt::Vocabulary v = pt::synthetic::vocabulary();
  return v;
}

pt::Tensor<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return pt::Tensor<float>({rows, cols}, std::move(v));
}

pt::ModelConfig tiny_config() {
  auto c = pt::ModelConfig::from_preset("tiny");
  c.vocab_size = vocab().size();
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  pt::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(pt::ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Encode(benchmark::State& state) {
  const auto reviews = pt::synthetic::reviews(200, 3);
  std::size_t bytes = 0;
  for (const auto& r : reviews) bytes += r.text.size();
  for (auto _ : state) {
    for (const auto& r : reviews) benchmark::DoNotOptimize(pt::encode(vocab(), r.text));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_Encode);

// Inference forward pass of the tiny preset over a batch of packed reviews.
void BM_Forward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto config = tiny_config();
  const auto params = pt::ModelParameters<float>::init(config, 4);
  std::vector<pt::PackedInput> inputs;
  for (const auto& r : pt::synthetic::reviews(8, 5)) {
    inputs.push_back(pt::pack_single(pt::encode(vocab(), r.text), len));
  }
  std::vector<const pt::PackedInput*> batch;
  for (const auto& in : inputs) batch.push_back(&in);
  pt::ForwardOptions o;
  o.trim_padding = false;
  pt::NoGradGuard no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        pt::forward(params, config, std::span<const pt::PackedInput* const>(batch), o));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

// One joint step: 16 DK plus 16 MRC examples split into u sub-batches.
void BM_PosttrainStep(benchmark::State& state) {
  const auto u = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t kMaxLen = 64;
  constexpr std::size_t kBatch = 16;
  const auto config = tiny_config();
  auto params = pt::ModelParameters<float>::init(config, 6);
  pt::DkOptions dk_options;
  dk_options.max_len = kMaxLen;
  dk_options.duplicate_factor = 1;
  const auto dk = pt::make_dk_examples(pt::synthetic::reviews(kBatch, 7), vocab(), dk_options);
  std::vector<pt::MrcFeature> mrc;
  for (auto& f : pt::featurize_mrc(vocab(), pt::synthetic::general_questions(64, 8), kMaxLen)) {
    if (f.has_answer && mrc.size() < kBatch) mrc.push_back(std::move(f));
  }
  std::vector<const pt::DkExample*> dk_batch;
  for (std::size_t i = 0; i < kBatch; ++i) dk_batch.push_back(&dk[i % dk.size()]);
  std::vector<const pt::MrcFeature*> mrc_batch;
  for (const auto& f : mrc) mrc_batch.push_back(&f);

  pt::AdamOptions adam_options;
  adam_options.learning_rate = 1e-4;
  pt::Adam<float> adam(pt::posttrain_parameters(params), adam_options);
  pt::StepSeeds seeds;
  for (auto _ : state) {
    ++seeds.step;
    benchmark::DoNotOptimize(pt::posttrain_step(params, config, adam,
                                                std::span<const pt::DkExample* const>(dk_batch),
                                                std::span<const pt::MrcFeature* const>(mrc_batch),
                                                u, seeds));
  }
}
BENCHMARK(BM_PosttrainStep)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
