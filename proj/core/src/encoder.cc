#include "posttrain/encoder.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"
#include "posttrain/error.h"
#include "posttrain/ops.h"

namespace posttrain {
namespace {

constexpr double kInitStd = 0.02;

std::uint64_t site_seed(std::uint64_t example_seed, std::uint64_t site) {
  std::uint64_t x = example_seed ^ (site * 0x9E3779B97F4A7C15ull);
  x = (x ^ (x >> 33)) * 0xFF51AFD7ED558CCDull;
  x = (x ^ (x >> 33)) * 0xC4CEB9FE1A85EC53ull;
  return x ^ (x >> 33);
}

// Hands out per-sequence dropout seeds for successive dropout sites.
class DropoutSchedule {
 public:
  DropoutSchedule(const ForwardOptions& options, double rate)
      : options_(options), rate_(options.train ? rate : 0.0) {}

  template <typename T>
  Tensor<T> apply(const Tensor<T>& x) {
    if (rate_ <= 0.0) return x;
    seeds_.clear();
    for (auto s : options_.example_seeds) seeds_.push_back(site_seed(s, site_));
    ++site_;
    return ops::dropout(x, rate_, seeds_);
  }

 private:
  const ForwardOptions& options_;
  double rate_;
  std::uint64_t site_ = 1;
  std::vector<std::uint64_t> seeds_;
};

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return ops::add_bias(ops::matmul(x, w), b);
}

}  // namespace

ModelConfig ModelConfig::from_preset(std::string_view name) {
  ModelConfig c;
  c.preset = std::string(name);
  if (name == "tiny") {
    c.num_layers = 2;
    c.hidden_size = 64;
    c.num_heads = 2;
    c.feedforward_size = 256;
  } else if (name == "small") {
    c.num_layers = 4;
    c.hidden_size = 128;
    c.num_heads = 4;
    c.feedforward_size = 512;
  } else if (name == "base") {
    c.num_layers = 12;
    c.hidden_size = 768;
    c.num_heads = 12;
    c.feedforward_size = 3072;
  } else {
    throw InvalidArgument("unknown model preset '" + std::string(name) +
                          "' (expected tiny, small or base)");
  }
  return c;
}

void ModelConfig::validate() const {
  if (num_layers == 0) throw InvalidArgument("num_layers must be positive");
  if (hidden_size == 0 || num_heads == 0 || hidden_size % num_heads != 0) {
    throw InvalidArgument("hidden_size must be a positive multiple of num_heads");
  }
  if (feedforward_size == 0) {
    throw InvalidArgument("feedforward_size must be positive");
  }
  if (vocab_size <= static_cast<std::size_t>(kNumSpecialTokens)) {
    throw InvalidArgument("vocab_size must exceed the special tokens");
  }
  if (max_positions < 2) throw InvalidArgument("max_positions too small");
  if (num_segments != 2) throw InvalidArgument("num_segments must be 2");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw InvalidArgument("dropout_rate must be in [0, 1)");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {
      {"preset", preset},
      {"num_layers", num_layers},
      {"hidden_size", hidden_size},
      {"num_heads", num_heads},
      {"feedforward_size", feedforward_size},
      {"vocab_size", vocab_size},
      {"max_positions", max_positions},
      {"num_segments", num_segments},
      {"dropout_rate", dropout_rate},
      {"layer_norm_eps", layer_norm_eps},
      {"tie_mlm_weights", tie_mlm_weights},
  };
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) {
      throw DataError(std::string("model config missing field '") + key + "'");
    }
    j.at(key).get_to(field);
  };
  try {
    get("preset", c.preset);
    get("num_layers", c.num_layers);
    get("hidden_size", c.hidden_size);
    get("num_heads", c.num_heads);
    get("feedforward_size", c.feedforward_size);
    get("vocab_size", c.vocab_size);
    get("max_positions", c.max_positions);
    get("num_segments", c.num_segments);
    get("dropout_rate", c.dropout_rate);
    get("layer_norm_eps", c.layer_norm_eps);
    get("tie_mlm_weights", c.tie_mlm_weights);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config has a mistyped field: ") +
                    e.what());
  }
  return c;
}

template <typename T>
ModelParameters<T> ModelParameters<T>::init(const ModelConfig& config,
                                            std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  auto weight = [&](std::size_t rows, std::size_t cols) {
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = static_cast<T>(normal(rng));
    return Tensor<T>({rows, cols}, std::move(v), true);
  };
  auto zeros = [](std::size_t n) { return Tensor<T>::zeros({n}, true); };
  auto ones = [](std::size_t n) { return Tensor<T>::full({n}, T(1), true); };

  const std::size_t h = config.hidden_size;
  const std::size_t ff = config.feedforward_size;
  ModelParameters p;
  p.token_embedding = weight(config.vocab_size, h);
  p.position_embedding = weight(config.max_positions, h);
  p.segment_embedding = weight(config.num_segments, h);
  p.embedding_norm_gain = ones(h);
  p.embedding_norm_bias = zeros(h);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    LayerParameters<T> l;
    l.query_w = weight(h, h);
    l.query_b = zeros(h);
    l.key_w = weight(h, h);
    l.key_b = zeros(h);
    l.value_w = weight(h, h);
    l.value_b = zeros(h);
    l.output_w = weight(h, h);
    l.output_b = zeros(h);
    l.attention_norm_gain = ones(h);
    l.attention_norm_bias = zeros(h);
    l.ff_in_w = weight(h, ff);
    l.ff_in_b = zeros(ff);
    l.ff_out_w = weight(ff, h);
    l.ff_out_b = zeros(h);
    l.ff_norm_gain = ones(h);
    l.ff_norm_bias = zeros(h);
    p.layers.push_back(std::move(l));
  }
  if (!config.tie_mlm_weights) p.mlm_w = weight(h, config.vocab_size);
  p.mlm_b = zeros(config.vocab_size);
  p.pair_w = weight(h, 2);
  p.pair_b = zeros(2);
  p.span_start_w = weight(h, 1);
  p.span_start_b = zeros(1);
  p.span_end_w = weight(h, 1);
  p.span_end_b = zeros(1);
  p.tag_w = weight(h, 3);
  p.tag_b = zeros(3);
  p.class_w = weight(h, 3);
  p.class_b = zeros(3);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParameters<T>::named()
    const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit([&](const std::string& name, const Tensor<T>& t) {
    out.emplace_back(name, t);
  });
  return out;
}

template <typename T>
std::vector<Tensor<T>> ModelParameters<T>::all() const {
  std::vector<Tensor<T>> out;
  visit([&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
  return out;
}

template <typename T>
ModelParameters<T> ModelParameters<T>::clone() const {
  ModelParameters copy = *this;
  copy.visit([](const std::string&, Tensor<T>& t) { t = t.clone(); });
  return copy;
}

template <typename T>
void ModelParameters<T>::zero_grad() {
  visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

template <typename T>
std::size_t ModelParameters<T>::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
std::vector<std::size_t> EncoderOutput<T>::cls_rows() const {
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * length;
  return rows;
}

template <typename T>
EncoderOutput<T> forward(const ModelParameters<T>& params,
                         const ModelConfig& config,
                         std::span<const PackedInput* const> inputs,
                         const ForwardOptions& options) {
  if (inputs.empty()) throw InvalidArgument("forward: empty batch");
  if (options.train && config.dropout_rate > 0.0 &&
      options.example_seeds.size() != inputs.size()) {
    throw InvalidArgument("forward: training needs one seed per sequence");
  }
  std::size_t len = 0;
  for (const auto* in : inputs) {
    std::size_t used = in->length();
    if (options.trim_padding) {
      while (used > 0 && !in->valid[used - 1]) --used;
    }
    len = std::max(len, used);
  }
  if (len == 0) throw InvalidArgument("forward: empty input");
  if (len > config.max_positions) {
    throw InvalidArgument("input length " + std::to_string(len) +
                          " exceeds max_positions " +
                          std::to_string(config.max_positions));
  }

  const std::size_t batch = inputs.size();
  std::vector<std::int32_t> ids(batch * len, kPadId);
  std::vector<std::int32_t> segments(batch * len, 0);
  std::vector<std::int32_t> positions(batch * len);
  std::vector<std::uint8_t> valid(batch * len, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& in = *inputs[b];
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t r = b * len + i;
      positions[r] = static_cast<std::int32_t>(i);
      if (i >= in.length()) continue;
      if (in.ids[i] < 0 ||
          static_cast<std::size_t>(in.ids[i]) >= config.vocab_size) {
        throw InvalidArgument("token id " + std::to_string(in.ids[i]) +
                              " outside vocabulary of size " +
                              std::to_string(config.vocab_size));
      }
      ids[r] = in.ids[i];
      segments[r] = in.segments[i];
      valid[r] = in.valid[i];
    }
  }

  DropoutSchedule drop(options, config.dropout_rate);
  const T eps = static_cast<T>(config.layer_norm_eps);
  Tensor<T> x = ops::add(
      ops::add(ops::embedding(params.token_embedding, ids),
               ops::embedding(params.position_embedding, positions)),
      ops::embedding(params.segment_embedding, segments));
  x = drop.apply(ops::layer_norm(x, params.embedding_norm_gain,
                                 params.embedding_norm_bias, eps));

  for (const auto& l : params.layers) {
    Tensor<T> q = dense(x, l.query_w, l.query_b);
    // Adding the key bias shifts every score in a row by the same amount, so
    // its exact gradient is zero. Keep it out of the graph so float rounding
    // noise never reaches the optimizer.
    Tensor<T> k = dense(x, l.key_w, l.key_b.detach());
    Tensor<T> v = dense(x, l.value_w, l.value_b);
    Tensor<T> a = ops::attention(q, k, v, valid, batch, config.num_heads);
    a = drop.apply(dense(a, l.output_w, l.output_b));
    x = ops::layer_norm(ops::add(x, a), l.attention_norm_gain,
                        l.attention_norm_bias, eps);
    Tensor<T> f = ops::gelu(dense(x, l.ff_in_w, l.ff_in_b));
    f = drop.apply(dense(f, l.ff_out_w, l.ff_out_b));
    x = ops::layer_norm(ops::add(x, f), l.ff_norm_gain, l.ff_norm_bias, eps);
  }

  EncoderOutput<T> out;
  out.hidden = std::move(x);
  out.batch = batch;
  out.length = len;
  out.valid = std::move(valid);
  return out;
}

template <typename T>
EncoderOutput<T> forward(const ModelParameters<T>& params,
                         const ModelConfig& config, const PackedInput& input,
                         const ForwardOptions& options) {
  const PackedInput* ptr = &input;
  return forward(params, config, std::span<const PackedInput* const>(&ptr, 1),
                 options);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> span_probs(
    const ModelParameters<T>& params, const EncoderOutput<T>& out,
    std::span<const std::vector<std::uint8_t>> answer_masks) {
  if (answer_masks.size() != out.batch) {
    throw InvalidArgument("span_probs: one answer mask per sequence required");
  }
  std::vector<T> additive(out.batch * out.length, static_cast<T>(kMaskedLogit));
  for (std::size_t b = 0; b < out.batch; ++b) {
    bool any = false;
    const auto& m = answer_masks[b];
    for (std::size_t i = 0; i < out.length && i < m.size(); ++i) {
      if (m[i] && out.valid[b * out.length + i]) {
        additive[b * out.length + i] = T(0);
        any = true;
      }
    }
    if (!any) throw InvalidArgument("empty valid region");
  }
  const Tensor<T> mask({out.batch, out.length}, std::move(additive));
  // Same for the scalar span biases: the softmax runs along the sequence, so
  // they cancel and have zero gradient.
  auto pointer = [&](const Tensor<T>& w, const Tensor<T>& b) {
    Tensor<T> logits = ops::reshape(dense(out.hidden, w, b.detach()),
                                    Shape{out.batch, out.length});
    return ops::softmax_rows(ops::add(logits, mask));
  };
  return {pointer(params.span_start_w, params.span_start_b),
          pointer(params.span_end_w, params.span_end_b)};
}

template <typename T>
Tensor<T> tag_probs(const ModelParameters<T>& params,
                    const EncoderOutput<T>& out) {
  return ops::softmax_rows(dense(out.hidden, params.tag_w, params.tag_b));
}

template <typename T>
Tensor<T> class_probs(const ModelParameters<T>& params,
                      const EncoderOutput<T>& out) {
  const auto rows = out.cls_rows();
  return ops::softmax_rows(
      dense(ops::gather_rows(out.hidden, rows), params.class_w, params.class_b));
}

template <typename T>
Tensor<T> mlm_probs(const ModelParameters<T>& params,
                    const EncoderOutput<T>& out,
                    std::span<const std::size_t> rows) {
  Tensor<T> picked = ops::gather_rows(out.hidden, rows);
  Tensor<T> logits = params.mlm_w.defined()
                         ? ops::matmul(picked, params.mlm_w)
                         : ops::matmul_transposed(picked, params.token_embedding);
  return ops::softmax_rows(ops::add_bias(logits, params.mlm_b));
}

template <typename T>
Tensor<T> pair_probs(const ModelParameters<T>& params,
                     const EncoderOutput<T>& out) {
  const auto rows = out.cls_rows();
  return ops::softmax_rows(
      dense(ops::gather_rows(out.hidden, rows), params.pair_w, params.pair_b));
}

#define POSTTRAIN_INSTANTIATE_ENCODER(T)                                      \
  template struct ModelParameters<T>;                                         \
  template struct EncoderOutput<T>;                                           \
  template EncoderOutput<T> forward(const ModelParameters<T>&,                \
                                    const ModelConfig&,                       \
                                    std::span<const PackedInput* const>,      \
                                    const ForwardOptions&);                   \
  template EncoderOutput<T> forward(const ModelParameters<T>&,                \
                                    const ModelConfig&, const PackedInput&,   \
                                    const ForwardOptions&);                   \
  template std::pair<Tensor<T>, Tensor<T>> span_probs(                        \
      const ModelParameters<T>&, const EncoderOutput<T>&,                     \
      std::span<const std::vector<std::uint8_t>>);                            \
  template Tensor<T> tag_probs(const ModelParameters<T>&,                     \
                               const EncoderOutput<T>&);                      \
  template Tensor<T> class_probs(const ModelParameters<T>&,                   \
                                 const EncoderOutput<T>&);                    \
  template Tensor<T> mlm_probs(const ModelParameters<T>&,                     \
                               const EncoderOutput<T>&,                       \
                               std::span<const std::size_t>);                 \
  template Tensor<T> pair_probs(const ModelParameters<T>&,                    \
                                const EncoderOutput<T>&);

POSTTRAIN_INSTANTIATE_ENCODER(float)
POSTTRAIN_INSTANTIATE_ENCODER(double)

#undef POSTTRAIN_INSTANTIATE_ENCODER

}  // namespace posttrain
