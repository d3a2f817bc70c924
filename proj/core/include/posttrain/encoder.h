#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "posttrain/tensor.h"
#include "posttrain/tokenizer.h"

namespace posttrain {

struct ModelConfig {
  std::string preset = "tiny";
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 2;
  std::size_t feedforward_size = 256;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 512;
  std::size_t num_segments = 2;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-12;
  // Reuse the token embedding table as the MLM output projection.
  bool tie_mlm_weights = false;

  // "tiny", "small" or "base"; vocab_size is left for the caller.
  static ModelConfig from_preset(std::string_view name);
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view json);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParameters {
  Tensor<T> query_w, query_b, key_w, key_b, value_w, value_b;
  Tensor<T> output_w, output_b, attention_norm_gain, attention_norm_bias;
  Tensor<T> ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  Tensor<T> ff_norm_gain, ff_norm_bias;
};

// Every trainable weight. Dense weights are stored [in x out] so a layer is
// x . W + b.
template <typename T>
struct ModelParameters {
  Tensor<T> token_embedding;     // [vocab x hidden]
  Tensor<T> position_embedding;  // [max_positions x hidden]
  Tensor<T> segment_embedding;   // [num_segments x hidden]
  Tensor<T> embedding_norm_gain, embedding_norm_bias;
  std::vector<LayerParameters<T>> layers;

  Tensor<T> mlm_w, mlm_b;                // [hidden x vocab], [vocab]; w unset when tied
  Tensor<T> pair_w, pair_b;              // [hidden x 2], [2]
  Tensor<T> span_start_w, span_start_b;  // [hidden x 1], [1]
  Tensor<T> span_end_w, span_end_b;      // [hidden x 1], [1]
  Tensor<T> tag_w, tag_b;                // [hidden x 3], [3]
  Tensor<T> class_w, class_b;            // [hidden x 3], [3]

  // normal(0, 0.02) weights, zero biases, unit norm gains.
  static ModelParameters init(const ModelConfig& config, std::uint64_t seed);

  // Calls f(name, tensor) for every defined tensor in a fixed order.
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::vector<Tensor<T>> all() const;
  ModelParameters clone() const;
  void zero_grad();
  std::size_t count() const;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> hidden;  // [batch*length x hidden], one row per position
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> valid;  // batch*length

  // Row of each sequence's [CLS] position.
  std::vector<std::size_t> cls_rows() const;
};

struct ForwardOptions {
  bool train = false;
  // One seed per input sequence; dropout is drawn per sequence from these.
  std::span<const std::uint64_t> example_seeds;
  // Cut trailing columns that are padding in every sequence of the batch.
  bool trim_padding = true;
};

template <typename T>
EncoderOutput<T> forward(const ModelParameters<T>& params,
                         const ModelConfig& config,
                         std::span<const PackedInput* const> inputs,
                         const ForwardOptions& options = {});

template <typename T>
EncoderOutput<T> forward(const ModelParameters<T>& params,
                         const ModelConfig& config, const PackedInput& input,
                         const ForwardOptions& options = {});

// Start and end pointer distributions, each [batch x length]. Positions whose
// mask entry is 0 receive a -1e9 logit before the softmax.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> span_probs(
    const ModelParameters<T>& params, const EncoderOutput<T>& out,
    std::span<const std::vector<std::uint8_t>> answer_masks);

// BIO distribution per position, [batch*length x 3].
template <typename T>
Tensor<T> tag_probs(const ModelParameters<T>& params,
                    const EncoderOutput<T>& out);

// Polarity distribution from [CLS], [batch x 3].
template <typename T>
Tensor<T> class_probs(const ModelParameters<T>& params,
                      const EncoderOutput<T>& out);

// Vocabulary distribution at the given hidden rows, [rows x vocab].
template <typename T>
Tensor<T> mlm_probs(const ModelParameters<T>& params,
                    const EncoderOutput<T>& out,
                    std::span<const std::size_t> rows);

// Same-review / cross-review distribution from [CLS], [batch x 2].
template <typename T>
Tensor<T> pair_probs(const ModelParameters<T>& params,
                     const EncoderOutput<T>& out);

inline constexpr double kMaskedLogit = -1e9;

// ---------------------------------------------------------------------------

template <typename T>
template <typename F>
void ModelParameters<T>::visit(F&& f) {
  auto v = [&](const std::string& name, Tensor<T>& t) {
    if (t.defined()) f(name, t);
  };
  v("embeddings.token", token_embedding);
  v("embeddings.position", position_embedding);
  v("embeddings.segment", segment_embedding);
  v("embeddings.norm.gain", embedding_norm_gain);
  v("embeddings.norm.bias", embedding_norm_bias);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    v(p + "attention.query.w", l.query_w);
    v(p + "attention.query.b", l.query_b);
    v(p + "attention.key.w", l.key_w);
    v(p + "attention.key.b", l.key_b);
    v(p + "attention.value.w", l.value_w);
    v(p + "attention.value.b", l.value_b);
    v(p + "attention.output.w", l.output_w);
    v(p + "attention.output.b", l.output_b);
    v(p + "attention.norm.gain", l.attention_norm_gain);
    v(p + "attention.norm.bias", l.attention_norm_bias);
    v(p + "ff.in.w", l.ff_in_w);
    v(p + "ff.in.b", l.ff_in_b);
    v(p + "ff.out.w", l.ff_out_w);
    v(p + "ff.out.b", l.ff_out_b);
    v(p + "ff.norm.gain", l.ff_norm_gain);
    v(p + "ff.norm.bias", l.ff_norm_bias);
  }
  v("head.mlm.w", mlm_w);
  v("head.mlm.b", mlm_b);
  v("head.pair.w", pair_w);
  v("head.pair.b", pair_b);
  v("head.span_start.w", span_start_w);
  v("head.span_start.b", span_start_b);
  v("head.span_end.w", span_end_w);
  v("head.span_end.b", span_end_b);
  v("head.tag.w", tag_w);
  v("head.tag.b", tag_b);
  v("head.class.w", class_w);
  v("head.class.b", class_b);
}

template <typename T>
template <typename F>
void ModelParameters<T>::visit(F&& f) const {
  const_cast<ModelParameters*>(this)->visit(
      [&](const std::string& name, Tensor<T>& t) {
        f(name, static_cast<const Tensor<T>&>(t));
      });
}

extern template struct ModelParameters<float>;
extern template struct ModelParameters<double>;

}  // namespace posttrain
