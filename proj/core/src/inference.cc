#include "posttrain/inference.h"

#include <algorithm>

#include "posttrain/error.h"
#include "posttrain/tensor.h"

namespace posttrain {
namespace {

bool is_document_position(const PackedInput& input, std::size_t i) {
  return i < input.length() && input.valid[i] &&
         input.sides[i] == Side::kRight &&
         static_cast<std::int32_t>(i) > input.sep_index &&
         static_cast<std::int32_t>(i) < input.final_sep_index;
}

std::size_t argmax3(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

template <typename T>
std::vector<double> to_double(std::span<const T> values) {
  return std::vector<double>(values.begin(), values.end());
}

// Runs `fn(batch_start, batch_inputs)` over consecutive slices.
template <typename F>
void for_batches(std::size_t n, std::size_t batch_size, F&& fn) {
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  for (std::size_t start = 0; start < n; start += batch_size) {
    fn(start, std::min(n, start + batch_size));
  }
}

}  // namespace

SpanPrediction decode_span(std::span<const double> l1,
                           std::span<const double> l2,
                           const PackedInput& input,
                           std::string_view document) {
  const std::size_t n = std::min({l1.size(), l2.size(), input.length()});
  std::size_t s = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_document_position(input, i)) continue;
    if (s == n || l1[i] > l1[s]) s = i;
  }
  if (s == n) throw InvalidArgument("empty document");
  std::size_t e = s;
  for (std::size_t j = s + 1; j < n; ++j) {
    if (is_document_position(input, j) && l2[j] > l2[e]) e = j;
  }
  SpanPrediction out;
  out.start = static_cast<std::int32_t>(s);
  out.end = static_cast<std::int32_t>(e);
  out.score = l1[s] * l2[e];
  const std::size_t begin = input.offsets[s].begin;
  const std::size_t end = input.offsets[e].end;
  if (end > document.size() || begin > end) {
    throw InvalidArgument("decode_span: offsets outside the document");
  }
  out.text = std::string(document.substr(begin, end - begin));
  return out;
}

std::vector<ChunkSpan> chunks_from_labels(std::span<const BioLabel> labels) {
  std::vector<ChunkSpan> chunks;
  bool open = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    switch (labels[i]) {
      case BioLabel::kBegin:
        chunks.push_back({i, i});
        open = true;
        break;
      case BioLabel::kInside:
        if (open) {
          chunks.back().end = i;
        } else {
          chunks.push_back({i, i});
          open = true;
        }
        break;
      case BioLabel::kOutside:
        open = false;
        break;
    }
  }
  return chunks;
}

std::vector<BioLabel> decode_word_labels(std::span<const double> l3,
                                         const PackedInput& input,
                                         std::size_t num_words) {
  std::vector<BioLabel> labels(num_words, BioLabel::kOutside);
  const std::size_t n = std::min(l3.size() / 3, input.length());
  std::int32_t previous = -1;
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (input.sides[pos] == Side::kNone || !input.valid[pos]) continue;
    const std::int32_t w = input.words[pos];
    if (w != previous && w >= 0 && static_cast<std::size_t>(w) < num_words) {
      labels[w] = static_cast<BioLabel>(argmax3(l3.subspan(pos * 3, 3)));
    }
    previous = w;
  }
  return labels;
}

std::vector<ChunkSpan> decode_bio(std::span<const double> l3,
                                  const PackedInput& input,
                                  std::size_t num_words) {
  const auto labels = decode_word_labels(l3, input, num_words);
  return chunks_from_labels(labels);
}

Polarity predict_polarity(std::span<const double> l4) {
  if (l4.size() != 3) {
    throw InvalidArgument("predict_polarity expects 3 scores");
  }
  return static_cast<Polarity>(argmax3(l4));
}

template <typename T>
std::map<std::string, std::string> predict_rrc(
    const ModelParameters<T>& params, const ModelConfig& config,
    const Vocabulary& vocab, std::span<const MrcExample> examples,
    const PredictOptions& options) {
  NoGradGuard no_grad;
  const auto features = featurize_mrc(vocab, examples, options.max_len);
  std::map<std::string, std::string> out;
  for_batches(features.size(), options.batch_size, [&](std::size_t a,
                                                       std::size_t b) {
    std::vector<const PackedInput*> inputs;
    std::vector<std::vector<std::uint8_t>> masks;
    for (std::size_t i = a; i < b; ++i) {
      inputs.push_back(&features[i].input);
      masks.push_back(features[i].input.right_side_mask());
    }
    const auto enc = forward(params, config, inputs);
    const auto [l1, l2] = span_probs(params, enc, masks);
    const auto p1 = to_double<T>(l1.data());
    const auto p2 = to_double<T>(l2.data());
    const std::size_t len = enc.length;
    for (std::size_t i = a; i < b; ++i) {
      const std::size_t row = (i - a) * len;
      const auto& f = features[i];
      const auto pred =
          decode_span(std::span<const double>(p1).subspan(row, len),
                      std::span<const double>(p2).subspan(row, len), f.input,
                      examples[f.example].context);
      out[f.id] = pred.text;
    }
  });
  return out;
}

template <typename T>
std::vector<std::vector<ChunkSpan>> predict_ae(
    const ModelParameters<T>& params, const ModelConfig& config,
    const Vocabulary& vocab, std::span<const BioExample> examples,
    const PredictOptions& options) {
  NoGradGuard no_grad;
  const auto features = featurize_bio(vocab, examples, options.max_len);
  std::vector<std::vector<ChunkSpan>> out(features.size());
  for_batches(features.size(), options.batch_size, [&](std::size_t a,
                                                       std::size_t b) {
    std::vector<const PackedInput*> inputs;
    for (std::size_t i = a; i < b; ++i) inputs.push_back(&features[i].input);
    const auto enc = forward(params, config, inputs);
    const auto probs = to_double<T>(tag_probs(params, enc).data());
    const std::size_t len = enc.length;
    for (std::size_t i = a; i < b; ++i) {
      const auto rows =
          std::span<const double>(probs).subspan((i - a) * len * 3, len * 3);
      out[i] = decode_bio(rows, features[i].input,
                          examples[features[i].example].words.size());
    }
  });
  return out;
}

template <typename T>
std::vector<Polarity> predict_asc(const ModelParameters<T>& params,
                                  const ModelConfig& config,
                                  const Vocabulary& vocab,
                                  std::span<const AscExample> examples,
                                  const PredictOptions& options) {
  NoGradGuard no_grad;
  const auto features = featurize_asc(vocab, examples, options.max_len);
  std::vector<Polarity> out(features.size());
  for_batches(features.size(), options.batch_size, [&](std::size_t a,
                                                       std::size_t b) {
    std::vector<const PackedInput*> inputs;
    for (std::size_t i = a; i < b; ++i) inputs.push_back(&features[i].input);
    const auto enc = forward(params, config, inputs);
    const auto probs = to_double<T>(class_probs(params, enc).data());
    for (std::size_t i = a; i < b; ++i) {
      out[i] = predict_polarity(
          std::span<const double>(probs).subspan((i - a) * 3, 3));
    }
  });
  return out;
}

std::vector<std::vector<ChunkSpan>> gold_chunks(
    std::span<const BioExample> examples) {
  std::vector<std::vector<ChunkSpan>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(chunks_from_labels(ex.labels));
  return out;
}

template <typename T>
EvalReport evaluate_rrc(const ModelParameters<T>& params,
                        const ModelConfig& config, const Vocabulary& vocab,
                        std::span<const MrcExample> examples,
                        const PredictOptions& options) {
  const auto predictions = predict_rrc(params, config, vocab, examples, options);
  const auto golds = gold_questions(examples);
  return squad_eval(predictions, golds);
}

template <typename T>
EvalReport evaluate_ae(const ModelParameters<T>& params,
                       const ModelConfig& config, const Vocabulary& vocab,
                       std::span<const BioExample> examples,
                       const PredictOptions& options) {
  const auto predicted = predict_ae(params, config, vocab, examples, options);
  const auto gold = gold_chunks(examples);
  return chunk_report(chunk_f1(predicted, gold), examples.size());
}

template <typename T>
EvalReport evaluate_asc(const ModelParameters<T>& params,
                        const ModelConfig& config, const Vocabulary& vocab,
                        std::span<const AscExample> examples,
                        const PredictOptions& options) {
  const auto predicted = predict_asc(params, config, vocab, examples, options);
  std::vector<Polarity> gold;
  gold.reserve(examples.size());
  for (const auto& ex : examples) gold.push_back(ex.polarity);
  return polarity_report(acc_macro_f1(predicted, gold), examples.size());
}

#define POSTTRAIN_INSTANTIATE_INFERENCE(T)                                    \
  template std::map<std::string, std::string> predict_rrc(                    \
      const ModelParameters<T>&, const ModelConfig&, const Vocabulary&,       \
      std::span<const MrcExample>, const PredictOptions&);                    \
  template std::vector<std::vector<ChunkSpan>> predict_ae(                    \
      const ModelParameters<T>&, const ModelConfig&, const Vocabulary&,       \
      std::span<const BioExample>, const PredictOptions&);                    \
  template std::vector<Polarity> predict_asc(                                 \
      const ModelParameters<T>&, const ModelConfig&, const Vocabulary&,       \
      std::span<const AscExample>, const PredictOptions&);                    \
  template EvalReport evaluate_rrc(const ModelParameters<T>&,                 \
                                   const ModelConfig&, const Vocabulary&,     \
                                   std::span<const MrcExample>,               \
                                   const PredictOptions&);                    \
  template EvalReport evaluate_ae(const ModelParameters<T>&,                  \
                                  const ModelConfig&, const Vocabulary&,      \
                                  std::span<const BioExample>,                \
                                  const PredictOptions&);                     \
  template EvalReport evaluate_asc(const ModelParameters<T>&,                 \
                                   const ModelConfig&, const Vocabulary&,     \
                                   std::span<const AscExample>,               \
                                   const PredictOptions&);

POSTTRAIN_INSTANTIATE_INFERENCE(float)
POSTTRAIN_INSTANTIATE_INFERENCE(double)

#undef POSTTRAIN_INSTANTIATE_INFERENCE

}  // namespace posttrain
