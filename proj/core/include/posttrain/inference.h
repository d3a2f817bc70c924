#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posttrain/corpus.h"
#include "posttrain/encoder.h"
#include "posttrain/metrics.h"
#include "posttrain/tokenizer.h"

namespace posttrain {

struct SpanPrediction {
  std::int32_t start = 0;
  std::int32_t end = 0;
  // Substring of the document covered by tokens start..end.
  std::string text;
  double score = 0.0;  // l1[start] * l2[end]
};

// Greedy pointer decoding: start is the argmax over document tokens, then
// end is the argmax over document tokens at or after start. Specials and
// padding are never chosen; ties go to the lowest index. `l1` and `l2` may be
// shorter than the input (trimmed padding).
SpanPrediction decode_span(std::span<const double> l1,
                           std::span<const double> l2,
                           const PackedInput& input, std::string_view document);

// Chunks from word labels; an I with no open chunk starts one.
std::vector<ChunkSpan> chunks_from_labels(std::span<const BioLabel> labels);

// Word labels read at each word's first piece ([positions x 3] row-major
// scores); words cut off by truncation are labelled O.
std::vector<BioLabel> decode_word_labels(std::span<const double> l3,
                                         const PackedInput& input,
                                         std::size_t num_words);

std::vector<ChunkSpan> decode_bio(std::span<const double> l3,
                                  const PackedInput& input,
                                  std::size_t num_words);

// Argmax with ties broken positive < negative < neutral.
Polarity predict_polarity(std::span<const double> l4);

struct PredictOptions {
  std::size_t max_len = 320;
  std::size_t batch_size = 32;
};

template <typename T>
std::map<std::string, std::string> predict_rrc(
    const ModelParameters<T>& params, const ModelConfig& config,
    const Vocabulary& vocab, std::span<const MrcExample> examples,
    const PredictOptions& options = {});

template <typename T>
std::vector<std::vector<ChunkSpan>> predict_ae(
    const ModelParameters<T>& params, const ModelConfig& config,
    const Vocabulary& vocab, std::span<const BioExample> examples,
    const PredictOptions& options = {});

template <typename T>
std::vector<Polarity> predict_asc(const ModelParameters<T>& params,
                                  const ModelConfig& config,
                                  const Vocabulary& vocab,
                                  std::span<const AscExample> examples,
                                  const PredictOptions& options = {});

std::vector<std::vector<ChunkSpan>> gold_chunks(
    std::span<const BioExample> examples);

template <typename T>
EvalReport evaluate_rrc(const ModelParameters<T>& params,
                        const ModelConfig& config, const Vocabulary& vocab,
                        std::span<const MrcExample> examples,
                        const PredictOptions& options = {});

template <typename T>
EvalReport evaluate_ae(const ModelParameters<T>& params,
                       const ModelConfig& config, const Vocabulary& vocab,
                       std::span<const BioExample> examples,
                       const PredictOptions& options = {});

template <typename T>
EvalReport evaluate_asc(const ModelParameters<T>& params,
                        const ModelConfig& config, const Vocabulary& vocab,
                        std::span<const AscExample> examples,
                        const PredictOptions& options = {});

}  // namespace posttrain
