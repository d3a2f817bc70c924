#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "posttrain/corpus.h"

namespace posttrain {

// SQuAD 1.1 answer normalization: lowercase, drop ASCII punctuation, drop the
// articles a/an/the as whole words, collapse whitespace.
//
// Punctuation removal is ASCII-only, so non-ASCII punctuation survives, as in
// the reference scorer. Lowercasing covers ASCII and the common European
// scripts (see text::simple_lower).
std::string normalize_answer(std::string_view s);

struct SpanScore {
  double exact_match = 0.0;  // 0 or 1
  double f1 = 0.0;           // [0, 1]
};

// Best exact match and best token F1 over `golds` (each maximized
// separately). Token overlap is a multiset intersection.
SpanScore em_f1(std::string_view prediction, std::span<const std::string> golds);

struct GoldQuestion {
  std::string id;
  std::vector<std::string> answers;
};

std::vector<GoldQuestion> gold_questions(std::span<const MrcExample> examples);

struct EvalReport {
  std::string task;
  std::string primary_metric;
  double primary = 0.0;
  // Rates in [0, 100], in report order.
  std::vector<std::pair<std::string, double>> metrics;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;

  double metric(std::string_view name) const;
  // Metric keys only, values rounded to two decimals.
  std::string to_json() const;
};

// EM and F1 in percent; a question with no prediction scores 0 and counts
// as skipped.
EvalReport squad_eval(const std::map<std::string, std::string>& predictions,
                      std::span<const GoldQuestion> golds);

// Inclusive word range of an aspect chunk.
struct ChunkSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  auto operator<=>(const ChunkSpan&) const = default;
};

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Exact-boundary chunk matching per sentence. Fractions in [0, 1]; zero
// denominators give 0.
PrecisionRecall chunk_f1(std::span<const std::vector<ChunkSpan>> predicted,
                         std::span<const std::vector<ChunkSpan>> gold);

EvalReport chunk_report(const PrecisionRecall& prf, std::size_t sentences);

struct AccuracyMacroF1 {
  double accuracy = 0.0;  // percent
  double macro_f1 = 0.0;  // percent
};

// Macro-F1 averages all three polarity classes; a class absent from both
// predictions and golds contributes 0.
AccuracyMacroF1 acc_macro_f1(std::span<const Polarity> predicted,
                             std::span<const Polarity> gold);

EvalReport polarity_report(const AccuracyMacroF1& scores, std::size_t count);

}  // namespace posttrain
