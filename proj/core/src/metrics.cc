#include "posttrain/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <unordered_map>

#include "json.hpp"
#include "posttrain/error.h"
#include "posttrain/text_util.h"

namespace posttrain {
namespace {

constexpr std::string_view kAsciiPunctuation =
    "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

// Whitespace as understood by Python's str.split().
bool is_py_space(char32_t cp) {
  if (cp == ' ' || (cp >= 0x09 && cp <= 0x0D) || (cp >= 0x1C && cp <= 0x1F)) {
    return true;
  }
  return cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 ||
         cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

// Approximates Python's Unicode \w: ASCII alphanumerics, underscore, and
// non-ASCII code points outside the common symbol and punctuation blocks.
bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') ||
           (cp >= '0' && cp <= '9') || cp == '_';
  }
  if (is_py_space(cp)) return false;
  if (cp >= 0xA1 && cp <= 0xBF) {
    return cp == 0xAA || cp == 0xB2 || cp == 0xB3 || cp == 0xB5 ||
           cp == 0xB9 || cp == 0xBA || cp == 0xBC || cp == 0xBD || cp == 0xBE;
  }
  if (cp == 0xD7 || cp == 0xF7) return false;
  if (cp >= 0x2010 && cp <= 0x2027) return false;
  if (cp >= 0x2030 && cp <= 0x205E) return false;
  if (cp >= 0x20A0 && cp <= 0x20CF) return false;
  if (cp >= 0x2190 && cp <= 0x2BFF) return false;
  if (cp >= 0x3001 && cp <= 0x303F) return false;
  if (cp >= 0xFF01 && cp <= 0xFF0F) return false;
  return true;
}

std::vector<std::string> python_split(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t start = pos;
    const char32_t cp = text::next_code_point(s, pos);
    if (is_py_space(cp)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.append(s.substr(start, pos - start));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

double token_f1(const std::vector<std::string>& pred,
                const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int same = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  const double precision = static_cast<double>(same) / pred.size();
  const double recall = static_cast<double>(same) / gold.size();
  return 2.0 * precision * recall / (precision + recall);
}

double harmonic(double p, double r) {
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

std::string normalize_answer(std::string_view s) {
  std::string lowered = text::unicode_lower(s);
  std::string no_punct;
  no_punct.reserve(lowered.size());
  for (char c : lowered) {
    if (kAsciiPunctuation.find(c) == std::string_view::npos) no_punct.push_back(c);
  }

  // Articles are whole runs of word characters equal to a/an/the; each is
  // replaced by a single space.
  std::string no_articles;
  no_articles.reserve(no_punct.size());
  std::size_t pos = 0;
  while (pos < no_punct.size()) {
    std::size_t start = pos;
    char32_t cp = text::next_code_point(no_punct, pos);
    if (!is_word_char(cp)) {
      no_articles.append(no_punct, start, pos - start);
      continue;
    }
    std::size_t end = pos;
    while (end < no_punct.size()) {
      std::size_t probe = end;
      if (!is_word_char(text::next_code_point(no_punct, probe))) break;
      end = probe;
    }
    const std::string_view run(no_punct.data() + start, end - start);
    if (run == "a" || run == "an" || run == "the") {
      no_articles.push_back(' ');
    } else {
      no_articles.append(run);
    }
    pos = end;
  }

  std::string out;
  for (const auto& tok : python_split(no_articles)) {
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
  }
  return out;
}

SpanScore em_f1(std::string_view prediction,
                std::span<const std::string> golds) {
  if (golds.empty()) throw InvalidArgument("em_f1 requires at least one gold");
  const std::string pred_norm = normalize_answer(prediction);
  const auto pred_tokens = python_split(pred_norm);
  SpanScore best;
  for (const auto& gold : golds) {
    const std::string gold_norm = normalize_answer(gold);
    best.exact_match =
        std::max(best.exact_match, pred_norm == gold_norm ? 1.0 : 0.0);
    best.f1 = std::max(best.f1, token_f1(pred_tokens, python_split(gold_norm)));
  }
  return best;
}

std::vector<GoldQuestion> gold_questions(std::span<const MrcExample> examples) {
  std::vector<GoldQuestion> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back({ex.id, ex.gold_answers});
  return out;
}

double EvalReport::metric(std::string_view name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw InvalidArgument("report has no metric '" + std::string(name) + "'");
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metrics) j[k] = round2(v);
  return j.dump();
}

EvalReport squad_eval(const std::map<std::string, std::string>& predictions,
                      std::span<const GoldQuestion> golds) {
  double em_total = 0.0, f1_total = 0.0;
  EvalReport report;
  report.task = "rrc";
  for (const auto& q : golds) {
    auto it = predictions.find(q.id);
    if (it == predictions.end()) {
      ++report.skipped;
      continue;
    }
    const SpanScore s = em_f1(it->second, q.answers);
    em_total += s.exact_match;
    f1_total += s.f1;
    ++report.evaluated;
  }
  const double n = static_cast<double>(golds.size());
  const double em = n > 0 ? 100.0 * em_total / n : 0.0;
  const double f1 = n > 0 ? 100.0 * f1_total / n : 0.0;
  report.metrics = {{"exact_match", em}, {"f1", f1}};
  report.primary_metric = "f1";
  report.primary = f1;
  return report;
}

PrecisionRecall chunk_f1(std::span<const std::vector<ChunkSpan>> predicted,
                         std::span<const std::vector<ChunkSpan>> gold) {
  if (predicted.size() != gold.size()) {
    throw InvalidArgument("chunk_f1: " + std::to_string(predicted.size()) +
                          " predicted sentences vs " +
                          std::to_string(gold.size()) + " gold");
  }
  std::size_t n_pred = 0, n_gold = 0, correct = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    std::multiset<ChunkSpan> remaining(gold[s].begin(), gold[s].end());
    n_gold += gold[s].size();
    n_pred += predicted[s].size();
    for (const auto& c : predicted[s]) {
      auto it = remaining.find(c);
      if (it != remaining.end()) {
        ++correct;
        remaining.erase(it);
      }
    }
  }
  PrecisionRecall out;
  out.precision = n_pred ? static_cast<double>(correct) / n_pred : 0.0;
  out.recall = n_gold ? static_cast<double>(correct) / n_gold : 0.0;
  out.f1 = harmonic(out.precision, out.recall);
  return out;
}

EvalReport chunk_report(const PrecisionRecall& prf, std::size_t sentences) {
  EvalReport r;
  r.task = "ae";
  r.metrics = {{"p", 100.0 * prf.precision},
               {"r", 100.0 * prf.recall},
               {"f1", 100.0 * prf.f1}};
  r.primary_metric = "f1";
  r.primary = 100.0 * prf.f1;
  r.evaluated = sentences;
  return r;
}

AccuracyMacroF1 acc_macro_f1(std::span<const Polarity> predicted,
                             std::span<const Polarity> gold) {
  if (predicted.size() != gold.size()) {
    throw InvalidArgument("acc_macro_f1: prediction and gold counts differ");
  }
  if (gold.empty()) throw InvalidArgument("acc_macro_f1: no examples");
  std::size_t correct = 0;
  std::array<std::size_t, 3> tp{}, fp{}, fn{};
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto p = static_cast<std::size_t>(predicted[i]);
    const auto g = static_cast<std::size_t>(gold[i]);
    if (p == g) {
      ++correct;
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double macro = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double precision =
        tp[c] + fp[c] ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
    const double recall =
        tp[c] + fn[c] ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
    macro += harmonic(precision, recall);
  }
  AccuracyMacroF1 out;
  out.accuracy = 100.0 * static_cast<double>(correct) / gold.size();
  out.macro_f1 = 100.0 * macro / 3.0;
  return out;
}

EvalReport polarity_report(const AccuracyMacroF1& scores, std::size_t count) {
  EvalReport r;
  r.task = "asc";
  r.metrics = {{"acc", scores.accuracy}, {"macro_f1", scores.macro_f1}};
  r.primary_metric = "macro_f1";
  r.primary = scores.macro_f1;
  r.evaluated = count;
  return r;
}

}  // namespace posttrain
