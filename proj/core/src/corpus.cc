#include "posttrain/corpus.h"

#include <algorithm>
#include <random>

#include "json.hpp"
#include "posttrain/error.h"
#include "posttrain/text_util.h"

namespace posttrain {
namespace {

using nlohmann::json;

std::uint64_t pass_seed(std::uint64_t seed, std::uint64_t pass) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (pass + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }

struct EncodedReview {
  Encoding enc;
  // Token indices j (0 < j < n) that start a new sentence.
  std::vector<std::size_t> boundaries;
};

EncodedReview encode_review(const Vocabulary& vocab, const Review& review) {
  EncodedReview out;
  out.enc = encode(vocab, review.text);
  const auto& enc = out.enc;
  for (std::size_t i = 0; i + 1 < enc.size(); ++i) {
    const bool word_end = enc.words[i + 1] != enc.words[i];
    if (word_end && enc.offsets[i].end > 0 &&
        is_sentence_end(review.text[enc.offsets[i].end - 1])) {
      out.boundaries.push_back(i + 1);
    }
  }
  return out;
}

std::size_t pick_split(const EncodedReview& r, std::mt19937_64& rng,
                       DkReport& report) {
  if (!r.boundaries.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, r.boundaries.size() - 1);
    return r.boundaries[pick(rng)];
  }
  ++report.token_splits;
  std::uniform_int_distribution<std::size_t> pick(1, r.enc.size() - 1);
  return pick(rng);
}

void truncate_pair(Encoding& a, Encoding& b, std::size_t max_len) {
  while (a.size() + b.size() + 3 > max_len) {
    Encoding& longer = a.size() > b.size() ? a : b;
    longer.ids.pop_back();
    longer.offsets.pop_back();
    longer.words.pop_back();
  }
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw DataError("missing field '" + std::string(key) + "' in " + where);
  }
  return obj.at(key);
}

std::string require_string(const json& obj, const char* key,
                           const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) {
    throw DataError("field '" + std::string(key) + "' in " + where +
                    " must be a string");
  }
  return v.get<std::string>();
}

Encoding truncated(Encoding enc, std::size_t max_tokens) {
  if (enc.size() > max_tokens) enc = enc.slice(0, max_tokens);
  return enc;
}

}  // namespace

std::string_view to_string(BioLabel label) {
  switch (label) {
    case BioLabel::kBegin:
      return "B";
    case BioLabel::kInside:
      return "I";
    case BioLabel::kOutside:
      return "O";
  }
  return "?";
}

std::string_view to_string(Polarity polarity) {
  switch (polarity) {
    case Polarity::kPositive:
      return "positive";
    case Polarity::kNegative:
      return "negative";
    case Polarity::kNeutral:
      return "neutral";
  }
  return "?";
}

std::optional<BioLabel> parse_bio_label(std::string_view s) {
  if (s == "B") return BioLabel::kBegin;
  if (s == "I") return BioLabel::kInside;
  if (s == "O") return BioLabel::kOutside;
  return std::nullopt;
}

std::optional<Polarity> parse_polarity(std::string_view s) {
  if (s == "positive") return Polarity::kPositive;
  if (s == "negative") return Polarity::kNegative;
  if (s == "neutral") return Polarity::kNeutral;
  return std::nullopt;
}

// ----------------------------------------------------------------------------

std::vector<Review> parse_reviews(std::string_view content,
                                  bool line_per_document) {
  const std::string text = text::normalize_newlines(content);
  std::vector<Review> out;
  auto emit = [&](std::string doc) {
    if (text::split_whitespace(doc).empty()) return;
    out.push_back({"review-" + std::to_string(out.size()), std::move(doc)});
  };
  std::string block;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + start, nl - start);
    if (line_per_document) {
      emit(std::string(line));
    } else if (text::split_whitespace(line).empty()) {
      emit(std::move(block));
      block.clear();
    } else {
      if (!block.empty()) block.push_back('\n');
      block.append(line);
    }
    start = nl + 1;
  }
  if (!line_per_document) emit(std::move(block));
  return out;
}

std::vector<Review> load_reviews(const std::string& path,
                                 bool line_per_document) {
  return parse_reviews(text::read_file(path), line_per_document);
}

std::vector<DkExample> make_dk_examples(std::span<const Review> reviews,
                                        const Vocabulary& vocab,
                                        const DkOptions& options,
                                        DkReport* report_out) {
  if (options.duplicate_factor < 1) {
    throw InvalidArgument("duplicate_factor must be at least 1");
  }
  if (options.max_len < 5) throw InvalidArgument("max_len must be at least 5");
  DkReport report;

  std::vector<EncodedReview> encoded(reviews.size());
  std::vector<std::uint32_t> usable;
  for (std::size_t i = 0; i < reviews.size(); ++i) {
    if (options.exclude_ids.contains(reviews[i].id)) {
      ++report.excluded;
      continue;
    }
    encoded[i] = encode_review(vocab, reviews[i]);
    if (encoded[i].enc.size() < 2) {
      ++report.skipped_short;
      continue;
    }
    usable.push_back(static_cast<std::uint32_t>(i));
  }
  bool distinct = false;
  for (auto i : usable) {
    if (reviews[i].id != reviews[usable.front()].id) distinct = true;
  }
  if (!distinct) {
    throw InvalidArgument(
        "cross-review pairs need at least two distinct usable reviews");
  }

  const auto& m = options.masking;
  const auto vocab_size = static_cast<TokenId>(vocab.size());
  std::vector<DkExample> out;
  out.reserve(usable.size() * options.duplicate_factor);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_partner(0, usable.size() - 1);
  std::uniform_int_distribution<TokenId> random_token(kNumSpecialTokens,
                                                      vocab_size - 1);

  for (std::size_t pass = 0; pass < options.duplicate_factor; ++pass) {
    std::mt19937_64 rng(pass_seed(options.seed, pass));
    for (auto idx : usable) {
      const EncodedReview& r = encoded[idx];
      const std::size_t j = pick_split(r, rng, report);
      Encoding first = r.enc.slice(0, j);
      Encoding second = r.enc.slice(j, r.enc.size());
      DkExample ex;
      ex.first_review = idx;
      ex.second_review = idx;
      if (unit(rng) < options.cross_review_rate) {
        std::uint32_t partner = idx;
        while (partner == idx || reviews[partner].id == reviews[idx].id) {
          partner = usable[pick_partner(rng)];
        }
        const EncodedReview& p = encoded[partner];
        const std::size_t pj = pick_split(p, rng, report);
        second = p.enc.slice(pj, p.enc.size());
        ex.second_review = partner;
        ex.label = PairLabel::kCrossReview;
        ++report.cross_review;
      }
      truncate_pair(first, second, options.max_len);
      ex.input = pack_pair(first, second, options.max_len);

      for (std::size_t pos = 0; pos < ex.input.length(); ++pos) {
        if (ex.input.sides[pos] == Side::kNone) continue;
        ++report.candidates;
        if (unit(rng) >= m.select_rate) continue;
        ++report.selected;
        const TokenId original = ex.input.ids[pos];
        ex.targets.push_back({static_cast<std::int32_t>(pos), original});
        const double action = unit(rng);
        if (action < m.mask_share) {
          ex.input.ids[pos] = kMaskId;
          ++report.replaced_mask;
        } else if (action < m.mask_share + m.random_share) {
          ex.input.ids[pos] = random_token(rng);
          ++report.replaced_random;
        } else {
          ++report.kept;
        }
      }
      out.push_back(std::move(ex));
    }
  }
  std::mt19937_64 shuffle_rng(pass_seed(options.seed, options.duplicate_factor));
  std::shuffle(out.begin(), out.end(), shuffle_rng);
  report.examples = out.size();
  if (report_out) *report_out = report;
  return out;
}

// ----------------------------------------------------------------------------

MrcDataset parse_mrc(std::string_view content) {
  json root;
  try {
    root = json::parse(content);
  } catch (const json::exception& e) {
    throw DataError(std::string("MRC file is not valid JSON: ") + e.what());
  }
  const json& data = require(root, "data", "top level");
  if (!data.is_array()) throw DataError("field 'data' must be a list");

  MrcDataset ds;
  for (std::size_t a = 0; a < data.size(); ++a) {
    const std::string where_article = "data[" + std::to_string(a) + "]";
    const json& paragraphs = require(data[a], "paragraphs", where_article);
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      const std::string where_par =
          where_article + ".paragraphs[" + std::to_string(p) + "]";
      const std::string context =
          require_string(paragraphs[p], "context", where_par);
      const json& qas = require(paragraphs[p], "qas", where_par);
      const std::size_t context_chars = [&] {
        std::size_t n = 0, pos = 0;
        while (pos < context.size()) {
          text::next_code_point(context, pos);
          ++n;
        }
        return n;
      }();
      for (std::size_t q = 0; q < qas.size(); ++q) {
        const std::string where_q = where_par + ".qas[" + std::to_string(q) + "]";
        MrcExample ex;
        ex.id = require_string(qas[q], "id", where_q);
        ex.question = require_string(qas[q], "question", where_q);
        ex.context = context;
        const json& answers = require(qas[q], "answers", where_q);
        std::optional<std::size_t> first_start;
        for (std::size_t k = 0; k < answers.size(); ++k) {
          const std::string where_a = where_q + ".answers[" + std::to_string(k) + "]";
          std::string text = require_string(answers[k], "text", where_a);
          const json& start = require(answers[k], "answer_start", where_a);
          if (!start.is_number_integer()) {
            throw DataError("field 'answer_start' in " + where_a +
                            " must be an integer");
          }
          if (k == 0) first_start = start.get<std::size_t>();
          ex.gold_answers.push_back(std::move(text));
        }
        auto reject = [&](const std::string& why) {
          ds.report.rejected_ids.push_back(ex.id);
          ds.report.messages.push_back(ex.id + ": " + why);
        };
        if (!first_start) {
          reject("no answers");
          continue;
        }
        if (*first_start > context_chars) {
          reject("answer_start " + std::to_string(*first_start) +
                 " beyond context length " + std::to_string(context_chars));
          continue;
        }
        ex.answer_text = ex.gold_answers.front();
        const std::size_t begin = text::byte_offset_of_char(context, *first_start);
        if (context.compare(begin, ex.answer_text.size(), ex.answer_text) != 0) {
          reject("answer text does not match context at answer_start");
          continue;
        }
        ex.answer = {begin, begin + ex.answer_text.size()};
        ds.examples.push_back(std::move(ex));
        ++ds.report.accepted;
      }
    }
  }
  return ds;
}

MrcDataset load_mrc(const std::string& path) {
  return parse_mrc(text::read_file(path));
}

std::pair<std::size_t, std::size_t> align_answer(const Encoding& enc,
                                                 CharSpan span) {
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const auto& o = enc.offsets[i];
    if (o.end > span.begin && o.begin < span.end) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) throw InvalidArgument("unalignable span");
  return {*first, last};
}

std::vector<MrcFeature> featurize_mrc(const Vocabulary& vocab,
                                      std::span<const MrcExample> examples,
                                      std::size_t max_len) {
  std::vector<MrcFeature> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const Encoding question = truncated(encode(vocab, ex.question), max_len / 2);
    const Encoding context = encode(vocab, ex.context);
    MrcFeature f;
    f.id = ex.id;
    f.example = i;
    f.input = pack_pair(question, context, max_len);
    try {
      const auto [s, e] = align_answer(context, ex.answer);
      const std::size_t kept = context.size() - f.input.truncated;
      if (e < kept) {
        f.start = f.input.sep_index + 1 + static_cast<std::int32_t>(s);
        f.end = f.input.sep_index + 1 + static_cast<std::int32_t>(e);
        f.has_answer = true;
      }
    } catch (const InvalidArgument&) {
      f.has_answer = false;
    }
    out.push_back(std::move(f));
  }
  return out;
}

// ----------------------------------------------------------------------------

std::vector<BioExample> parse_bio(std::string_view content) {
  const std::string text = text::normalize_newlines(content);
  std::vector<BioExample> out;
  BioExample current;
  auto flush = [&] {
    if (current.words.empty()) return;
    current.id = "sentence-" + std::to_string(out.size());
    out.push_back(std::move(current));
    current = {};
  };
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + start, nl - start);
    start = nl + 1;
    ++line_no;
    if (text::split_whitespace(line).empty()) {
      flush();
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw DataError("line " + std::to_string(line_no) +
                      ": expected word<TAB>label");
    }
    const std::string_view word = line.substr(0, tab);
    const std::string label_text = text::collapse_whitespace(line.substr(tab + 1));
    auto label = parse_bio_label(label_text);
    if (!label) {
      throw DataError("line " + std::to_string(line_no) + ": unknown label '" +
                      label_text + "'");
    }
    if (word.empty() ||
        std::any_of(word.begin(), word.end(), text::is_ascii_space)) {
      throw DataError("line " + std::to_string(line_no) +
                      ": word must be a single non-empty token");
    }
    if (*label == BioLabel::kInside &&
        (current.labels.empty() || current.labels.back() == BioLabel::kOutside)) {
      label = BioLabel::kBegin;
      ++current.repaired;
    }
    current.words.emplace_back(word);
    current.labels.push_back(*label);
  }
  flush();
  return out;
}

std::vector<BioExample> load_bio(const std::string& path) {
  return parse_bio(text::read_file(path));
}

std::vector<BioFeature> featurize_bio(const Vocabulary& vocab,
                                      std::span<const BioExample> examples,
                                      std::size_t max_len) {
  std::vector<BioFeature> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    std::string joined;
    for (const auto& w : ex.words) {
      if (!joined.empty()) joined.push_back(' ');
      joined.append(w);
    }
    const Encoding enc = encode(vocab, joined);
    BioFeature f;
    f.example = i;
    f.input = pack_single(enc, max_len);
    f.token_labels.assign(f.input.length(), kIgnoreLabel);
    std::int32_t previous_word = -1;
    for (std::size_t pos = 0; pos < f.input.length(); ++pos) {
      if (f.input.sides[pos] == Side::kNone) continue;
      const std::int32_t w = f.input.words[pos];
      if (w != previous_word) {
        f.token_labels[pos] = static_cast<std::int32_t>(ex.labels.at(w));
      }
      previous_word = w;
    }
    out.push_back(std::move(f));
  }
  return out;
}

// ----------------------------------------------------------------------------

AscDataset parse_asc(std::string_view content) {
  const std::string text = text::normalize_newlines(content);
  AscDataset ds;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + start, nl - start);
    start = nl + 1;
    ++line_no;
    if (text::split_whitespace(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    AscExample ex;
    ex.sentence = require_string(row, "sentence", where);
    ex.term = require_string(row, "term", where);
    const json& from = require(row, "from", where);
    const json& to = require(row, "to", where);
    if (!from.is_number_integer() || !to.is_number_integer()) {
      throw DataError(where + ": 'from' and 'to' must be integers");
    }
    ex.from = from.get<std::size_t>();
    ex.to = to.get<std::size_t>();
    const std::string polarity = require_string(row, "polarity", where);
    if (polarity == "conflict") {
      ++ds.dropped_conflict;
      continue;
    }
    auto parsed = parse_polarity(polarity);
    if (!parsed) {
      throw DataError(where + ": unknown label '" + polarity + "'");
    }
    ex.polarity = *parsed;
    ex.id = row.contains("id") && row["id"].is_string()
                ? row["id"].get<std::string>()
                : "asc-" + std::to_string(line_no);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

AscDataset load_asc(const std::string& path) {
  return parse_asc(text::read_file(path));
}

std::vector<AscFeature> featurize_asc(const Vocabulary& vocab,
                                      std::span<const AscExample> examples,
                                      std::size_t max_len) {
  std::vector<AscFeature> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    AscFeature f;
    f.id = ex.id;
    f.example = i;
    f.label = ex.polarity;
    f.input = pack_pair(truncated(encode(vocab, ex.term), max_len / 2),
                        encode(vocab, ex.sentence), max_len);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace posttrain
