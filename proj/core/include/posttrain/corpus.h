#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "posttrain/tokenizer.h"

namespace posttrain {

// ----------------------------------------------------------------------------
// Labels
// ----------------------------------------------------------------------------

// Whether the two sides of a DK example come from one review. Reports that
// follow the "artificial review" convention call kCrossReview the positive
// class.
enum class PairLabel : std::uint8_t { kSameReview = 0, kCrossReview = 1 };

// Order matches the rows of the tag head.
enum class BioLabel : std::uint8_t { kBegin = 0, kInside = 1, kOutside = 2 };

// Order matches the rows of the class head and breaks prediction ties.
enum class Polarity : std::uint8_t { kPositive = 0, kNegative = 1, kNeutral = 2 };

std::string_view to_string(BioLabel label);
std::string_view to_string(Polarity polarity);
std::optional<BioLabel> parse_bio_label(std::string_view s);
// Accepts positive/negative/neutral; conflict and anything else give nullopt.
std::optional<Polarity> parse_polarity(std::string_view s);

// ----------------------------------------------------------------------------
// Review corpus and domain-knowledge examples
// ----------------------------------------------------------------------------

struct Review {
  std::string id;
  std::string text;
};

// Documents are separated by blank lines, or one per line when
// `line_per_document` is set. Ids are "review-<n>" in file order.
std::vector<Review> parse_reviews(std::string_view content,
                                  bool line_per_document = false);
std::vector<Review> load_reviews(const std::string& path,
                                 bool line_per_document = false);

struct MaskingOptions {
  double select_rate = 0.15;
  double mask_share = 0.8;
  double random_share = 0.1;
};

struct DkOptions {
  std::size_t max_len = 320;
  std::size_t duplicate_factor = 5;
  std::uint64_t seed = 12345;
  double cross_review_rate = 0.5;
  MaskingOptions masking;
  // Reviews whose id is listed here are not used.
  std::unordered_set<std::string> exclude_ids;
};

struct MlmTarget {
  std::int32_t position = 0;
  TokenId original = 0;
  bool operator==(const MlmTarget&) const = default;
};

struct DkExample {
  PackedInput input;
  std::vector<MlmTarget> targets;
  PairLabel label = PairLabel::kSameReview;
  // Indices into the review list the sides were cut from.
  std::uint32_t first_review = 0;
  std::uint32_t second_review = 0;
};

struct DkReport {
  std::size_t examples = 0;
  std::size_t skipped_short = 0;
  std::size_t token_splits = 0;
  std::size_t excluded = 0;
  std::size_t cross_review = 0;
  // Non-special positions eligible for masking, and what happened to the
  // selected ones.
  std::size_t candidates = 0;
  std::size_t selected = 0;
  std::size_t replaced_mask = 0;
  std::size_t replaced_random = 0;
  std::size_t kept = 0;
};

// Splits each review at a random sentence boundary, swaps in a side from a
// different review half of the time, and masks tokens for MLM. Runs
// `duplicate_factor` independent passes and shuffles the result.
std::vector<DkExample> make_dk_examples(std::span<const Review> reviews,
                                        const Vocabulary& vocab,
                                        const DkOptions& options,
                                        DkReport* report = nullptr);

// ----------------------------------------------------------------------------
// Reading comprehension (SQuAD 1.1 layout)
// ----------------------------------------------------------------------------

struct MrcExample {
  std::string id;
  std::string question;
  std::string context;
  // Byte range of the first gold answer inside `context`.
  CharSpan answer;
  std::string answer_text;
  std::vector<std::string> gold_answers;
};

struct LoadReport {
  std::size_t accepted = 0;
  std::vector<std::string> rejected_ids;
  std::vector<std::string> messages;
};

struct MrcDataset {
  std::vector<MrcExample> examples;
  LoadReport report;
};

MrcDataset parse_mrc(std::string_view json);
MrcDataset load_mrc(const std::string& path);

// Minimal token interval [first, last] whose offsets cover `span`.
std::pair<std::size_t, std::size_t> align_answer(const Encoding& enc,
                                                 CharSpan span);

struct MrcFeature {
  std::string id;
  PackedInput input;
  // Gold pointers in packed coordinates; meaningful only when has_answer.
  std::int32_t start = 0;
  std::int32_t end = 0;
  // False when truncation cut the answer out of the window.
  bool has_answer = false;
  std::size_t example = 0;
};

std::vector<MrcFeature> featurize_mrc(const Vocabulary& vocab,
                                      std::span<const MrcExample> examples,
                                      std::size_t max_len);

// ----------------------------------------------------------------------------
// Aspect extraction (BIO) and aspect sentiment (ASC)
// ----------------------------------------------------------------------------

struct BioExample {
  std::string id;
  std::vector<std::string> words;
  std::vector<BioLabel> labels;
  // Number of I labels promoted to B because no chunk was open.
  std::size_t repaired = 0;
};

std::vector<BioExample> parse_bio(std::string_view content);
std::vector<BioExample> load_bio(const std::string& path);

inline constexpr std::int32_t kIgnoreLabel = -1;

struct BioFeature {
  PackedInput input;
  // Label per position; kIgnoreLabel on specials, padding and continuation
  // pieces.
  std::vector<std::int32_t> token_labels;
  std::size_t example = 0;
};

std::vector<BioFeature> featurize_bio(const Vocabulary& vocab,
                                      std::span<const BioExample> examples,
                                      std::size_t max_len);

struct AscExample {
  std::string id;
  std::string sentence;
  std::string term;
  std::size_t from = 0;
  std::size_t to = 0;
  Polarity polarity = Polarity::kNeutral;
};

struct AscDataset {
  std::vector<AscExample> examples;
  std::size_t dropped_conflict = 0;
};

AscDataset parse_asc(std::string_view jsonl);
AscDataset load_asc(const std::string& path);

struct AscFeature {
  std::string id;
  PackedInput input;
  Polarity label = Polarity::kNeutral;
  std::size_t example = 0;
};

std::vector<AscFeature> featurize_asc(const Vocabulary& vocab,
                                      std::span<const AscExample> examples,
                                      std::size_t max_len);

}  // namespace posttrain
