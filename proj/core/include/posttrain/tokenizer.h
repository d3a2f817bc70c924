#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace posttrain {

using TokenId = std::int32_t;

// Reserved ids; every vocabulary starts with these five tokens in this order.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kNumSpecialTokens = 5;

inline constexpr std::array<std::string_view, 5> kSpecialTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
inline constexpr std::string_view kContinuationPrefix = "##";

using Digest = std::array<std::uint8_t, 32>;

std::string digest_to_hex(const Digest& digest);

// Immutable subword vocabulary. Ids are dense and specials occupy 0..4.
class Vocabulary {
 public:
  Vocabulary() = default;

  // Validates the special-token layout and uniqueness of entries.
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  // One token per line, line number = id.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;
  std::string serialize() const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<TokenId> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecialTokens; }

  // SHA-256 of serialize(); stamped into checkpoints.
  Digest digest() const;

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId, StringHash, std::equal_to<>> ids_;
};

// Half-open byte range into the encoded text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const CharSpan&) const = default;
};

struct Encoding {
  std::vector<TokenId> ids;
  std::vector<CharSpan> offsets;
  // Index of the whitespace word each token came from.
  std::vector<std::int32_t> words;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  // Tokens [begin, end); word indices are kept as-is.
  Encoding slice(std::size_t begin, std::size_t end) const;
};

// Builds a vocabulary of at most `target_size` entries by greedy pair merges
// over whitespace words, starting from every observed character.
Vocabulary build_vocab(std::span<const std::string> corpus,
                       std::size_t target_size);

// Lowercases, splits on whitespace and segments each word by greedy longest
// match. Words with no full segmentation become one [UNK].
Encoding encode(const Vocabulary& vocab, std::string_view text);

std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids);

enum class Side : std::int8_t { kNone = -1, kLeft = 0, kRight = 1 };

struct PackedInput {
  std::vector<TokenId> ids;
  std::vector<std::int8_t> segments;
  // 1 for real tokens, 0 for padding.
  std::vector<std::uint8_t> valid;
  std::vector<Side> sides;
  // Offsets into the text of the token's side; empty span for specials.
  std::vector<CharSpan> offsets;
  // Word index within the side; -1 for specials and padding.
  std::vector<std::int32_t> words;
  // Position of the first [SEP].
  std::int32_t sep_index = 0;
  // Position of the last [SEP]; equals sep_index in single-sentence mode.
  std::int32_t final_sep_index = 0;
  // Tokens dropped from the truncated side.
  std::size_t truncated = 0;

  std::size_t length() const { return ids.size(); }
  std::size_t num_valid() const;
  // Positions on the right side (the answer region for span tasks).
  std::vector<std::uint8_t> right_side_mask() const;
};

// [CLS] left [SEP] right [SEP] [PAD]..., right side truncated to fit.
PackedInput pack_pair(const Encoding& left, const Encoding& right,
                      std::size_t max_len);

// [CLS] tokens [SEP] [PAD]..., truncated to fit.
PackedInput pack_single(const Encoding& tokens, std::size_t max_len);

}  // namespace posttrain
