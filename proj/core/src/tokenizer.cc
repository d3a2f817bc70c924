#include "posttrain/tokenizer.h"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "posttrain/error.h"
#include "posttrain/text_util.h"

namespace posttrain {
namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

bool is_continuation_byte(char c) {
  return (static_cast<unsigned char>(c) & 0xC0) == 0x80;
}

std::string_view strip_prefix(std::string_view token) {
  if (token.starts_with(kContinuationPrefix)) {
    token.remove_prefix(kContinuationPrefix.size());
  }
  return token;
}

}  // namespace

std::string digest_to_hex(const Digest& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecialTokens.size()) {
    throw DataError("vocabulary is missing special tokens");
  }
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    if (tokens[i] != kSpecialTokens[i]) {
      throw DataError("vocabulary id " + std::to_string(i) + " must be " +
                      std::string(kSpecialTokens[i]) + ", found '" +
                      tokens[i] + "'");
    }
  }
  Vocabulary vocab;
  vocab.ids_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) {
      throw DataError("empty vocabulary entry at id " + std::to_string(i));
    }
    auto [it, inserted] =
        vocab.ids_.emplace(tokens[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw DataError("duplicate vocabulary entry '" + tokens[i] + "'");
    }
  }
  vocab.tokens_ = std::move(tokens);
  return vocab;
}

Vocabulary Vocabulary::load(const std::string& path) {
  const std::string content = text::normalize_newlines(text::read_file(path));
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t nl = content.find('\n', start);
    if (nl == std::string::npos) nl = content.size();
    tokens.emplace_back(content.substr(start, nl - start));
    start = nl + 1;
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << serialize();
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out.append(t);
    out.push_back('\n');
  }
  return out;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Digest Vocabulary::digest() const {
  const std::string bytes = serialize();
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(),
                 nullptr) != 1 ||
      len != out.size()) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return out;
}

Encoding Encoding::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, ids.size());
  begin = std::min(begin, end);
  Encoding out;
  out.ids.assign(ids.begin() + begin, ids.begin() + end);
  out.offsets.assign(offsets.begin() + begin, offsets.begin() + end);
  out.words.assign(words.begin() + begin, words.begin() + end);
  return out;
}

Vocabulary build_vocab(std::span<const std::string> corpus,
                       std::size_t target_size) {
  std::map<std::string, std::int64_t> word_counts;
  for (const auto& doc : corpus) {
    const std::string lowered = text::ascii_lower(doc);
    for (auto word : text::split_whitespace(lowered)) {
      ++word_counts[std::string(word)];
    }
  }
  if (word_counts.empty()) throw InvalidArgument("empty corpus");

  // Symbols are interned; each word is a sequence of symbol ids.
  std::vector<std::string> symbols;
  std::unordered_map<std::string, std::int32_t> symbol_ids;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] =
        symbol_ids.emplace(s, static_cast<std::int32_t>(symbols.size()));
    if (inserted) symbols.push_back(s);
    return it->second;
  };

  std::set<std::string> initial_chars;
  std::set<std::string> continuation_chars;
  std::vector<std::vector<std::int32_t>> words;
  std::vector<std::int64_t> counts;
  for (const auto& [word, count] : word_counts) {
    std::vector<std::int32_t> pieces;
    std::size_t pos = 0;
    while (pos < word.size()) {
      const std::size_t start = pos;
      text::next_code_point(word, pos);
      std::string piece = word.substr(start, pos - start);
      if (start > 0) {
        piece.insert(0, kContinuationPrefix);
        continuation_chars.insert(piece);
      } else {
        initial_chars.insert(piece);
      }
      pieces.push_back(intern(piece));
    }
    words.push_back(std::move(pieces));
    counts.push_back(count);
  }

  std::vector<std::string> tokens(kSpecialTokens.begin(), kSpecialTokens.end());
  tokens.insert(tokens.end(), initial_chars.begin(), initial_chars.end());
  tokens.insert(tokens.end(), continuation_chars.begin(),
                continuation_chars.end());
  if (target_size < tokens.size()) {
    throw InvalidArgument("target_size " + std::to_string(target_size) +
                          " is below the " + std::to_string(tokens.size()) +
                          " specials and observed characters");
  }
  std::set<std::string> in_vocab(tokens.begin(), tokens.end());

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  while (tokens.size() < target_size) {
    pair_counts.clear();
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& pieces = words[w];
      for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
        const std::uint64_t key =
            (static_cast<std::uint64_t>(pieces[i]) << 32) |
            static_cast<std::uint32_t>(pieces[i + 1]);
        pair_counts[key] += counts[w];
      }
    }
    if (pair_counts.empty()) break;

    // Most frequent pair; ties go to the lexicographically smallest pair.
    std::uint64_t best = 0;
    std::int64_t best_count = -1;
    for (const auto& [key, count] : pair_counts) {
      if (count > best_count) {
        best = key;
        best_count = count;
        continue;
      }
      if (count == best_count) {
        const auto& a = symbols[key >> 32];
        const auto& b = symbols[key & 0xFFFFFFFFu];
        const auto& ba = symbols[best >> 32];
        const auto& bb = symbols[best & 0xFFFFFFFFu];
        if (std::tie(a, b) < std::tie(ba, bb)) best = key;
      }
    }
    const auto left = static_cast<std::int32_t>(best >> 32);
    const auto right = static_cast<std::int32_t>(best & 0xFFFFFFFFu);
    const std::string merged =
        symbols[left] + std::string(strip_prefix(symbols[right]));
    const std::int32_t merged_id = intern(merged);
    if (in_vocab.insert(merged).second) tokens.push_back(merged);

    for (auto& pieces : words) {
      std::vector<std::int32_t> next;
      next.reserve(pieces.size());
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i + 1 < pieces.size() && pieces[i] == left &&
            pieces[i + 1] == right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(pieces[i]);
        }
      }
      pieces = std::move(next);
    }
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

Encoding encode(const Vocabulary& vocab, std::string_view text) {
  Encoding enc;
  const std::string lowered = text::ascii_lower(text);
  std::int32_t word_index = 0;
  std::string candidate;
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && text::is_ascii_space(lowered[i])) ++i;
    const std::size_t word_begin = i;
    while (i < lowered.size() && !text::is_ascii_space(lowered[i])) ++i;
    const std::size_t word_end = i;
    if (word_end == word_begin) break;

    const std::size_t mark = enc.ids.size();
    bool unknown = (word_end - word_begin) > kMaxCharsPerWord;
    std::size_t start = word_begin;
    while (!unknown && start < word_end) {
      std::size_t end = word_end;
      std::optional<TokenId> match;
      while (end > start) {
        candidate.clear();
        if (start > word_begin) candidate.append(kContinuationPrefix);
        candidate.append(lowered, start, end - start);
        match = vocab.find(candidate);
        if (match) break;
        do {
          --end;
        } while (end > start && is_continuation_byte(lowered[end]));
      }
      if (!match) {
        unknown = true;
        break;
      }
      enc.ids.push_back(*match);
      enc.offsets.push_back({start, end});
      enc.words.push_back(word_index);
      start = end;
    }
    if (unknown) {
      enc.ids.resize(mark);
      enc.offsets.resize(mark);
      enc.words.resize(mark);
      enc.ids.push_back(kUnkId);
      enc.offsets.push_back({word_begin, word_end});
      enc.words.push_back(word_index);
    }
    ++word_index;
  }
  return enc;
}

std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kPadId) continue;
    const std::string& tok = vocab.token(id);
    if (!Vocabulary::is_special(id) && tok.starts_with(kContinuationPrefix) &&
        !out.empty()) {
      out.append(strip_prefix(tok));
      continue;
    }
    if (!out.empty()) out.push_back(' ');
    out.append(Vocabulary::is_special(id) ? tok : strip_prefix(tok));
  }
  return out;
}

std::size_t PackedInput::num_valid() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

std::vector<std::uint8_t> PackedInput::right_side_mask() const {
  std::vector<std::uint8_t> mask(ids.size(), 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    mask[i] = sides[i] == Side::kRight ? 1 : 0;
  }
  return mask;
}

namespace {

void push_special(PackedInput& p, TokenId id, std::int8_t segment) {
  p.ids.push_back(id);
  p.segments.push_back(segment);
  p.valid.push_back(id == kPadId ? 0 : 1);
  p.sides.push_back(Side::kNone);
  p.offsets.push_back({});
  p.words.push_back(-1);
}

void push_tokens(PackedInput& p, const Encoding& enc, std::size_t count,
                 std::int8_t segment, Side side) {
  for (std::size_t i = 0; i < count; ++i) {
    p.ids.push_back(enc.ids[i]);
    p.segments.push_back(segment);
    p.valid.push_back(1);
    p.sides.push_back(side);
    p.offsets.push_back(enc.offsets[i]);
    p.words.push_back(enc.words[i]);
  }
}

void pad_to(PackedInput& p, std::size_t max_len) {
  while (p.ids.size() < max_len) push_special(p, kPadId, 0);
}

}  // namespace

PackedInput pack_pair(const Encoding& left, const Encoding& right,
                      std::size_t max_len) {
  if (max_len < left.size() + 3) throw InvalidArgument("left too long");
  const std::size_t budget = max_len - 3 - left.size();
  const std::size_t kept = std::min(budget, right.size());

  PackedInput p;
  p.ids.reserve(max_len);
  push_special(p, kClsId, 0);
  push_tokens(p, left, left.size(), 0, Side::kLeft);
  p.sep_index = static_cast<std::int32_t>(p.ids.size());
  push_special(p, kSepId, 0);
  push_tokens(p, right, kept, 1, Side::kRight);
  p.final_sep_index = static_cast<std::int32_t>(p.ids.size());
  push_special(p, kSepId, 1);
  p.truncated = right.size() - kept;
  pad_to(p, max_len);
  return p;
}

PackedInput pack_single(const Encoding& tokens, std::size_t max_len) {
  if (max_len < 2) throw InvalidArgument("max_len must be at least 2");
  const std::size_t kept = std::min(max_len - 2, tokens.size());

  PackedInput p;
  p.ids.reserve(max_len);
  push_special(p, kClsId, 0);
  push_tokens(p, tokens, kept, 0, Side::kLeft);
  p.sep_index = static_cast<std::int32_t>(p.ids.size());
  p.final_sep_index = p.sep_index;
  push_special(p, kSepId, 0);
  p.truncated = tokens.size() - kept;
  pad_to(p, max_len);
  return p;
}

}  // namespace posttrain
