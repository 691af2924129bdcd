#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "supportqa/corpus.hpp"

namespace supportqa {

using TokenId = std::int32_t;

// Ordered token table. Ids 0..4 are always [PAD] [UNK] [CLS] [SEP] [MASK].
// Immutable once built; extension returns a new table.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr std::size_t kReserved = 5;

  static const std::vector<std::string>& reserved_tokens();

  Vocabulary();
  // Validates reserved prefix and uniqueness.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.contains(token); }
  TokenId id_or_unk(const std::string& token) const;

  static bool is_special(TokenId id) noexcept { return id >= 0 && id < static_cast<TokenId>(kReserved); }

  Vocabulary with_appended(const std::vector<std::string>& extra) const;

  // One token per line, line number == id, trailing newline after the last.
  std::string serialize() const;
  static Vocabulary parse(std::string_view contents);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string digest() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct EncodedPair {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> mask;
  std::optional<bool> label;

  std::size_t real_length() const noexcept;
  friend bool operator==(const EncodedPair&, const EncodedPair&) = default;
};

// Character pieces ("c" word-initial, "##c" continuation) come first so that
// any word over seen characters can be segmented; whole words follow. Both
// tiers are ordered by descending frequency, ties lexicographic.
Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t max_size,
                       std::size_t min_freq);

// Appends up to k top TF-IDF whole words from `corpus` that are not yet in
// `vocab`; existing ids are preserved.
Vocabulary extend_vocab(const Vocabulary& vocab, const std::vector<QAPair>& corpus, std::size_t k);

// Greedy longest-match word-piece segmentation; words that cannot be fully
// segmented become a single [UNK].
std::vector<TokenId> wordpiece_ids(std::string_view text, const Vocabulary& vocab);

// [CLS] q [SEP] a [SEP] [PAD]*, longest-first truncation.
EncodedPair encode_pair(std::string_view question, std::string_view answer,
                        const Vocabulary& vocab, std::size_t max_seq_len);
EncodedPair encode_qa(const QAPair& pair, const Vocabulary& vocab, std::size_t max_seq_len);

// Inverse lookup with padding positions dropped.
std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab);

}  // namespace supportqa
