#include "supportqa/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "supportqa/baselines.hpp"
#include "supportqa/container.hpp"
#include "supportqa/digest.hpp"
#include "supportqa/errors.hpp"
#include "supportqa/text.hpp"

namespace supportqa {

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> kTokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return kTokens;
}

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& reserved = reserved_tokens();
  if (tokens_.size() < kReserved || !std::equal(reserved.begin(), reserved.end(), tokens_.begin())) {
    throw ValidationError("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty() || t.find_first_of("\n\r") != std::string::npos) {
      throw ValidationError("vocabulary token " + std::to_string(i) + " is empty or contains a newline");
    }
    if (!index_.emplace(t, static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary token '" + t + "'");
    }
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_or_unk(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

Vocabulary Vocabulary::with_appended(const std::vector<std::string>& extra) const {
  auto tokens = tokens_;
  tokens.insert(tokens.end(), extra.begin(), extra.end());
  return Vocabulary(std::move(tokens));
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view contents) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    auto nl = contents.find('\n', pos);
    if (nl == std::string_view::npos) nl = contents.size();
    tokens.emplace_back(contents.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const { atomic_write_file(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string Vocabulary::digest() const { return sha256_hex(serialize()); }

std::size_t EncodedPair::real_length() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

std::vector<std::pair<std::string, std::size_t>> ranked(const std::map<std::string, std::size_t>& counts,
                                                        std::size_t min_freq) {
  std::vector<std::pair<std::string, std::size_t>> v;
  for (const auto& [k, c] : counts) {
    if (c >= min_freq) v.emplace_back(k, c);
  }
  // std::map iteration is already lexicographic; stable sort keeps it as the tie-break.
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return v;
}

}  // namespace

Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t max_size,
                       std::size_t min_freq) {
  if (max_size <= Vocabulary::kReserved) {
    throw ConfigError("build_vocab: max_size must exceed the 5 reserved tokens");
  }
  std::map<std::string, std::size_t> piece_counts;
  std::map<std::string, std::size_t> word_counts;
  for (const auto& t : texts) {
    for (const auto& w : text::basic_tokens(t)) {
      const auto chars = text::utf8_chars(w);
      for (std::size_t i = 0; i < chars.size(); ++i) {
        ++piece_counts[i == 0 ? chars[i] : "##" + chars[i]];
      }
      if (chars.size() > 1) ++word_counts[w];
    }
  }

  std::vector<std::string> tokens = Vocabulary::reserved_tokens();
  std::unordered_map<std::string, bool> present;
  for (const auto& t : tokens) present[t] = true;
  auto add_tier = [&](const std::map<std::string, std::size_t>& counts) {
    for (const auto& [tok, c] : ranked(counts, min_freq)) {
      if (tokens.size() >= max_size) return;
      if (present.emplace(tok, true).second) tokens.push_back(tok);
    }
  };
  add_tier(piece_counts);
  add_tier(word_counts);
  return Vocabulary(std::move(tokens));
}

Vocabulary extend_vocab(const Vocabulary& vocab, const std::vector<QAPair>& corpus, std::size_t k) {
  if (k == 0 || corpus.empty()) return vocab;
  std::vector<std::string> docs;
  docs.reserve(corpus.size());
  for (const auto& p : corpus) docs.push_back(p.question + " " + p.answer);
  const auto model = tfidf_fit(docs);
  // Rank everything, then skip terms already present until k are collected.
  const auto ranking = tfidf_rank(model, corpus, model.size());
  std::vector<std::string> extra;
  for (const auto& [term, score] : ranking) {
    if (extra.size() >= k) break;
    if (!vocab.contains(term)) extra.push_back(term);
  }
  return vocab.with_appended(extra);
}

std::vector<TokenId> wordpiece_ids(std::string_view input, const Vocabulary& vocab) {
  constexpr std::size_t kMaxWordChars = 100;
  std::vector<TokenId> out;
  for (const auto& word : text::basic_tokens(input)) {
    if (auto id = vocab.find(word)) {
      out.push_back(*id);
      continue;
    }
    const auto chars = text::utf8_chars(word);
    if (chars.size() > kMaxWordChars) {
      out.push_back(Vocabulary::kUnk);
      continue;
    }
    std::vector<TokenId> pieces;
    std::size_t start = 0;
    bool ok = true;
    while (start < chars.size()) {
      std::optional<TokenId> found;
      std::size_t end = chars.size();
      for (; end > start; --end) {
        std::string sub = start == 0 ? "" : "##";
        for (std::size_t i = start; i < end; ++i) sub += chars[i];
        if ((found = vocab.find(sub))) break;
      }
      if (!found) {
        ok = false;
        break;
      }
      pieces.push_back(*found);
      start = end;
    }
    if (ok) out.insert(out.end(), pieces.begin(), pieces.end());
    else out.push_back(Vocabulary::kUnk);
  }
  return out;
}

EncodedPair encode_pair(std::string_view question, std::string_view answer,
                        const Vocabulary& vocab, std::size_t max_seq_len) {
  if (max_seq_len < 5) throw ConfigError("encode_pair: max_seq_len must be at least 5");
  auto q = wordpiece_ids(question, vocab);
  auto a = wordpiece_ids(answer, vocab);
  const std::size_t budget = max_seq_len - 3;
  while (q.size() + a.size() > budget) {
    if (q.size() > a.size()) q.pop_back();
    else a.pop_back();
  }

  EncodedPair e;
  e.ids.reserve(max_seq_len);
  e.ids.push_back(Vocabulary::kCls);
  e.ids.insert(e.ids.end(), q.begin(), q.end());
  e.ids.push_back(Vocabulary::kSep);
  const std::size_t first_segment = e.ids.size();
  e.ids.insert(e.ids.end(), a.begin(), a.end());
  e.ids.push_back(Vocabulary::kSep);
  const std::size_t real = e.ids.size();

  e.segments.assign(max_seq_len, 0);
  e.mask.assign(max_seq_len, 0);
  for (std::size_t i = 0; i < real; ++i) {
    e.mask[i] = 1;
    e.segments[i] = i >= first_segment ? 1 : 0;
  }
  e.ids.resize(max_seq_len, Vocabulary::kPad);
  return e;
}

EncodedPair encode_qa(const QAPair& pair, const Vocabulary& vocab, std::size_t max_seq_len) {
  auto e = encode_pair(pair.question, pair.answer, vocab, max_seq_len);
  e.label = pair.accepted;
  return e;
}

std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (auto id : ids) {
    const auto& t = vocab.token(id);
    if (id == Vocabulary::kPad) continue;
    out.push_back(t);
  }
  return out;
}

}  // namespace supportqa
