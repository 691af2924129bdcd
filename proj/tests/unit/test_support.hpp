#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "supportqa/corpus.hpp"
#include "supportqa/rng.hpp"

namespace sqa_test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("supportqa-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Generators for property tests.
inline std::string random_word(supportqa::Rng& rng, const std::string& alphabet = "abcdefghij", std::size_t max_len = 6) {
  std::string w;
  const std::size_t n = 1 + rng.below(max_len);
  for (std::size_t i = 0; i < n; ++i) w += alphabet[rng.below(alphabet.size())];
  return w;
}

inline std::string random_sentence(supportqa::Rng& rng, std::size_t max_words = 12,
                                   const std::string& alphabet = "abcdefghij") {
  std::string s;
  const std::size_t n = 1 + rng.below(max_words);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += random_word(rng, alphabet);
  }
  return s;
}

// Arbitrary bytes biased toward interesting characters: markup, fences,
// whitespace, punctuation, upper case and multi-byte UTF-8.
inline std::string random_messy_text(supportqa::Rng& rng, std::size_t max_pieces = 20) {
  static const std::vector<std::string> pieces = {
      "The", "the", "IS", "is", "server", "down", " ", "  ", "\t", "\n", "<b>", "</b>", "<", ">",
      "```", "code", "```\nx\n```", "?", "!", ".", ",", "caf\xc3\xa9", "\xe2\x82\xac", "I", "me",
      "Been", "having", "x<y", "a>b", "``", "`", "Dr.", "e.g."};
  std::string s;
  const std::size_t n = rng.below(max_pieces + 1);
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng.below(pieces.size())];
  return s;
}

inline std::vector<supportqa::QAPair> labelled_pairs(std::size_t n_acc, std::size_t n_unacc,
                                                     const std::string& prefix = "p") {
  std::vector<supportqa::QAPair> out;
  for (std::size_t i = 0; i < n_acc + n_unacc; ++i) {
    out.push_back({prefix + std::to_string(i), "question " + std::to_string(i), "answer " + std::to_string(i),
                   i < n_acc});
  }
  return out;
}

}  // namespace sqa_test
