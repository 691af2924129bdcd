#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace supportqa::text {

// ASCII-only case folding; bytes >= 0x80 are left untouched so UTF-8 stays valid.
std::string ascii_lower(std::string_view s);

bool is_ascii_space(char c) noexcept;
bool is_ascii_punct(char c) noexcept;

// Length of the UTF-8 sequence introduced by `lead` (1 for invalid lead bytes).
std::size_t utf8_length(unsigned char lead) noexcept;

// Split a word into UTF-8 code points (invalid bytes become single units).
std::vector<std::string> utf8_chars(std::string_view word);

// Whitespace split without any other normalization.
std::vector<std::string> split_whitespace(std::string_view s);

// Basic word tokenization shared by the tokenizer and the baselines:
// lowercase, split on whitespace, and emit every ASCII punctuation mark as
// its own token.
std::vector<std::string> basic_tokens(std::string_view s);

// basic_tokens with punctuation-only tokens removed; the term stream used by
// TF-IDF and the word-embedding baseline.
std::vector<std::string> words(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace supportqa::text
