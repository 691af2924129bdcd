#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace supportqa {

struct QAPair {
  std::string id;
  std::string question;
  std::string answer;
  bool accepted = false;

  friend bool operator==(const QAPair&, const QAPair&) = default;
};

// (accepted count, unaccepted count)
struct ClassCounts {
  std::size_t accepted = 0;
  std::size_t unaccepted = 0;

  std::size_t total() const noexcept { return accepted + unaccepted; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct CorpusSplit {
  std::vector<QAPair> train;
  std::vector<QAPair> test;
  ClassCounts train_ratio;
  ClassCounts test_ratio;
  std::uint64_t seed = 0;
};

struct PreprocessConfig {
  std::set<std::string> stopwords;
  // ECMAScript regular expressions; each match is replaced by a space.
  std::vector<std::string> strip_patterns;
  bool lowercase = true;
};

// The shipped English stopword list: function words, pronouns and common
// auxiliary participles ("been", "being", "having", ...).
const std::set<std::string>& default_stopwords();

// Stopwords above, code fences and HTML tags stripped, lowercasing on.
PreprocessConfig default_preprocess_config();

// Idempotent: preprocess(preprocess(t)) == preprocess(t).
std::string preprocess(std::string_view text, const PreprocessConfig& config);

struct RecordIssue {
  enum class Kind { Parse, Validation, Duplicate };
  Kind kind;
  std::size_t line;  // 1-based
  std::string id;    // empty when the record could not be parsed far enough
  std::string message;
};

struct LoadResult {
  std::vector<QAPair> pairs;
  std::vector<RecordIssue> issues;

  bool ok() const noexcept { return issues.empty(); }
  // Raises ParseError or ValidationError describing the first issue.
  void throw_if_issues() const;
};

// One JSON object per line with fields id, question, answer, accepted.
// Blank lines are ignored. Bad records are collected in `issues`, never
// silently dropped.
LoadResult load_corpus(const std::filesystem::path& path, const PreprocessConfig& config);
LoadResult parse_corpus(std::string_view contents, const PreprocessConfig& config);

std::string format_corpus(const std::vector<QAPair>& pairs);
void save_corpus(const std::filesystem::path& path, const std::vector<QAPair>& pairs);

// Planted-signal generator over a closed technical vocabulary. Accepted
// answers carry a quality-marker bigram with probability `signal_strength`,
// unaccepted answers with probability 1 - signal_strength. Both classes also
// carry lone marker words as distractors so that only the adjacent pair is
// informative.
std::vector<QAPair> synthesize_corpus(std::uint64_t seed, std::size_t n_accepted,
                                      std::size_t n_unaccepted, double signal_strength);

const std::vector<std::pair<std::string, std::string>>& quality_markers();
bool contains_quality_marker(std::string_view text);

CorpusSplit make_split(const std::vector<QAPair>& pairs, ClassCounts train_ratio,
                       ClassCounts test_ratio, std::uint64_t seed);

// Split manifest: enough to rebuild a CorpusSplit from the source corpus.
struct SplitManifest {
  std::uint64_t seed = 0;
  ClassCounts train_ratio;
  ClassCounts test_ratio;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

SplitManifest manifest_of(const CorpusSplit& split);
std::string format_split_manifest(const SplitManifest& m);
SplitManifest parse_split_manifest(std::string_view contents);
void save_split_manifest(const std::filesystem::path& path, const SplitManifest& m);
SplitManifest load_split_manifest(const std::filesystem::path& path);
CorpusSplit apply_split_manifest(const std::vector<QAPair>& pairs, const SplitManifest& m);

// Hash of the formatted corpus, recorded in run manifests.
std::string corpus_digest(const std::vector<QAPair>& pairs);

}  // namespace supportqa
