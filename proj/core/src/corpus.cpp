#include "supportqa/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "supportqa/container.hpp"
#include "supportqa/digest.hpp"
#include "supportqa/errors.hpp"
#include "supportqa/rng.hpp"
#include "supportqa/text.hpp"

namespace supportqa {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Preprocessing

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> kStopwords = {
      "a",        "about",   "above",   "after",    "again",     "against", "all",
      "am",       "an",      "and",     "any",      "are",       "as",      "at",
      "be",       "because", "been",    "before",   "being",     "below",   "between",
      "both",     "but",     "by",      "can",      "could",     "did",     "do",
      "does",     "doing",   "done",    "down",     "during",    "each",    "few",
      "for",      "from",    "further", "had",      "has",       "have",    "having",
      "he",       "her",     "here",    "hers",     "herself",   "him",     "himself",
      "his",      "how",     "i",       "if",       "in",        "into",    "is",
      "it",       "its",     "itself",  "just",     "me",        "more",    "most",
      "my",       "myself",  "no",      "nor",      "not",       "now",     "of",
      "off",      "on",      "once",    "only",     "or",        "other",   "ought",
      "our",      "ours",    "ourselves", "out",    "over",      "own",     "same",
      "she",      "should",  "so",      "some",     "such",      "than",    "that",
      "the",      "their",   "theirs",  "them",     "themselves", "then",   "there",
      "these",    "they",    "this",    "those",    "through",   "to",      "too",
      "under",    "until",   "up",      "very",     "was",       "we",      "were",
      "what",     "when",    "where",   "which",    "while",     "who",     "whom",
      "why",      "will",    "with",    "would",    "you",       "your",    "yours",
      "yourself", "yourselves", "gone", "got",      "gotten",    "made",    "said",
      "seen",     "taken",   "using",   "used",     "getting",   "going",   "trying",
  };
  return kStopwords;
}

PreprocessConfig default_preprocess_config() {
  PreprocessConfig c;
  c.stopwords = default_stopwords();
  c.strip_patterns = {"```[\\s\\S]*?```", "<[^>]*>"};
  c.lowercase = true;
  return c;
}

namespace {

class Preprocessor {
 public:
  explicit Preprocessor(const PreprocessConfig& config) : config_(config) {
    patterns_.reserve(config.strip_patterns.size());
    for (const auto& p : config.strip_patterns) {
      try {
        patterns_.emplace_back(p, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw ConfigError("invalid strip pattern '" + p + "': " + e.what());
      }
    }
  }

  std::string operator()(std::string_view input) const {
    std::string current = pass(input);
    // A removal can expose a new match (or a new stopword boundary); iterate
    // to a fixpoint. Each non-final pass strictly removes non-space content.
    for (int i = 0; i < 64; ++i) {
      std::string next = pass(current);
      if (next == current) break;
      current = std::move(next);
    }
    return current;
  }

 private:
  std::string pass(std::string_view input) const {
    std::string s(input);
    for (const auto& re : patterns_) s = std::regex_replace(s, re, " ");
    if (config_.lowercase) s = text::ascii_lower(s);
    std::vector<std::string> kept;
    for (auto& tok : text::split_whitespace(s)) {
      if (config_.stopwords.contains(text::ascii_lower(tok))) continue;
      kept.push_back(std::move(tok));
    }
    return text::join(kept, " ");
  }

  const PreprocessConfig& config_;
  std::vector<std::regex> patterns_;
};

}  // namespace

std::string preprocess(std::string_view text, const PreprocessConfig& config) {
  return Preprocessor(config)(text);
}

// ---------------------------------------------------------------------------
// Loading / saving

void LoadResult::throw_if_issues() const {
  if (issues.empty()) return;
  const auto& first = issues.front();
  const std::string suffix =
      issues.size() > 1 ? " (+" + std::to_string(issues.size() - 1) + " more)" : "";
  if (first.kind == RecordIssue::Kind::Parse) {
    throw ParseError(first.message + suffix, first.line);
  }
  throw ValidationError("line " + std::to_string(first.line) + ", id '" + first.id +
                        "': " + first.message + suffix);
}

LoadResult parse_corpus(std::string_view contents, const PreprocessConfig& config) {
  const Preprocessor prep(config);
  LoadResult result;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= contents.size()) {
    const auto nl = contents.find('\n', pos);
    const auto end = nl == std::string_view::npos ? contents.size() : nl;
    std::string_view line = contents.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (std::all_of(line.begin(), line.end(), text::is_ascii_space)) {
      if (nl == std::string_view::npos) break;
      continue;
    }

    auto issue = [&](RecordIssue::Kind kind, std::string id, std::string msg) {
      result.issues.push_back({kind, line_no, std::move(id), std::move(msg)});
    };

    json rec = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded() || !rec.is_object()) {
      issue(RecordIssue::Kind::Parse, "", "malformed record: not a JSON object");
    } else if (!rec.contains("id") || !rec["id"].is_string() || rec["id"].get<std::string>().empty()) {
      issue(RecordIssue::Kind::Parse, "", "malformed record: missing string field 'id'");
    } else {
      const auto id = rec["id"].get<std::string>();
      const char* missing = nullptr;
      if (!rec.contains("question") || !rec["question"].is_string()) missing = "question";
      else if (!rec.contains("answer") || !rec["answer"].is_string()) missing = "answer";
      else if (!rec.contains("accepted") || !rec["accepted"].is_boolean()) missing = "accepted";
      if (missing) {
        issue(RecordIssue::Kind::Parse, id,
              std::string("malformed record: missing or mistyped field '") + missing + "'");
      } else if (seen.contains(id)) {
        issue(RecordIssue::Kind::Duplicate, id, "duplicate id");
      } else {
        QAPair p{id, prep(rec["question"].get<std::string>()),
                 prep(rec["answer"].get<std::string>()), rec["accepted"].get<bool>()};
        if (p.question.empty() || p.answer.empty()) {
          issue(RecordIssue::Kind::Validation, id,
                std::string(p.question.empty() ? "question" : "answer") +
                    " is empty after preprocessing");
        } else {
          seen.insert(id);
          result.pairs.push_back(std::move(p));
        }
      }
    }
    if (nl == std::string_view::npos) break;
  }
  return result;
}

LoadResult load_corpus(const std::filesystem::path& path, const PreprocessConfig& config) {
  if (!std::filesystem::exists(path)) throw IoError("corpus file not found: " + path.string());
  return parse_corpus(read_file(path), config);
}

std::string format_corpus(const std::vector<QAPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    json rec = json::object();
    rec["id"] = p.id;
    rec["question"] = p.question;
    rec["answer"] = p.answer;
    rec["accepted"] = p.accepted;
    out += rec.dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, const std::vector<QAPair>& pairs) {
  atomic_write_file(path, format_corpus(pairs));
}

std::string corpus_digest(const std::vector<QAPair>& pairs) {
  return sha256_hex(format_corpus(pairs));
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr std::array kTopics = {
    "proxy",    "driver",   "registry", "certificate", "firewall", "mailbox",  "database",
    "printer",  "domain",   "cluster",  "gateway",     "kernel",   "browser",  "compiler",
    "installer", "account", "license",  "backup",      "vpn",      "dns",      "webserver",
    "scheduler", "repository", "container", "hypervisor", "socket", "bluetooth", "keyboard",
    "display",  "spreadsheet"};

constexpr std::array kActions = {
    "configure", "install", "reset",   "migrate", "update",   "enable",  "disable",
    "deploy",    "restore", "connect", "upgrade", "remove",   "sync",    "register",
    "compile",   "export",  "import",  "rename",  "schedule", "monitor"};

constexpr std::array kProblems = {
    "timeout",  "crash",    "freeze",  "denied",      "mismatch", "corrupted", "missing",
    "expired",  "slow",     "failing", "hang",        "overflow", "conflict",  "unreachable",
    "blocked",  "leak",     "invalid", "locked",      "stale",    "rejected"};

constexpr std::array kFillers = {
    "settings", "version",  "panel",    "option",   "folder",   "service",  "server",
    "client",   "policy",   "profile",  "console",  "network",  "port",     "cache",
    "session",  "token",    "path",     "file",     "window",   "tab",      "menu",
    "wizard",   "template", "module",   "package",  "thread",   "queue",    "host",
    "node",     "role",     "group",    "user",     "admin",    "permission", "field",
    "value",    "entry",    "record",   "table",    "column",   "index",    "query",
    "report",   "page",     "site",     "link",     "button",   "screen",   "message",
    "event",    "process",  "task",     "job",      "agent",    "channel",  "endpoint",
    "store",    "key",      "firmware", "partition", "volume",  "certificate", "log",
    "trace",    "build",    "release",  "update",   "patch",    "config",   "parameter",
    "variable", "library",  "framework", "runtime", "plugin",   "extension", "instance"};

constexpr std::array kGlue = {"the", "to", "it", "then", "and", "on", "in", "with", "your"};

// Sorted so the generator is independent of map iteration order.
const std::vector<std::pair<std::string, std::string>> kMarkers = {
    {"verified", "workaround"}, {"official", "documentation"}, {"tested", "fix"},
    {"detailed", "steps"},      {"root", "cause"},             {"sample", "script"}};

// Distractor knobs: each answer gets a lone marker word (one side of a pair
// whose partner never appears) with this probability, repeated once or twice.
constexpr double kLoneRate = 0.6;
constexpr double kLoneRepeat = 0.5;

template <std::size_t N>
std::string pick(Rng& rng, const std::array<const char*, N>& words) {
  return words[rng.below(N)];
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string make_question(Rng& rng, const std::string& topic) {
  const auto action = pick(rng, kActions);
  const auto problem = pick(rng, kProblems);
  std::vector<std::string> w;
  switch (rng.below(4)) {
    case 0:
      w = {"how", "do", "i", action, "the", topic};
      break;
    case 1:
      w = {topic, problem, "after", "i", action, "the", pick(rng, kFillers)};
      break;
    case 2:
      w = {"why", "does", "the", topic, pick(rng, kFillers), "show", problem, "when", "i", action, "it"};
      break;
    default:
      w = {"cannot", action, topic, pick(rng, kFillers), "getting", problem};
      break;
  }
  const auto extra = rng.below(5);
  for (std::uint64_t i = 0; i < extra; ++i) w.push_back(pick(rng, kFillers));
  w[0] = capitalize(w[0]);
  return text::join(w, " ") + "?";
}

struct AnswerDraft {
  std::vector<std::vector<std::string>> sentences;

  void insert(Rng& rng, const std::vector<std::string>& phrase) {
    auto& s = sentences[rng.below(sentences.size())];
    const auto at = rng.below(s.size() + 1);
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(at), phrase.begin(), phrase.end());
  }

  std::string render() const {
    std::vector<std::string> out;
    for (const auto& s : sentences) {
      auto words = s;
      words[0] = capitalize(words[0]);
      out.push_back(text::join(words, " ") + ".");
    }
    return text::join(out, " ");
  }
};

std::string make_answer(Rng& rng, const std::string& topic, bool with_marker) {
  AnswerDraft d;
  const auto n_sentences = 1 + rng.below(5);
  for (std::uint64_t s = 0; s < n_sentences; ++s) {
    std::vector<std::string> words;
    const auto len = 2 + rng.below(9);
    for (std::uint64_t i = 0; i < len; ++i) {
      const auto r = rng.uniform();
      if (r < 0.15) words.push_back(pick(rng, kGlue));
      else if (r < 0.30) words.push_back(pick(rng, kActions));
      else if (r < 0.38) words.push_back(pick(rng, kProblems));
      else words.push_back(pick(rng, kFillers));
    }
    if (s == 0) words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), topic);
    d.sentences.push_back(std::move(words));
  }

  // The distractor goes in before the bigram so it can never split it.
  const auto m = rng.below(kMarkers.size());
  if (rng.bernoulli(kLoneRate)) {
    std::uint64_t lone;
    do {
      lone = rng.below(kMarkers.size());
    } while (with_marker && lone == m);
    const auto& word = rng.bernoulli(0.5) ? kMarkers[lone].first : kMarkers[lone].second;
    d.insert(rng, {word});
    if (rng.bernoulli(kLoneRepeat)) d.insert(rng, {word});
  }
  if (with_marker) d.insert(rng, {kMarkers[m].first, kMarkers[m].second});
  return d.render();
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& quality_markers() { return kMarkers; }

bool contains_quality_marker(std::string_view t) {
  const auto w = text::words(t);
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    for (const auto& [a, b] : kMarkers) {
      if (w[i] == a && w[i + 1] == b) return true;
    }
  }
  return false;
}

std::vector<QAPair> synthesize_corpus(std::uint64_t seed, std::size_t n_accepted,
                                      std::size_t n_unaccepted, double signal_strength) {
  if (n_accepted == 0 || n_unaccepted == 0) {
    throw ConfigError("synthesize_corpus: class counts must be positive");
  }
  if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) {
    throw ConfigError("synthesize_corpus: signal_strength must lie in [0, 1]");
  }
  Rng rng(derive_seed(seed, {0x5e7}));
  std::vector<bool> labels(n_accepted, true);
  labels.resize(n_accepted + n_unaccepted, false);
  rng.shuffle(labels);

  std::vector<QAPair> out;
  out.reserve(labels.size());
  char idbuf[48];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool accepted = labels[i];
    const std::string topic = pick(rng, kTopics);
    const bool marker = rng.bernoulli(accepted ? signal_strength : 1.0 - signal_strength);
    std::snprintf(idbuf, sizeof(idbuf), "syn%llu-%06zu", static_cast<unsigned long long>(seed), i);
    QAPair p;
    p.id = idbuf;
    p.question = make_question(rng, topic);
    p.answer = make_answer(rng, topic, marker);
    p.accepted = accepted;
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

CorpusSplit make_split(const std::vector<QAPair>& pairs, ClassCounts train_ratio,
                       ClassCounts test_ratio, std::uint64_t seed) {
  std::vector<std::size_t> acc, unacc;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!ids.insert(pairs[i].id).second) {
      throw ValidationError("make_split: duplicate id '" + pairs[i].id + "'");
    }
    (pairs[i].accepted ? acc : unacc).push_back(i);
  }
  const std::size_t need_acc = train_ratio.accepted + test_ratio.accepted;
  const std::size_t need_un = train_ratio.unaccepted + test_ratio.unaccepted;
  const std::size_t short_acc = need_acc > acc.size() ? need_acc - acc.size() : 0;
  const std::size_t short_un = need_un > unacc.size() ? need_un - unacc.size() : 0;
  if (short_acc || short_un) {
    std::ostringstream msg;
    msg << "make_split: insufficient pairs (accepted shortfall " << short_acc
        << ", unaccepted shortfall " << short_un << ")";
    throw CapacityError(msg.str(), short_acc, short_un);
  }

  Rng rng(derive_seed(seed, {0x59117}));
  rng.shuffle(acc);
  rng.shuffle(unacc);

  CorpusSplit split;
  split.train_ratio = train_ratio;
  split.test_ratio = test_ratio;
  split.seed = seed;
  auto take = [&](const std::vector<std::size_t>& from, std::size_t begin, std::size_t n,
                  std::vector<QAPair>& into) {
    for (std::size_t k = begin; k < begin + n; ++k) into.push_back(pairs[from[k]]);
  };
  take(acc, 0, test_ratio.accepted, split.test);
  take(unacc, 0, test_ratio.unaccepted, split.test);
  take(acc, test_ratio.accepted, train_ratio.accepted, split.train);
  take(unacc, test_ratio.unaccepted, train_ratio.unaccepted, split.train);
  // Interleave classes so downstream consumers never see one long class run.
  rng.shuffle(split.train);
  rng.shuffle(split.test);
  return split;
}

SplitManifest manifest_of(const CorpusSplit& split) {
  SplitManifest m;
  m.seed = split.seed;
  m.train_ratio = split.train_ratio;
  m.test_ratio = split.test_ratio;
  for (const auto& p : split.train) m.train_ids.push_back(p.id);
  for (const auto& p : split.test) m.test_ids.push_back(p.id);
  return m;
}

std::string format_split_manifest(const SplitManifest& m) {
  std::ostringstream out;
  out << "# supportqa split manifest v1\n";
  out << "seed " << m.seed << "\n";
  out << "train_ratio " << m.train_ratio.accepted << " " << m.train_ratio.unaccepted << "\n";
  out << "test_ratio " << m.test_ratio.accepted << " " << m.test_ratio.unaccepted << "\n";
  for (const auto& id : m.train_ids) out << "train " << id << "\n";
  for (const auto& id : m.test_ids) out << "test " << id << "\n";
  return out.str();
}

SplitManifest parse_split_manifest(std::string_view contents) {
  SplitManifest m;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  bool have_seed = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") {
      if (!(ls >> m.seed)) throw ParseError("bad seed", line_no);
      have_seed = true;
    } else if (key == "train_ratio") {
      if (!(ls >> m.train_ratio.accepted >> m.train_ratio.unaccepted)) throw ParseError("bad train_ratio", line_no);
    } else if (key == "test_ratio") {
      if (!(ls >> m.test_ratio.accepted >> m.test_ratio.unaccepted)) throw ParseError("bad test_ratio", line_no);
    } else if (key == "train" || key == "test") {
      std::string id;
      if (!(ls >> id)) throw ParseError("missing id", line_no);
      (key == "train" ? m.train_ids : m.test_ids).push_back(id);
    } else {
      throw ParseError("unknown manifest key '" + key + "'", line_no);
    }
  }
  if (!have_seed) throw ParseError("manifest has no seed line", line_no);
  return m;
}

void save_split_manifest(const std::filesystem::path& path, const SplitManifest& m) {
  atomic_write_file(path, format_split_manifest(m));
}

SplitManifest load_split_manifest(const std::filesystem::path& path) {
  return parse_split_manifest(read_file(path));
}

CorpusSplit apply_split_manifest(const std::vector<QAPair>& pairs, const SplitManifest& m) {
  std::map<std::string, const QAPair*> by_id;
  for (const auto& p : pairs) by_id[p.id] = &p;
  CorpusSplit split;
  split.seed = m.seed;
  split.train_ratio = m.train_ratio;
  split.test_ratio = m.test_ratio;
  auto fill = [&](const std::vector<std::string>& ids, std::vector<QAPair>& into) {
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ValidationError("split manifest references unknown id '" + id + "'");
      into.push_back(*it->second);
    }
  };
  fill(m.train_ids, split.train);
  fill(m.test_ids, split.test);
  return split;
}

}  // namespace supportqa
