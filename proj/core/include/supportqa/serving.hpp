#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "supportqa/corpus.hpp"
#include "supportqa/encoder.hpp"
#include "supportqa/errors.hpp"
#include "supportqa/tokenizer.hpp"

namespace supportqa {

// Environment overrides.
inline constexpr const char* kBindEnv = "SUPPORTQA_BIND";          // host:port
inline constexpr const char* kRegistryEnv = "SUPPORTQA_REGISTRY";  // registry root directory

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

// "host:port", ":port" or "host". Throws ConfigError.
BindAddress parse_bind(const std::string& text);
// SUPPORTQA_BIND if set, else `fallback`.
BindAddress bind_from_env(const BindAddress& fallback = {});
std::filesystem::path registry_root_from_env(const std::filesystem::path& fallback);

struct RegistryEntry {
  std::string name;
  std::uint64_t version = 0;
  std::filesystem::path checkpoint;  // absolute
  std::filesystem::path vocab;       // absolute
  std::string checkpoint_sha256;
  std::string vocab_sha256;
  std::string digest;  // sha256 over both file digests
};

struct LoadedModel {
  RegistryEntry entry;
  EncoderParams params;
  Vocabulary vocab;
};

// Versioned model store rooted at a directory:
//   <root>/registry.json             index, replaced by atomic rename
//   <root>/<name>/v<N>/model.ckpt
//   <root>/<name>/v<N>/vocab.txt
// Writers are serialized by an in-process mutex plus an advisory file lock,
// so separate processes sharing a root also see a consistent index.
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }

  // Validates both files, copies them into the store and commits a new
  // version (previous + 1, starting at 1). Throws FormatError / ValidationError
  // for invalid inputs.
  std::uint64_t register_model(const std::string& name, const std::filesystem::path& checkpoint,
                               const std::filesystem::path& vocab);

  std::vector<RegistryEntry> entries() const;
  std::vector<RegistryEntry> versions(const std::string& name) const;
  // Latest version when `version` is empty. Throws ValidationError if absent.
  RegistryEntry entry(const std::string& name, std::optional<std::uint64_t> version = std::nullopt) const;

  // Loads and verifies digests (DigestError on mismatch).
  LoadedModel load(const std::string& name, std::optional<std::uint64_t> version = std::nullopt) const;

  // Test hook run after the version files are written and before the index is
  // committed. Throwing from it simulates a crash at that point.
  void set_fault_hook(std::function<void()> hook) { fault_hook_ = std::move(hook); }

 private:
  std::filesystem::path index_path() const { return root_ / "registry.json"; }
  std::vector<RegistryEntry> read_index() const;

  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::function<void()> fault_hook_;
};

struct ScoreRequest {
  std::string question;
  std::string answer;
};

struct ScoreResponse {
  std::string label;  // "accepted" | "unaccepted"
  double probability = 0.0;  // accepted-class probability
  std::uint64_t model_version = 0;
  double latency_ms = 0.0;
};

// Raised for requests the service rejects with a 4xx status.
class ClientError : public Error {
 public:
  using Error::Error;
};

struct ServiceOptions {
  std::string model_name = "support-qa";
  std::optional<std::uint64_t> version;
  BindAddress bind;
  PreprocessConfig preprocess = default_preprocess_config();
};

// HTTP scoring service over an immutable model snapshot.
//   POST /score   {"question","answer"} -> {"label","probability","model_version","latency_ms"}
//   GET  /health  {"status":"ok","model":name,"model_version":N}
//   GET  /model   registry entry of the live snapshot
//   POST /model   {"version":N} (optional) swaps to that version, or the latest
class ScoringService {
 public:
  // Loads the snapshot; throws if the model is missing or fails verification.
  ScoringService(const ModelRegistry& registry, ServiceOptions options);
  ~ScoringService();
  ScoringService(const ScoringService&) = delete;
  ScoringService& operator=(const ScoringService&) = delete;

  // Binds and serves on a background thread. Returns the bound port.
  int start();
  // Blocks serving on the calling thread until stop() is called elsewhere.
  void run();
  void stop();
  int port() const noexcept { return port_; }
  const std::string& host() const noexcept { return options_.bind.host; }

  // In-process version of POST /score, same code path.
  ScoreResponse score(const ScoreRequest& request) const;

  // Atomically replaces the live snapshot. Requests already running finish on
  // the snapshot they started with.
  std::uint64_t swap(std::optional<std::uint64_t> version = std::nullopt);
  std::uint64_t model_version() const;

 private:
  struct Snapshot;
  struct Server;

  std::shared_ptr<const Snapshot> snapshot() const;
  void bind();

  const ModelRegistry& registry_;
  ServiceOptions options_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::unique_ptr<Server> server_;
  int port_ = 0;
};

struct BenchResult {
  std::size_t requests = 0;
  std::size_t concurrency = 0;
  double p50_ms = 0.0, p95_ms = 0.0, p99_ms = 0.0;  // client round-trip
  double server_p50_ms = 0.0, server_p95_ms = 0.0, server_p99_ms = 0.0;  // reported latency_ms
  double throughput_per_s = 0.0;
  double wall_s = 0.0;
};

// Nearest-rank percentile of an unsorted sample (q in (0, 100]).
double percentile(std::vector<double> values, double q);

// Fires `n` POST /score requests from `concurrency` client threads, cycling
// through `requests`. Throws Error describing the first non-success response.
BenchResult bench_endpoint(const std::string& host, int port, std::size_t n, std::size_t concurrency,
                           const std::vector<ScoreRequest>& requests);

}  // namespace supportqa
