#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

// Eigen must come before httplib: <resolv.h> defines a _res macro.
#include "supportqa/serving.hpp"

#include "httplib.h"
#include "json.hpp"

namespace supportqa {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct ScoringService::Snapshot {
  LoadedModel model;
};

struct ScoringService::Server {
  httplib::Server http;
  std::thread thread;
};

namespace {

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

ScoreRequest parse_score_request(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    throw ClientError("request body is not valid JSON");
  }
  if (!j.is_object()) throw ClientError("request body must be an object");
  ScoreRequest r;
  for (auto [field, dest] : {std::pair{"question", &r.question}, std::pair{"answer", &r.answer}}) {
    if (!j.contains(field)) throw ClientError(std::string("missing field '") + field + "'");
    if (!j[field].is_string()) throw ClientError(std::string("field '") + field + "' must be a string");
    *dest = j[field].get<std::string>();
  }
  return r;
}

json entry_json(const RegistryEntry& e) {
  return {{"name", e.name},
          {"version", e.version},
          {"digest", e.digest},
          {"checkpoint_sha256", e.checkpoint_sha256},
          {"vocab_sha256", e.vocab_sha256}};
}

}  // namespace

ScoringService::ScoringService(const ModelRegistry& registry, ServiceOptions options)
    : registry_(registry), options_(std::move(options)) {
  snapshot_ = std::make_shared<const Snapshot>(Snapshot{registry_.load(options_.model_name, options_.version)});
}

ScoringService::~ScoringService() { stop(); }

std::shared_ptr<const ScoringService::Snapshot> ScoringService::snapshot() const {
  std::lock_guard guard(snapshot_mutex_);
  return snapshot_;
}

std::uint64_t ScoringService::model_version() const { return snapshot()->model.entry.version; }

std::uint64_t ScoringService::swap(std::optional<std::uint64_t> version) {
  auto next = std::make_shared<const Snapshot>(Snapshot{registry_.load(options_.model_name, version)});
  const auto v = next->model.entry.version;
  std::lock_guard guard(snapshot_mutex_);
  snapshot_ = std::move(next);
  return v;
}

ScoreResponse ScoringService::score(const ScoreRequest& request) const {
  const auto t0 = Clock::now();
  const auto snap = snapshot();
  const std::string q = preprocess(request.question, options_.preprocess);
  const std::string a = preprocess(request.answer, options_.preprocess);
  if (q.empty()) throw ClientError("field 'question' is empty after preprocessing");
  if (a.empty()) throw ClientError("field 'answer' is empty after preprocessing");
  const auto& m = snap->model;
  const auto input = encode_pair(q, a, m.vocab, m.params.config.max_seq_len);
  const auto pred = predict_quality(m.params, input, m.params.config.n_layers);
  ScoreResponse r;
  r.label = pred.accepted ? "accepted" : "unaccepted";
  r.probability = pred.p_accepted;
  r.model_version = m.entry.version;
  r.latency_ms = elapsed_ms(t0);
  return r;
}

void ScoringService::bind() {
  server_ = std::make_unique<Server>();
  auto& http = server_->http;

  http.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
    const auto t0 = Clock::now();
    try {
      auto r = score(parse_score_request(req.body));
      r.latency_ms = elapsed_ms(t0);
      reply(res, 200,
            {{"label", r.label}, {"probability", r.probability}, {"model_version", r.model_version},
             {"latency_ms", r.latency_ms}});
    } catch (const ClientError& e) {
      reply(res, 400, {{"error", e.what()}});
    }
  });
  http.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    const auto snap = snapshot();
    reply(res, 200, {{"status", "ok"}, {"model", snap->model.entry.name}, {"model_version", snap->model.entry.version}});
  });
  http.Get("/model", [this](const httplib::Request&, httplib::Response& res) {
    const auto snap = snapshot();
    json j = entry_json(snap->model.entry);
    j["config"] = json::parse(snap->model.params.config.to_json());
    reply(res, 200, j);
  });
  http.Post("/model", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::uint64_t> version;
    try {
      if (!req.body.empty()) {
        const auto j = json::parse(req.body);
        if (j.contains("version")) version = j.at("version").get<std::uint64_t>();
      }
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", std::string("bad swap request: ") + e.what()}});
      return;
    }
    try {
      reply(res, 200, {{"model_version", swap(version)}});
    } catch (const Error& e) {
      reply(res, 409, {{"error", e.what()}});
    }
  });
  http.set_tcp_nodelay(true);
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    } catch (...) {
      reply(res, 500, {{"error", "unknown failure"}});
    }
  });

  if (options_.bind.port == 0) {
    port_ = http.bind_to_any_port(options_.bind.host);
  } else {
    port_ = http.bind_to_port(options_.bind.host, options_.bind.port) ? options_.bind.port : -1;
  }
  if (port_ <= 0) {
    server_.reset();
    throw IoError("serve: cannot bind " + options_.bind.host + ":" + std::to_string(options_.bind.port));
  }
}

int ScoringService::start() {
  if (server_) throw Error("serve: already running");
  bind();
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
  return port_;
}

void ScoringService::run() {
  if (server_) throw Error("serve: already running");
  bind();
  server_->http.listen_after_bind();
}

void ScoringService::stop() {
  if (!server_) return;
  server_->http.stop();
  if (server_->thread.joinable()) server_->thread.join();
  server_.reset();
}

// ---------------------------------------------------------------------------
// Load generator

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile: empty sample");
  if (!(q > 0.0 && q <= 100.0)) throw RangeError("percentile: q must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

BenchResult bench_endpoint(const std::string& host, int port, std::size_t n, std::size_t concurrency,
                           const std::vector<ScoreRequest>& requests) {
  if (n == 0 || concurrency == 0) throw ConfigError("bench: n and concurrency must be >= 1");
  if (requests.empty()) throw ConfigError("bench: no request bodies");
  std::vector<std::string> bodies;
  for (const auto& r : requests) bodies.push_back(json{{"question", r.question}, {"answer", r.answer}}.dump());

  std::vector<double> client_ms(n), server_ms(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::string first_error;

  auto worker = [&] {
    httplib::Client cli(host, port);
    cli.set_keep_alive(true);
    cli.set_tcp_nodelay(true);
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      const auto t0 = Clock::now();
      auto res = cli.Post("/score", bodies[i % bodies.size()], "application/json");
      const double ms = elapsed_ms(t0);
      std::string err;
      if (!res) {
        err = "request " + std::to_string(i) + ": " + httplib::to_string(res.error());
      } else if (res->status != 200) {
        err = "request " + std::to_string(i) + ": HTTP " + std::to_string(res->status) + " " + res->body;
      } else {
        try {
          server_ms[i] = json::parse(res->body).at("latency_ms").get<double>();
        } catch (const json::exception& e) {
          err = "request " + std::to_string(i) + ": malformed response: " + e.what();
        }
      }
      if (!err.empty()) {
        std::lock_guard guard(error_mutex);
        if (!failed.exchange(true)) first_error = err;
        return;
      }
      client_ms[i] = ms;
    }
  };

  const auto start = Clock::now();
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < concurrency; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  const double wall = elapsed_ms(start) / 1000.0;
  if (failed) throw Error("bench aborted: " + first_error);

  BenchResult b;
  b.requests = n;
  b.concurrency = concurrency;
  b.p50_ms = percentile(client_ms, 50);
  b.p95_ms = percentile(client_ms, 95);
  b.p99_ms = percentile(client_ms, 99);
  b.server_p50_ms = percentile(server_ms, 50);
  b.server_p95_ms = percentile(server_ms, 95);
  b.server_p99_ms = percentile(server_ms, 99);
  b.wall_s = wall;
  b.throughput_per_s = wall > 0 ? static_cast<double>(n) / wall : 0.0;
  return b;
}

}  // namespace supportqa
