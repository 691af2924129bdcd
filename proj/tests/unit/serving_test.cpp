#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "supportqa/container.hpp"
#include "supportqa/digest.hpp"
#include "supportqa/serving.hpp"
#include "test_support.hpp"

// Eigen must come before httplib: <resolv.h> defines a _res macro.
#include "httplib.h"
#include "json.hpp"

using namespace supportqa;
using nlohmann::json;

namespace {

struct ModelFiles {
  std::filesystem::path checkpoint;
  std::filesystem::path vocab;
  EncoderParams params;
  Vocabulary vocabulary;
};

// Writes a tiny model and its vocabulary under `dir` with the given init seed.
ModelFiles make_model(const std::filesystem::path& dir, std::uint64_t seed) {
  ModelFiles m;
  const auto pairs = synthesize_corpus(1, 20, 20, 0.9);
  std::vector<std::string> texts;
  for (const auto& p : pairs) texts.push_back(p.question + " " + p.answer);
  m.vocabulary = build_vocab(texts, 300, 1);
  EncoderConfig c;
  c.vocab_size = m.vocabulary.size();
  c.max_seq_len = 32;
  c.hidden_dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 16;
  m.params = init_params(c, seed);
  m.params.cls_w *= 100.0;
  std::filesystem::create_directories(dir);
  m.checkpoint = dir / ("model-" + std::to_string(seed) + ".ckpt");
  m.vocab = dir / "vocab.txt";
  save_checkpoint(m.checkpoint, m.params, m.vocabulary.digest());
  m.vocabulary.save(m.vocab);
  return m;
}

ServiceOptions local_options() {
  ServiceOptions o;
  o.bind.port = 0;
  return o;
}

}  // namespace

TEST(Bind, Parsing) {
  EXPECT_EQ(parse_bind("0.0.0.0:9000").host, "0.0.0.0");
  EXPECT_EQ(parse_bind("0.0.0.0:9000").port, 9000);
  EXPECT_EQ(parse_bind(":81").host, "127.0.0.1");
  EXPECT_EQ(parse_bind("localhost").port, 8080);
  EXPECT_THROW(parse_bind("host:notaport"), ConfigError);
  EXPECT_THROW(parse_bind("host:70000"), ConfigError);
}

TEST(Bind, EnvironmentOverrides) {
  ::setenv(kBindEnv, "10.0.0.1:1234", 1);
  EXPECT_EQ(bind_from_env().port, 1234);
  ::unsetenv(kBindEnv);
  EXPECT_EQ(bind_from_env({"h", 5}).port, 5);
  ::setenv(kRegistryEnv, "/srv/models", 1);
  EXPECT_EQ(registry_root_from_env("/tmp"), "/srv/models");
  ::unsetenv(kRegistryEnv);
  EXPECT_EQ(registry_root_from_env("/tmp"), "/tmp");
}

TEST(Registry, RegisterTwoVersionsAndLoad) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  const auto b = make_model(dir / "src", 2);
  ModelRegistry reg(dir / "reg");
  EXPECT_EQ(reg.register_model("support-qa", a.checkpoint, a.vocab), 1u);
  EXPECT_EQ(reg.register_model("support-qa", b.checkpoint, b.vocab), 2u);
  EXPECT_EQ(reg.versions("support-qa").size(), 2u);
  EXPECT_EQ(reg.entry("support-qa").version, 2u);
  const auto e1 = reg.entry("support-qa", 1);
  EXPECT_EQ(e1.checkpoint, dir / "reg" / "support-qa" / "v1" / "model.ckpt");
  EXPECT_EQ(e1.checkpoint_sha256, sha256_hex(read_file(a.checkpoint)));
  EXPECT_EQ(e1.digest, sha256_hex(e1.checkpoint_sha256 + ":" + e1.vocab_sha256));
  EXPECT_TRUE(reg.load("support-qa", 1).params == a.params);
  EXPECT_TRUE(reg.load("support-qa").params == b.params);
  EXPECT_THROW(reg.entry("support-qa", 3), ValidationError);
  EXPECT_THROW(reg.entry("other"), ValidationError);
  // A second registry object over the same root sees the same index.
  EXPECT_EQ(ModelRegistry(dir / "reg").entries().size(), 2u);
}

TEST(Registry, RejectsInvalidInputs) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  ModelRegistry reg(dir / "reg");
  EXPECT_THROW(reg.register_model("bad/name", a.checkpoint, a.vocab), ValidationError);
  const auto junk = dir / "junk.ckpt";
  std::ofstream(junk) << "not a checkpoint";
  EXPECT_THROW(reg.register_model("m", junk, a.vocab), FormatError);
  const auto small_vocab = dir / "small.txt";
  Vocabulary().save(small_vocab);
  EXPECT_THROW(reg.register_model("m", a.checkpoint, small_vocab), ValidationError);
  EXPECT_TRUE(reg.entries().empty());
}

TEST(Registry, TamperedFileIsDigestError) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  ModelRegistry reg(dir / "reg");
  reg.register_model("m", a.checkpoint, a.vocab);
  auto bytes = read_file(reg.entry("m").vocab);
  bytes += "extra\n";
  atomic_write_file(reg.entry("m").vocab, bytes);
  EXPECT_THROW(reg.load("m"), DigestError);
  auto opts = local_options();
  opts.model_name = "m";
  EXPECT_THROW(ScoringService(reg, opts), DigestError);
}

TEST(Registry, CrashBeforeCommitKeepsPreviousVersion) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  const auto b = make_model(dir / "src", 2);
  ModelRegistry reg(dir / "reg");
  reg.register_model("m", a.checkpoint, a.vocab);
  const auto index_before = read_file(dir / "reg" / "registry.json");
  reg.set_fault_hook([] { throw IoError("simulated crash"); });
  EXPECT_THROW(reg.register_model("m", b.checkpoint, b.vocab), IoError);
  EXPECT_EQ(read_file(dir / "reg" / "registry.json"), index_before);
  EXPECT_EQ(reg.entry("m").version, 1u);
  EXPECT_TRUE(reg.load("m").params == a.params);
  reg.set_fault_hook(nullptr);
  EXPECT_EQ(reg.register_model("m", b.checkpoint, b.vocab), 2u);
  EXPECT_TRUE(reg.load("m").params == b.params);
}

TEST(Registry, ConcurrentRegistrationsGetDistinctVersions) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  ModelRegistry reg(dir / "reg");
  std::vector<std::thread> threads;
  std::vector<std::uint64_t> got(6);
  for (std::size_t i = 0; i < got.size(); ++i) {
    threads.emplace_back([&, i] {
      // Half the writers use their own registry object, as another process would.
      if (i % 2) got[i] = ModelRegistry(dir / "reg").register_model("m", a.checkpoint, a.vocab);
      else got[i] = reg.register_model("m", a.checkpoint, a.vocab);
    });
  }
  for (auto& t : threads) t.join();
  std::sort(got.begin(), got.end());
  EXPECT_EQ(got, (std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(reg.versions("m").size(), 6u);
}

TEST(Service, InProcessScoreMatchesDirectInference) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  ModelRegistry reg(dir / "reg");
  reg.register_model("support-qa", a.checkpoint, a.vocab);
  ScoringService svc(reg, local_options());
  for (const auto& p : synthesize_corpus(9, 10, 10, 0.9)) {
    const auto r = svc.score({p.question, p.answer});
    const auto cfg = default_preprocess_config();
    const auto in = encode_pair(preprocess(p.question, cfg), preprocess(p.answer, cfg), a.vocabulary, 32);
    const auto expected = predict_quality(a.params, in, 2);
    EXPECT_NEAR(r.probability, expected.p_accepted, 1e-12);
    EXPECT_EQ(r.label, expected.accepted ? "accepted" : "unaccepted");
    EXPECT_EQ(r.model_version, 1u);
  }
  EXPECT_THROW(svc.score({"the", "restart the server"}), ClientError);  // stopwords only
}

TEST(Service, HttpEndpoints) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  ModelRegistry reg(dir / "reg");
  reg.register_model("support-qa", a.checkpoint, a.vocab);
  ScoringService svc(reg, local_options());
  const int port = svc.start();
  ASSERT_GT(port, 0);
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");
  EXPECT_EQ(json::parse(health->body)["model_version"], 1);

  const std::string q = "server keeps crashing after update", ans = "roll back the update and restart";
  auto scored = cli.Post("/score", json{{"question", q}, {"answer", ans}}.dump(), "application/json");
  ASSERT_TRUE(scored);
  EXPECT_EQ(scored->status, 200);
  const auto body = json::parse(scored->body);
  EXPECT_NEAR(body["probability"].get<double>(), svc.score({q, ans}).probability, 1e-6);
  EXPECT_GE(body["latency_ms"].get<double>(), 0.0);

  for (const std::string bad : {R"({"question":"x"})", "not json", R"([1,2])", R"({"question":"a","answer":3})"}) {
    auto r = cli.Post("/score", bad, "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400) << bad;
    EXPECT_TRUE(json::parse(r->body).contains("error"));
  }

  auto model = cli.Get("/model");
  ASSERT_TRUE(model);
  EXPECT_EQ(json::parse(model->body)["digest"], reg.entry("support-qa").digest);

  auto missing = cli.Post("/model", R"({"version":7})", "application/json");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 409);
  EXPECT_EQ(svc.model_version(), 1u);
  svc.stop();
}

TEST(Service, SameInputSameOutput) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  ModelRegistry reg(dir / "reg");
  reg.register_model("support-qa", a.checkpoint, a.vocab);
  ScoringService svc(reg, local_options());
  const auto first = svc.score({"disk is full", "clean old logs"});
  for (int i = 0; i < 20; ++i) EXPECT_EQ(svc.score({"disk is full", "clean old logs"}).probability, first.probability);
}

TEST(Service, SwapMidStreamNeverFailsOrRegresses) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  const auto b = make_model(dir / "src", 2);
  ModelRegistry reg(dir / "reg");
  reg.register_model("support-qa", a.checkpoint, a.vocab);
  ScoringService svc(reg, local_options());
  const int port = svc.start();
  reg.register_model("support-qa", b.checkpoint, b.vocab);

  std::atomic<int> failures{0};
  std::atomic<bool> regressed{false};
  std::atomic<int> done{0};
  std::vector<std::thread> clients;
  for (int c = 0; c < 3; ++c) {
    clients.emplace_back([&] {
      httplib::Client cli("127.0.0.1", port);
      std::uint64_t last = 0;
      for (int i = 0; i < 60; ++i) {
        auto r = cli.Post("/score", R"({"question":"login fails","answer":"reset the token"})", "application/json");
        if (!r || r->status != 200) {
          ++failures;
          continue;
        }
        const auto v = json::parse(r->body)["model_version"].get<std::uint64_t>();
        if (v < last) regressed = true;
        last = v;
        ++done;
      }
    });
  }
  while (done < 30) std::this_thread::yield();
  httplib::Client admin("127.0.0.1", port);
  auto swapped = admin.Post("/model", "{}", "application/json");
  ASSERT_TRUE(swapped);
  EXPECT_EQ(swapped->status, 200);
  for (auto& t : clients) t.join();
  EXPECT_EQ(failures, 0);
  EXPECT_FALSE(regressed);
  EXPECT_EQ(svc.model_version(), 2u);
  EXPECT_EQ(svc.swap(1), 1u);
}

TEST(Bench, NearestRankPercentiles) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(percentile(v, 50), 50.0);
  EXPECT_EQ(percentile(v, 95), 95.0);
  EXPECT_EQ(percentile(v, 99), 99.0);
  EXPECT_EQ(percentile(v, 100), 100.0);
  EXPECT_EQ(percentile({3.0}, 50), 3.0);
  EXPECT_EQ(percentile({1.0, 2.0}, 50), 1.0);
  EXPECT_THROW(percentile({}, 50), ValidationError);
  EXPECT_THROW(percentile({1.0}, 0), RangeError);
}

TEST(Bench, EndpointReportsOrderedPercentiles) {
  sqa_test::TempDir dir;
  const auto a = make_model(dir / "src", 1);
  ModelRegistry reg(dir / "reg");
  reg.register_model("support-qa", a.checkpoint, a.vocab);
  ScoringService svc(reg, local_options());
  const int port = svc.start();
  const auto r = bench_endpoint("127.0.0.1", port, 60, 3, {{"disk full", "clean logs"}, {"login fails", "reset token"}});
  EXPECT_EQ(r.requests, 60u);
  EXPECT_EQ(r.concurrency, 3u);
  EXPECT_LE(r.p50_ms, r.p95_ms);
  EXPECT_LE(r.p95_ms, r.p99_ms);
  EXPECT_LE(r.server_p50_ms, r.p50_ms);
  EXPECT_GT(r.throughput_per_s, 0.0);
  EXPECT_THROW(bench_endpoint("127.0.0.1", port, 5, 1, {{"", "x"}}), Error);
}
