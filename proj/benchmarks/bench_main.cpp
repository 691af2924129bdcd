// Microbenchmarks for the inference path at the default encoder size.

#include <benchmark/benchmark.h>

#include "supportqa/container.hpp"
#include "supportqa/corpus.hpp"
#include "supportqa/encoder.hpp"
#include "supportqa/tokenizer.hpp"

using namespace supportqa;

namespace {

struct Setup {
  std::vector<QAPair> pairs;
  Vocabulary vocab;
  EncoderParams params;
  std::vector<EncodedPair> inputs;

  Setup() {
    pairs = synthesize_corpus(1, 100, 100, 0.95);
    std::vector<std::string> texts;
    for (const auto& p : pairs) texts.push_back(p.question + " " + p.answer);
    vocab = build_vocab(texts, 2000, 2);
    EncoderConfig c;
    c.vocab_size = vocab.size();
    params = init_params(c, 1);
    for (const auto& p : pairs) inputs.push_back(encode_qa(p, vocab, c.max_seq_len));
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_PredictByDepth(benchmark::State& state) {
  const auto& s = setup();
  const auto depth = static_cast<std::size_t>(state.range(0));
  const auto params = truncate(s.params, depth);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict_quality(params, s.inputs[i++ % s.inputs.size()], depth));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}
BENCHMARK(BM_PredictByDepth)->DenseRange(1, 4)->Unit(benchmark::kMicrosecond);

void BM_EncodePair(benchmark::State& state) {
  const auto& s = setup();
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& p = s.pairs[i++ % s.pairs.size()];
    benchmark::DoNotOptimize(encode_pair(p.question, p.answer, s.vocab, s.params.config.max_seq_len));
  }
}
BENCHMARK(BM_EncodePair);

void BM_CheckpointDecode(benchmark::State& state) {
  const auto bytes = encode_container(encoder_to_container(setup().params, ""));
  for (auto _ : state) benchmark::DoNotOptimize(encoder_from_container(decode_container(bytes)));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_CheckpointDecode)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
