#include <benchmark/benchmark.h>

#include "videoscan/instrumentation.hpp"
#include "videoscan/random.hpp"
#include "videoscan/session.hpp"
#include "videoscan/training.hpp"

namespace vs = videoscan;

namespace {

const std::vector<std::int32_t> kSystem = {60, 61, 62, 63};

vs::ModelConfig config() {
  vs::ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 32;
  c.ff_dim = 64;
  c.vocab_size = 64;
  c.tokens_per_frame = 8;
  c.memory_capacity = 64;
  c.max_positions = 1 << 20;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  vs::Rng rng(1);
  vs::Matrix a(n, n), b(n, n);
  for (auto* m : {&a, &b})
    for (float& x : m->flat()) x = static_cast<float>(rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(vs::matmul(a, b));
  state.counters["flops"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

// Steady-state ingest: the bank is already full, so every frame evicts.
void BM_IngestFullBank(benchmark::State& state) {
  auto c = config();
  c.memory_capacity = static_cast<std::size_t>(state.range(0));
  auto s = vs::open_session(c, vs::init_model(c, 1), kSystem);
  const auto frames = vs::random_frames(c.memory_capacity + 256, c.tokens_per_frame, c.model_dim, 2);
  std::size_t t = 0;
  for (; t < c.memory_capacity; ++t) s.ingest_frame(frames[t]);
  vs::FrameTokens f = frames[t];
  for (auto _ : state) {
    f.index = t++;
    f.embeddings = frames[c.memory_capacity + t % 256].embeddings;
    benchmark::DoNotOptimize(s.prefill_frame(f));
  }
}
BENCHMARK(BM_IngestFullBank)->Arg(16)->Arg(64)->Arg(256);

void BM_Ask(benchmark::State& state) {
  const auto c = config();
  auto s = vs::open_session(c, vs::init_model(c, 1), kSystem);
  for (const auto& f : vs::random_frames(c.memory_capacity, c.tokens_per_frame, c.model_dim, 2)) s.ingest_frame(f);
  const std::vector<std::int32_t> q = {1, 2, 3};
  const auto max_new = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.ask(q, max_new));
    s.reset_dialogue();
  }
}
BENCHMARK(BM_Ask)->Arg(1)->Arg(8);

void BM_ForwardStepDecode(benchmark::State& state) {
  const auto c = config();
  const vs::Model model(vs::init_model(c, 1));
  const auto cached = static_cast<std::size_t>(state.range(0));
  vs::KvCache cache(c.layers, c.model_dim);
  {
    std::vector<std::int32_t> ids(cached);
    std::vector<std::size_t> pos(cached);
    for (std::size_t i = 0; i < cached; ++i) {
      ids[i] = static_cast<std::int32_t>(i % c.vocab_size);
      pos[i] = i;
    }
    const std::vector<vs::TokenSlot> none;
    const auto mask = vs::build_streaming_mask(none, {vs::NewSegment::Kind::kText, cached, -1});
    vs::forward_step(model, cache, vs::embed_tokens(model.weights(), std::span<const std::int32_t>(ids)), pos,
                     mask, vs::TagSet::all());
  }
  const std::int32_t tok[1] = {5};
  const std::size_t pos[1] = {cached};
  const auto emb = vs::embed_tokens(model.weights(), std::span<const std::int32_t>(tok));
  const auto mask = vs::build_streaming_mask(cache.slots(), {vs::NewSegment::Kind::kText, 1, -1});
  for (auto _ : state) {
    vs::KvCache scratch = cache;
    benchmark::DoNotOptimize(vs::forward_step(model, scratch, emb, pos, mask, vs::TagSet{}));
  }
}
BENCHMARK(BM_ForwardStepDecode)->Arg(68)->Arg(512);

void BM_TrainStep(benchmark::State& state) {
  vs::ModelConfig c = config();
  c.model_dim = 64;
  c.ff_dim = 128;
  c.tokens_per_frame = 4;
  c.max_positions = 128;
  vs::TaskSpec task;
  vs::Weights w = vs::init_model(c, 1);
  vs::init_frame_stub(w, task.alphabet, 2);
  std::vector<vs::TrainingExample> batch;
  const auto layout = state.range(0) == 1 ? vs::ExampleLayout::kCarriersOnly : vs::ExampleLayout::kFull;
  for (std::size_t i = 0; i < 8; ++i) {
    batch.push_back(vs::build_example(task, c, vs::sample_stream(task, c.tokens_per_frame, c.model_dim, i), layout));
  }
  vs::Weights grad = w.zeros_like();
  for (auto _ : state) benchmark::DoNotOptimize(vs::batch_loss<float>(w, batch, &grad));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(2);

}  // namespace

BENCHMARK_MAIN();
