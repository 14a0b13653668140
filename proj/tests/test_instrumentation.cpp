#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

#include "videoscan/error.hpp"
#include "videoscan/instrumentation.hpp"
#include "videoscan/random.hpp"

namespace vs = videoscan;

namespace {

const std::vector<std::int32_t> kSystem = {0, 1, 2, 3};
const std::vector<std::int32_t> kQuestion = {5, 6};

vs::ModelConfig small_config() {
  vs::ModelConfig c;
  c.model_dim = 16;
  c.ff_dim = 32;
  c.vocab_size = 32;
  c.tokens_per_frame = 3;
  c.memory_capacity = 4;
  c.max_positions = 512;
  return c;
}

struct Captured {
  std::vector<std::vector<float>> logits;
  vs::AttentionTrace trace;
};

Captured run_session(bool capture, vs::CaptureFilter filter = {}, std::size_t frames = 6,
                     std::size_t max_new = 3) {
  const auto c = small_config();
  auto s = vs::open_session(c, vs::init_model(c, 9), kSystem);
  if (capture) s.enable_attention_capture(std::move(filter));
  for (const auto& f : vs::random_frames(frames, c.tokens_per_frame, c.model_dim, 4)) s.ingest_frame(f);
  Captured out;
  out.logits = s.ask(kQuestion, max_new, {.keep_logits = true}).step_logits;
  if (capture) out.trace = s.take_attention_trace();
  return out;
}

vs::AttentionRow generated_row(std::size_t layer, std::size_t head, std::vector<std::size_t> keys,
                               std::vector<float> weights) {
  vs::AttentionRow r;
  r.layer = layer;
  r.head = head;
  r.generating = true;
  r.key_positions = std::move(keys);
  r.key_slots.assign(r.key_positions.size(), vs::TokenSlot{vs::TokenTag::kText, -1});
  r.allowed.assign(r.key_positions.size(), 1);
  r.weights = std::move(weights);
  return r;
}

}  // namespace

TEST(Capture, TransparentToLogits) {
  const auto plain = run_session(false);
  const auto traced = run_session(true, {.dump_vectors = true});
  EXPECT_EQ(plain.logits, traced.logits);
  EXPECT_FALSE(traced.trace.rows.empty());
}

TEST(Capture, DisabledSessionIsStateError) {
  const auto c = small_config();
  auto s = vs::open_session(c, vs::init_model(c, 9), kSystem);
  try {
    s.take_attention_trace();
    FAIL();
  } catch (const vs::Error& e) {
    EXPECT_EQ(e.code(), vs::ErrorCode::kState);
  }
}

TEST(Capture, RowsSumToOne) {
  const auto r = run_session(true);
  for (const auto& row : r.trace.rows) {
    double sum = 0.0;
    for (float w : row.weights) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(Capture, SingleQueryGivesOneRowPerLayerAndHead) {
  const auto c = small_config();
  // Only the single generated step (max_new = 2 runs one decode step).
  const auto r = run_session(true, {.phases = {vs::QueryPhase::kGenerated}}, 2, 2);
  EXPECT_EQ(r.trace.rows.size(), c.layers * c.heads);
}

TEST(Capture, RowsMatchSoftmaxRecomputedFromDumpedVectors) {
  const auto r = run_session(true, {.dump_vectors = true});
  ASSERT_FALSE(r.trace.rows.empty());
  for (const auto& row : r.trace.rows) {
    const std::size_t dh = row.query.size();
    const std::size_t n = row.key_positions.size();
    ASSERT_EQ(row.keys.size(), n * dh);
    std::vector<double> s(n, -INFINITY);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (!row.allowed[j]) continue;
      double dot = 0.0;
      for (std::size_t i = 0; i < dh; ++i) dot += double(row.query[i]) * row.keys[j * dh + i];
      s[j] = dot / std::sqrt(double(dh));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += row.allowed[j] ? std::exp(s[j] - mx) : 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double expect = row.allowed[j] ? std::exp(s[j] - mx) / z : 0.0;
      EXPECT_NEAR(row.weights[j], expect, 1e-6);
    }
  }
}

TEST(Capture, FilterRestrictsLayersAndHeads) {
  const auto r = run_session(true, {.layers = std::set<std::size_t>{1}, .heads = std::set<std::size_t>{0}});
  ASSERT_FALSE(r.trace.rows.empty());
  for (const auto& row : r.trace.rows) {
    EXPECT_EQ(row.layer, 1u);
    EXPECT_EQ(row.head, 0u);
  }
}

TEST(Capture, GeneratingRowsAreMarked) {
  const auto r = run_session(true, {}, 3, 3);
  const auto c = small_config();
  std::size_t generating = 0;
  for (const auto& row : r.trace.rows) generating += row.generating;
  // The last question row plus two decode steps produce generated tokens.
  EXPECT_EQ(generating, 3 * c.layers * c.heads);
}

TEST(Averaging, OneRowEqualsItself) {
  vs::AttentionTrace t;
  t.rows.push_back(generated_row(0, 0, {0, 1, 2}, {0.2f, 0.3f, 0.5f}));
  const auto p = vs::averaged_generated_attention(t);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_FALSE(p[0].head.has_value());
  EXPECT_EQ(p[0].key_positions, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(p[0].scores[0], double(0.2f));
  EXPECT_DOUBLE_EQ(p[0].scores[2], double(0.5f));
}

TEST(Averaging, IdenticalRowsGiveThatRow) {
  vs::AttentionTrace t;
  for (std::size_t h = 0; h < 2; ++h) t.rows.push_back(generated_row(0, h, {3, 7}, {0.25f, 0.75f}));
  const auto p = vs::averaged_generated_attention(t);
  EXPECT_DOUBLE_EQ(p[0].scores[0], 0.25);
  EXPECT_DOUBLE_EQ(p[0].scores[1], 0.75);
}

TEST(Averaging, NonGeneratingRowsIgnoredAndEmptySelectionThrows) {
  vs::AttentionTrace t;
  t.rows.push_back(generated_row(0, 0, {0}, {1.0f}));
  t.rows.back().generating = false;
  try {
    vs::averaged_generated_attention(t);
    FAIL();
  } catch (const vs::Error& e) {
    EXPECT_EQ(e.code(), vs::ErrorCode::kSelection);
  }
}

TEST(Averaging, RandomTraceMatchesDirectMean) {
  vs::Rng rng(77);
  vs::AttentionTrace t;
  const std::size_t keys = 9, rows = 5, layers = 2, heads = 3;
  std::vector<std::size_t> pos(keys);
  for (std::size_t j = 0; j < keys; ++j) pos[j] = 2 * j + 1;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < rows; ++r) {
        std::vector<float> w(keys);
        double z = 0.0;
        for (auto& x : w) z += (x = static_cast<float>(rng.uniform()));
        for (auto& x : w) x = static_cast<float>(x / z);
        t.rows.push_back(generated_row(l, h, pos, w));
      }
  const auto mean = vs::averaged_generated_attention(t);
  const auto per_head = vs::per_head_generated_attention(t);
  ASSERT_EQ(mean.size(), layers);
  ASSERT_EQ(per_head.size(), layers * heads);
  for (std::size_t l = 0; l < layers; ++l) {
    double total = 0.0;
    for (std::size_t j = 0; j < keys; ++j) {
      double direct = 0.0;
      for (const auto& row : t.rows)
        if (row.layer == l) direct += row.weights[j];
      direct /= double(rows * heads);
      EXPECT_NEAR(mean[l].scores[j], direct, 1e-7);
      total += mean[l].scores[j];
    }
    EXPECT_NEAR(total, 1.0, 1e-5);
  }
}

TEST(Averaging, SessionProfilesSumToOne) {
  const auto r = run_session(true);
  for (const auto& p : vs::averaged_generated_attention(r.trace)) {
    double sum = 0.0;
    for (double s : p.scores) sum += s;
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(AttentionCsv, HeaderAndRows) {
  vs::AttentionProfile p;
  p.layer = 1;
  p.key_positions = {4, 9};
  p.key_slots = {{vs::TokenTag::kSystem, -1}, {vs::TokenTag::kCarrier, 0}};
  p.scores = {0.25, 0.75};
  auto q = p;
  q.head = 2;
  std::ostringstream out;
  vs::write_attention_csv({p, q}, out);
  EXPECT_EQ(out.str(),
            "layer,head_or_mean,key_pos,segment,score\n"
            "1,mean,4,system,0.25\n"
            "1,mean,9,carrier,0.75\n"
            "1,2,4,system,0.25\n"
            "1,2,9,carrier,0.75\n");
}

TEST(Bench, Percentile) {
  EXPECT_DOUBLE_EQ(vs::percentile({}, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(vs::percentile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(vs::percentile({1.0, 2.0, 3.0, 4.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(vs::percentile({0.0, 10.0}, 0.9), 9.0);
}

TEST(Bench, NoFramesOneQuestion) {
  const auto c = small_config();
  vs::BenchSchedule sched;
  sched.frames = 0;
  sched.question_points = {0};
  const auto r = vs::bench_serving(c, sched, 1);
  EXPECT_TRUE(r.ingest_us.empty());
  EXPECT_TRUE(r.kv_bytes.empty());
  EXPECT_EQ(r.ask_us.size(), 1u);
  const auto j = nlohmann::json::parse(r.summary_json());
  EXPECT_EQ(j.at("frames"), 0);
  EXPECT_FALSE(j.at("ask_us").is_null());
}

TEST(Bench, SeriesLengthsAndConstantFlopsAfterFill) {
  const auto c = small_config();
  vs::BenchSchedule sched;
  sched.frames = 30;
  sched.question_points = {10, 30};
  const auto r = vs::bench_serving(c, sched, 2);
  EXPECT_EQ(r.ingest_us.size(), 30u);
  EXPECT_EQ(r.ingest_flops.size(), 30u);
  EXPECT_EQ(r.kv_bytes.size(), 30u);
  EXPECT_EQ(r.ask_us.size(), 2u);
  // Frame t (1-based) with t > M sees the same S + M cached entries.
  for (std::size_t t = c.memory_capacity + 1; t < 30; ++t) {
    EXPECT_EQ(r.ingest_flops[t], r.ingest_flops[c.memory_capacity]);
  }
  const std::size_t n = c.tokens_per_frame + 1;
  const std::size_t cached = kSystem.size() + c.memory_capacity;
  EXPECT_EQ(r.ingest_flops.back(), vs::step_flops(c, n, cached));
  const auto j = nlohmann::json::parse(r.summary_json());
  for (const char* key : {"frames", "m", "ingest_us", "ask_us", "serving_fps_proxy", "kv_bytes_final",
                          "flops_per_ingest"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.at("m"), c.memory_capacity);
}

TEST(Bench, ScheduleValidation) {
  const auto c = small_config();
  vs::BenchSchedule sched;
  sched.frames = 3;
  sched.question_points = {4};
  try {
    sched.validate(c);
    FAIL();
  } catch (const vs::Error& e) {
    EXPECT_EQ(e.code(), vs::ErrorCode::kConfig);
  }
}
