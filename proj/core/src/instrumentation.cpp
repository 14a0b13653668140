#include "videoscan/instrumentation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "videoscan/error.hpp"
#include "videoscan/random.hpp"

namespace videoscan {

namespace {

using GroupKey = std::pair<std::size_t, std::optional<std::size_t>>;

std::vector<AttentionProfile> average_groups(const AttentionTrace& trace, bool per_head) {
  struct Acc {
    std::map<std::size_t, double> sums;
    std::map<std::size_t, TokenSlot> slots;
    std::size_t rows = 0;
  };
  std::map<GroupKey, Acc> groups;
  for (const auto& r : trace.rows) {
    if (!r.generating) continue;
    GroupKey key{r.layer, per_head ? std::optional<std::size_t>(r.head) : std::nullopt};
    Acc& acc = groups[key];
    acc.rows += 1;
    for (std::size_t j = 0; j < r.key_positions.size(); ++j) {
      acc.sums[r.key_positions[j]] += r.weights[j];
      acc.slots[r.key_positions[j]] = r.key_slots[j];
    }
  }
  if (groups.empty()) {
    throw Error(ErrorCode::kSelection, "trace holds no generated-token attention rows");
  }
  std::vector<AttentionProfile> out;
  for (const auto& [key, acc] : groups) {
    AttentionProfile p;
    p.layer = key.first;
    p.head = key.second;
    for (const auto& [pos, sum] : acc.sums) {
      p.key_positions.push_back(pos);
      p.key_slots.push_back(acc.slots.at(pos));
      p.scores.push_back(sum / static_cast<double>(acc.rows));
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<AttentionProfile> averaged_generated_attention(const AttentionTrace& trace) {
  return average_groups(trace, false);
}

std::vector<AttentionProfile> per_head_generated_attention(const AttentionTrace& trace) {
  return average_groups(trace, true);
}

void write_attention_csv(const std::vector<AttentionProfile>& profiles, std::ostream& out) {
  out << "layer,head_or_mean,key_pos,segment,score\n";
  for (const auto& p : profiles) {
    const std::string head = p.head ? std::to_string(*p.head) : "mean";
    for (std::size_t j = 0; j < p.key_positions.size(); ++j) {
      char score[32];
      std::snprintf(score, sizeof score, "%.9g", p.scores[j]);
      out << p.layer << ',' << head << ',' << p.key_positions[j] << ','
          << to_string(p.key_slots[j].tag) << ',' << score << '\n';
    }
  }
}

void BenchSchedule::validate(const ModelConfig& config) const {
  for (std::size_t q : question_points) {
    if (q > frames) {
      throw Error(ErrorCode::kConfig, "question point " + std::to_string(q) +
                                          " is past the last frame (" + std::to_string(frames) + ")");
    }
  }
  if (!std::is_sorted(question_points.begin(), question_points.end())) {
    throw Error(ErrorCode::kConfig, "question points must be non-decreasing");
  }
  if (!question_points.empty() && question.empty()) {
    throw Error(ErrorCode::kConfig, "schedule asks questions but the question is empty");
  }
  const auto in_vocab = [&](std::int32_t t) {
    return t >= 0 && static_cast<std::size_t>(t) < config.vocab_size;
  };
  if (!std::all_of(question.begin(), question.end(), in_vocab) ||
      !std::all_of(system.begin(), system.end(), in_vocab)) {
    throw Error(ErrorCode::kConfig, "schedule token ids must lie in [0, vocab_size)");
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double idx = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(idx));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (idx - static_cast<double>(lo));
}

double BenchReport::serving_fps_proxy() const {
  if (ingest_us.empty()) return 0.0;
  const double mean = std::accumulate(ingest_us.begin(), ingest_us.end(), 0.0) /
                      static_cast<double>(ingest_us.size());
  return mean > 0.0 ? 1e6 / mean : 0.0;
}

std::string BenchReport::summary_json() const {
  nlohmann::ordered_json j;
  j["frames"] = frames;
  j["m"] = memory_capacity;
  j["ingest_us"] = {{"p50", percentile(ingest_us, 0.5)}, {"p90", percentile(ingest_us, 0.9)}};
  if (ask_us.empty()) {
    j["ask_us"] = nullptr;
  } else {
    j["ask_us"] = std::accumulate(ask_us.begin(), ask_us.end(), 0.0) / static_cast<double>(ask_us.size());
  }
  j["serving_fps_proxy"] = serving_fps_proxy();
  j["kv_bytes_final"] = kv_bytes.empty() ? 0 : kv_bytes.back();
  j["flops_per_ingest"] = ingest_flops.empty() ? 0 : ingest_flops.back();
  return j.dump(2);
}

std::vector<FrameTokens> random_frames(std::size_t count, std::size_t tokens, std::size_t dim,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FrameTokens> frames(count);
  for (std::size_t i = 0; i < count; ++i) {
    frames[i].index = i;
    frames[i].embeddings = Matrix(tokens, dim);
    for (float& x : frames[i].embeddings.flat()) x = static_cast<float>(rng.normal());
  }
  return frames;
}

BenchReport bench_serving(const ModelConfig& config, const BenchSchedule& schedule,
                          std::uint64_t seed, TraceSink sink, const Weights* weights) {
  config.validate();
  schedule.validate(config);
  const Weights w = weights ? *weights : init_model(config, seed);
  StreamSession session = open_session(config, w, schedule.system);
  session.set_trace_sink(sink);

  BenchReport report;
  report.frames = schedule.frames;
  report.memory_capacity = config.memory_capacity;
  Rng rng(seed ^ 0x5eedf00dULL);
  std::size_t next_q = 0;
  const auto ask_due = [&](std::size_t ingested) {
    while (next_q < schedule.question_points.size() && schedule.question_points[next_q] == ingested) {
      const GenerationOutput g = session.ask(schedule.question, schedule.max_new);
      report.ask_us.push_back(g.prefill_us + g.decode_us_per_token * static_cast<double>(g.tokens.size()));
      report.ask_prefill_flops.push_back(g.prefill_flops);
      session.reset_dialogue();
      ++next_q;
    }
  };
  ask_due(0);
  for (std::size_t t = 0; t < schedule.frames; ++t) {
    FrameTokens f;
    f.index = t;
    f.embeddings = Matrix(config.tokens_per_frame, config.model_dim);
    for (float& x : f.embeddings.flat()) x = static_cast<float>(rng.normal());
    const IngestReport r = session.ingest_frame(f);
    report.ingest_us.push_back(r.latency_us);
    report.ingest_flops.push_back(r.flops);
    report.kv_bytes.push_back(r.kv_bytes);
    ask_due(t + 1);
  }
  return report;
}

}  // namespace videoscan
