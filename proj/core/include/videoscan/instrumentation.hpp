#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "videoscan/attention_trace.hpp"
#include "videoscan/model.hpp"
#include "videoscan/session.hpp"

namespace videoscan {

// Attention mass per key position for one layer, averaged over the selected
// query rows. head is empty for the mean over heads.
struct AttentionProfile {
  std::size_t layer = 0;
  std::optional<std::size_t> head;
  std::vector<std::size_t> key_positions;  // ascending
  std::vector<TokenSlot> key_slots;
  std::vector<double> scores;
};

// Mean over heads and generating rows, one profile per layer. Keys missing
// from a row (not yet cached, or evicted) count as zero for that row.
// Throws Error(kSelection) when the trace has no generating rows.
std::vector<AttentionProfile> averaged_generated_attention(const AttentionTrace& trace);

// Same selection, one profile per (layer, head).
std::vector<AttentionProfile> per_head_generated_attention(const AttentionTrace& trace);

// CSV: layer,head_or_mean,key_pos,segment,score
void write_attention_csv(const std::vector<AttentionProfile>& profiles, std::ostream& out);

struct BenchSchedule {
  std::size_t frames = 0;
  // ask() is issued after this many frames have been ingested.
  std::vector<std::size_t> question_points;
  std::vector<std::int32_t> question = {1, 2, 3};
  std::size_t max_new = 4;
  std::vector<std::int32_t> system = {0, 1, 2, 3};

  // Throws Error(kConfig) on an unusable schedule.
  void validate(const ModelConfig& config) const;
};

struct BenchReport {
  std::size_t frames = 0;
  std::size_t memory_capacity = 0;
  std::vector<double> ingest_us;
  std::vector<std::uint64_t> ingest_flops;
  std::vector<std::size_t> kv_bytes;
  std::vector<double> ask_us;
  std::vector<std::uint64_t> ask_prefill_flops;

  double serving_fps_proxy() const;

  // {frames, m, ingest_us:{p50,p90}, ask_us, serving_fps_proxy,
  //  kv_bytes_final, flops_per_ingest}
  std::string summary_json() const;
};

// Linear-interpolated percentile, q in [0, 1]. Empty input gives 0.
double percentile(std::vector<double> values, double q);

// Runs one session over synthetic Gaussian frames. Weights default to a
// fresh init_model(config, seed). Session events go to `sink` when bound.
BenchReport bench_serving(const ModelConfig& config, const BenchSchedule& schedule,
                          std::uint64_t seed, TraceSink sink = {},
                          const Weights* weights = nullptr);

// Deterministic N x d frames with standard-normal entries.
std::vector<FrameTokens> random_frames(std::size_t count, std::size_t tokens,
                                       std::size_t dim, std::uint64_t seed);

}  // namespace videoscan
