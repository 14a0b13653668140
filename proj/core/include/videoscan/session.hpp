#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "videoscan/attention_trace.hpp"
#include "videoscan/carrier_memory.hpp"
#include "videoscan/transformer.hpp"

namespace videoscan {

// JSON Lines sink for session events. Writes nothing when unbound.
class TraceSink {
 public:
  TraceSink() = default;
  explicit TraceSink(std::ostream& out) : out_(&out) {}

  bool bound() const noexcept { return out_ != nullptr; }
  void write(const std::string& json_line);

 private:
  std::ostream* out_ = nullptr;
};

struct IngestReport {
  std::size_t frame = 0;
  EvictionReport eviction;
  std::size_t bank_size = 0;
  std::size_t kv_bytes = 0;
  double latency_us = 0.0;
  std::uint64_t flops = 0;

  // {"event":"ingest","frame":t,"latency_us":u,"bank_size":b,"kv_bytes":k,"evicted":i|null}
  std::string to_json() const;
};

struct GenerationOutput {
  std::vector<std::int32_t> tokens;
  // One row per generated token (only when requested).
  std::vector<std::vector<float>> step_logits;
  std::size_t prompt_len = 0;
  double prefill_us = 0.0;
  double decode_us_per_token = 0.0;
  std::uint64_t prefill_flops = 0;

  // {"event":"ask","prompt_len":p,"new_tokens":n,"prefill_us":u1,"decode_us_per_token":u2}
  std::string to_json() const;
};

struct AskOptions {
  bool keep_logits = false;
};

struct KvFootprint {
  std::size_t entries_per_layer = 0;
  std::size_t text_entries_per_layer = 0;
  std::size_t bytes = 0;
  // Same formula with text entries left out; bounded by min(T, M).
  std::size_t bytes_excluding_text = 0;
};

// Live streaming state: shared immutable model, cache holding only system,
// carrier and text entries, the memory bank, and the position counter.
class StreamSession {
 public:
  StreamSession(std::shared_ptr<const Model> model, std::span<const std::int32_t> system_tokens);

  const ModelConfig& config() const noexcept { return model_->config(); }
  const Model& model() const noexcept { return *model_; }
  const KvCache& cache() const noexcept { return cache_; }
  const MemoryBank& bank() const noexcept { return bank_; }
  std::size_t position() const noexcept { return next_position_; }
  std::size_t buffered_frames() const noexcept { return buffered_.size(); }
  bool open() const noexcept { return open_; }

  void set_trace_sink(TraceSink sink) { sink_ = sink; }

  // Frame tokens + carrier are prefilled at N+1 fresh positions; only the
  // carrier's KV survives. With memory disabled the frame is buffered and
  // the bank is bypassed until the next ask().
  IngestReport ingest_frame(const FrameTokens& frame);

  // The untimed core of ingest_frame: prefill, then admit the carrier to the
  // bank (evicting if full). Returns a copy of the new record.
  CarrierRecord prefill_frame(const FrameTokens& frame);

  // Question tokens are retained as text, then greedy decoding runs for up
  // to max_new tokens or until the end-of-sequence token.
  GenerationOutput ask(std::span<const std::int32_t> question, std::size_t max_new,
                       const AskOptions& options = {});

  KvFootprint kv_footprint() const;
  std::vector<BankEntry> bank_snapshot() const { return bank_.snapshot(); }

  // Drops dialogue (text) KV and any pending generated token.
  void reset_dialogue();
  void close() noexcept { open_ = false; }

  void enable_attention_capture(CaptureFilter filter = {});
  void disable_attention_capture() noexcept { recorder_.reset(); }
  // Throws Error(kState) when capture was never enabled.
  AttentionTrace take_attention_trace();

 private:
  void require_open() const;
  BasicMatrix<float> run(const Matrix& embeddings, const NewSegment& segment,
                         std::span<const std::size_t> positions, TagSet retain, QueryPhase phase);
  void flush_buffered_frames();
  CarrierRecord prefill_carrier(const FrameTokens& frame);
  EvictionReport admit(CarrierRecord record);

  std::shared_ptr<const Model> model_;
  KvCache cache_;
  MemoryBank bank_;
  std::vector<std::int32_t> system_tokens_;
  std::vector<FrameTokens> buffered_;
  std::vector<std::int32_t> pending_;
  std::size_t next_position_ = 0;
  bool open_ = true;
  TraceSink sink_;
  std::unique_ptr<AttentionRecorder> recorder_;
};

StreamSession open_session(const ModelConfig& config, const Weights& weights,
                           std::span<const std::int32_t> system_tokens);

// Evenly spaced indices: k of n, i -> floor((2i + 1) * n / (2k)).
std::vector<std::size_t> even_sample(std::size_t n, std::size_t k);

}  // namespace videoscan
