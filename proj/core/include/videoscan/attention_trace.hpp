#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "videoscan/transformer.hpp"

namespace videoscan {

// Which forward pass produced a row.
enum class QueryPhase : std::uint8_t { kSystem, kFrame, kQuestion, kGenerated, kOracle };

std::string_view to_string(QueryPhase phase);

struct AttentionRow {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t query_position = 0;
  TokenSlot query_slot;
  QueryPhase phase = QueryPhase::kOracle;
  // True when this query's output picked a generated token.
  bool generating = false;
  std::vector<std::size_t> key_positions;
  std::vector<TokenSlot> key_slots;
  std::vector<std::uint8_t> allowed;
  std::vector<float> weights;
  // Present only when the filter asked for vectors.
  std::vector<float> query;
  std::vector<float> keys;  // key-major, head_dim per key
};

struct AttentionTrace {
  std::vector<AttentionRow> rows;
};

struct CaptureFilter {
  std::optional<std::set<std::size_t>> layers;
  std::optional<std::set<std::size_t>> heads;
  // Inclusive-exclusive range of query positions.
  std::optional<std::pair<std::size_t, std::size_t>> query_positions;
  // Empty means every phase.
  std::set<QueryPhase> phases;
  bool dump_vectors = false;
};

// Copies attention rows out of forward passes that match a filter.
class AttentionRecorder final : public AttentionObserver {
 public:
  explicit AttentionRecorder(CaptureFilter filter = {}) : filter_(std::move(filter)) {}

  void set_phase(QueryPhase phase) noexcept { phase_ = phase; }
  // Flags already-recorded rows for `query_position` as generating rows.
  void mark_generating(std::size_t query_position);

  bool wants(std::size_t layer, std::size_t head, std::size_t query_position) const override;
  bool wants_vectors() const override { return filter_.dump_vectors; }
  void on_row(const AttentionRowView& row) override;

  const AttentionTrace& trace() const noexcept { return trace_; }
  AttentionTrace take() { return std::exchange(trace_, {}); }

 private:
  CaptureFilter filter_;
  QueryPhase phase_ = QueryPhase::kOracle;
  AttentionTrace trace_;
};

}  // namespace videoscan
