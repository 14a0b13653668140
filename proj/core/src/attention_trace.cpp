#include "videoscan/attention_trace.hpp"

namespace videoscan {

std::string_view to_string(QueryPhase phase) {
  switch (phase) {
    case QueryPhase::kSystem: return "system";
    case QueryPhase::kFrame: return "frame";
    case QueryPhase::kQuestion: return "question";
    case QueryPhase::kGenerated: return "generated";
    case QueryPhase::kOracle: return "oracle";
  }
  return "unknown";
}

bool AttentionRecorder::wants(std::size_t layer, std::size_t head, std::size_t query_position) const {
  if (!filter_.phases.empty() && !filter_.phases.contains(phase_)) return false;
  if (filter_.layers && !filter_.layers->contains(layer)) return false;
  if (filter_.heads && !filter_.heads->contains(head)) return false;
  if (filter_.query_positions) {
    const auto [lo, hi] = *filter_.query_positions;
    if (query_position < lo || query_position >= hi) return false;
  }
  return true;
}

void AttentionRecorder::on_row(const AttentionRowView& view) {
  AttentionRow row;
  row.layer = view.layer;
  row.head = view.head;
  row.query_position = view.query_position;
  row.query_slot = view.query_slot;
  row.phase = phase_;
  row.generating = phase_ == QueryPhase::kGenerated;
  row.key_positions.assign(view.key_positions.begin(), view.key_positions.end());
  row.key_slots.assign(view.key_slots.begin(), view.key_slots.end());
  row.allowed.assign(view.allowed.begin(), view.allowed.end());
  row.weights.assign(view.weights.begin(), view.weights.end());
  row.query.assign(view.query.begin(), view.query.end());
  row.keys.assign(view.keys.begin(), view.keys.end());
  trace_.rows.push_back(std::move(row));
}

void AttentionRecorder::mark_generating(std::size_t query_position) {
  for (auto& r : trace_.rows) {
    if (r.query_position == query_position) r.generating = true;
  }
}

}  // namespace videoscan
