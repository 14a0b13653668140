#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "videoscan/config.hpp"
#include "videoscan/numerics.hpp"

namespace videoscan {

// Visual embeddings of one frame (N tokens x d), as produced by the vision
// encoder stand-in.
struct FrameTokens {
  std::size_t index = 0;
  Matrix embeddings;
  // Nominal source resolution of the stub generator, informational only.
  std::optional<std::pair<std::size_t, std::size_t>> nominal_hw;
};

// One semantic carrier: pooled embedding plus the key/value rows it left in
// every layer, frozen at the position it was prefilled at.
struct CarrierRecord {
  std::size_t frame = 0;
  std::vector<float> embedding;
  std::vector<std::vector<float>> keys;    // one row per layer
  std::vector<std::vector<float>> values;  // one row per layer
  std::size_t position = 0;
  // Logical clock: the frame index at creation.
  std::size_t timestamp = 0;
};

struct EvictionReport {
  std::optional<std::size_t> evicted_frame;
  float score = 0.0f;
  EvictionRule rule = EvictionRule::kAdjacentPairs;
  std::size_t bank_size = 0;

  // {"frame_evicted": int|null, "score": float, "rule": string, "bank_size": int}
  std::string to_json() const;
};

struct BankEntry {
  std::size_t frame = 0;
  std::size_t position = 0;
  std::vector<float> embedding;

  friend bool operator==(const BankEntry&, const BankEntry&) = default;
};

// Mean of the N rows (kMean) or a copy of row N-1 (kLastToken).
std::vector<float> build_carrier_embedding(const FrameTokens& frame, CarrierMode mode);

// Ordered (oldest first) store of at most `capacity` carriers.
class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, EvictionRule rule);

  std::size_t capacity() const noexcept { return capacity_; }
  EvictionRule rule() const noexcept { return rule_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const std::vector<CarrierRecord>& records() const noexcept { return records_; }
  const std::vector<EvictionReport>& eviction_log() const noexcept { return log_; }

  // Appends below capacity. When full, scores candidate pairs by cosine
  // similarity of embeddings and drops the older member of the best pair
  // (ties go to the oldest candidate), then appends.
  //   adjacent_pairs: (bank[i], bank[i+1]) and (bank[last], incoming)
  //   vs_incoming:    (bank[i], incoming)
  EvictionReport insert(CarrierRecord incoming);

  // Which bank index insert() would evict for `incoming`, with its score.
  // Requires a full bank.
  std::pair<std::size_t, float> choose_victim(const std::vector<float>& incoming) const;

  std::vector<BankEntry> snapshot() const;
  void clear() noexcept { records_.clear(); }

 private:
  std::size_t capacity_;
  EvictionRule rule_;
  std::vector<CarrierRecord> records_;
  std::vector<EvictionReport> log_;
};

inline EvictionReport memory_insert(MemoryBank& bank, CarrierRecord incoming) {
  return bank.insert(std::move(incoming));
}

inline std::vector<BankEntry> bank_snapshot(const MemoryBank& bank) { return bank.snapshot(); }

}  // namespace videoscan
