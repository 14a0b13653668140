#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace videoscan {

enum class CarrierMode { kMean, kLastToken };
enum class CarrierKvMode { kInherited, kEmbeddingOnly };
enum class EvictionRule { kAdjacentPairs, kVsIncoming };

std::string_view to_string(CarrierMode mode);
std::string_view to_string(CarrierKvMode mode);
std::string_view to_string(EvictionRule rule);

// Accepts both the long names used in JSON configs and the short CLI
// spellings ("mean" | "last", "inherited" | "embedding-only",
// "adjacent" | "vs-incoming").
CarrierMode parse_carrier_mode(std::string_view text);
CarrierKvMode parse_carrier_kv_mode(std::string_view text);
EvictionRule parse_eviction_rule(std::string_view text);

// Shape of the toy backbone plus the streaming knobs. The three ablations
// map onto carrier_mode = kLastToken (w/o emb), carrier_kv_mode =
// kEmbeddingOnly (w/o KV) and memory_enabled = false (w/o mem).
struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t model_dim = 32;
  std::size_t ff_dim = 64;
  std::size_t vocab_size = 64;
  std::size_t max_positions = 1024;
  std::size_t tokens_per_frame = 8;
  std::size_t memory_capacity = 64;
  std::size_t lora_rank = 4;
  CarrierMode carrier_mode = CarrierMode::kMean;
  CarrierKvMode carrier_kv_mode = CarrierKvMode::kInherited;
  EvictionRule eviction_rule = EvictionRule::kAdjacentPairs;
  bool memory_enabled = true;
  // Generation stops when this token is produced. Negative disables it.
  std::int32_t eos_token = -1;
  float norm_eps = 1e-5f;

  std::size_t head_dim() const noexcept { return heads == 0 ? 0 : model_dim / heads; }

  // Throws Error(kConfig) naming the first violated constraint.
  void validate() const;

  // Fields that change the weight layout. Streaming knobs (memory size,
  // carrier modes, eviction rule) may differ between a checkpoint and a run.
  bool same_architecture(const ModelConfig& other) const noexcept;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace videoscan
