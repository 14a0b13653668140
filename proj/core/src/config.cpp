#include "videoscan/config.hpp"

#include <string>

#include "videoscan/error.hpp"

namespace videoscan {

std::string_view to_string(CarrierMode mode) {
  return mode == CarrierMode::kMean ? "mean" : "last_token";
}

std::string_view to_string(CarrierKvMode mode) {
  return mode == CarrierKvMode::kInherited ? "inherited" : "embedding_only";
}

std::string_view to_string(EvictionRule rule) {
  return rule == EvictionRule::kAdjacentPairs ? "adjacent_pairs" : "vs_incoming";
}

CarrierMode parse_carrier_mode(std::string_view text) {
  if (text == "mean") return CarrierMode::kMean;
  if (text == "last" || text == "last_token" || text == "last-token") return CarrierMode::kLastToken;
  throw Error(ErrorCode::kConfig, "unknown carrier mode '" + std::string(text) + "'");
}

CarrierKvMode parse_carrier_kv_mode(std::string_view text) {
  if (text == "inherited") return CarrierKvMode::kInherited;
  if (text == "embedding_only" || text == "embedding-only") return CarrierKvMode::kEmbeddingOnly;
  throw Error(ErrorCode::kConfig, "unknown kv mode '" + std::string(text) + "'");
}

EvictionRule parse_eviction_rule(std::string_view text) {
  if (text == "adjacent" || text == "adjacent_pairs" || text == "adjacent-pairs") {
    return EvictionRule::kAdjacentPairs;
  }
  if (text == "vs_incoming" || text == "vs-incoming") return EvictionRule::kVsIncoming;
  throw Error(ErrorCode::kConfig, "unknown eviction rule '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
  if (layers == 0) fail("layers must be >= 1");
  if (heads == 0) fail("heads must be >= 1");
  if (model_dim == 0) fail("model_dim must be >= 1");
  if (model_dim % heads != 0) {
    fail("model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
         std::to_string(heads));
  }
  if (ff_dim == 0) fail("ff_dim must be >= 1");
  if (vocab_size == 0) fail("vocab_size must be >= 1");
  if (tokens_per_frame == 0) fail("tokens_per_frame must be >= 1");
  if (memory_capacity == 0) fail("memory_capacity must be >= 1");
  if (lora_rank == 0) fail("lora_rank must be >= 1");
  if (max_positions == 0) fail("max_positions must be >= 1");
  if (eos_token >= static_cast<std::int64_t>(vocab_size)) fail("eos_token outside vocabulary");
  if (!(norm_eps > 0.0f)) fail("norm_eps must be positive");
}

bool ModelConfig::same_architecture(const ModelConfig& o) const noexcept {
  return layers == o.layers && heads == o.heads && model_dim == o.model_dim &&
         ff_dim == o.ff_dim && vocab_size == o.vocab_size && max_positions == o.max_positions &&
         lora_rank == o.lora_rank;
}

}  // namespace videoscan
