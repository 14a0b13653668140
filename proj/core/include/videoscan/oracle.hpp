#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "videoscan/carrier_memory.hpp"
#include "videoscan/transformer.hpp"

namespace videoscan {

// A carrier that the streaming bank dropped while admitting `after_frame`.
// Rows prefilled after that point must not see it.
struct EvictionEvent {
  std::size_t carrier_frame = 0;
  std::size_t after_frame = 0;
};

struct OracleRun {
  Matrix question_logits;  // one row per question token
  MaskSpec mask;
  std::vector<std::size_t> positions;
};

// Materializes [system][f_1 c_1 ... f_T c_T][question] in one batched
// forward under the semantic mask, with the positions the streaming engine
// would assign. Without a replay schedule T must not exceed the memory
// capacity. Honors carrier_kv_mode (embedding_only hides each frame from its
// own carrier) and carrier_mode.
OracleRun oracle_full_forward(const Model& model, std::span<const std::int32_t> system,
                              std::span<const FrameTokens> frames,
                              std::span<const std::int32_t> question,
                              std::span<const EvictionEvent> replay = {},
                              const ForwardOptions& options = {});

}  // namespace videoscan
