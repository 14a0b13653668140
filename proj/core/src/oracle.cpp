#include "videoscan/oracle.hpp"

#include <algorithm>
#include <string>

#include "videoscan/error.hpp"

namespace videoscan {

OracleRun oracle_full_forward(const Model& model, std::span<const std::int32_t> system,
                              std::span<const FrameTokens> frames,
                              std::span<const std::int32_t> question,
                              std::span<const EvictionEvent> replay,
                              const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  if (replay.empty() && frames.size() > cfg.memory_capacity) {
    throw Error(ErrorCode::kOracle, std::to_string(frames.size()) +
                                        " frames exceed memory capacity " +
                                        std::to_string(cfg.memory_capacity) +
                                        " and no replay schedule was supplied");
  }
  const std::size_t n = cfg.tokens_per_frame;
  const std::size_t d = cfg.model_dim;

  std::vector<Segment> segs;
  std::size_t cursor = 0;
  if (!system.empty()) {
    segs.push_back({TokenTag::kSystem, 0, system.size(), -1});
    cursor = system.size();
  }
  for (const auto& f : frames) {
    if (f.embeddings.rows() != n || f.embeddings.cols() != d) {
      throw Error(ErrorCode::kOracle, "frame " + std::to_string(f.index) + " has the wrong shape");
    }
    const auto id = static_cast<std::int64_t>(f.index);
    segs.push_back({TokenTag::kFrame, cursor, n, id});
    segs.push_back({TokenTag::kCarrier, cursor + n, 1, id});
    cursor += n + 1;
  }
  if (!question.empty()) segs.push_back({TokenTag::kText, cursor, question.size(), -1});
  const SequenceLayout layout(std::move(segs));
  const std::size_t total = layout.length();

  Matrix input(total, d);
  std::size_t row = 0;
  const auto put_tokens = [&](std::span<const std::int32_t> ids) {
    const Matrix e = embed_tokens(model.weights(), ids);
    std::ranges::copy(e.flat(), input.row(row).begin());
    row += ids.size();
  };
  if (!system.empty()) put_tokens(system);
  for (const auto& f : frames) {
    std::ranges::copy(f.embeddings.flat(), input.row(row).begin());
    row += n;
    const auto carrier = build_carrier_embedding(f, cfg.carrier_mode);
    std::ranges::copy(carrier, input.row(row).begin());
    row += 1;
  }
  if (!question.empty()) put_tokens(question);

  MaskSpec mask = build_semantic_mask(layout);
  const auto& slots = mask.query_slots();

  if (cfg.carrier_kv_mode == CarrierKvMode::kEmbeddingOnly) {
    for (std::size_t q = 0; q < total; ++q) {
      if (slots[q].tag != TokenTag::kCarrier) continue;
      for (std::size_t k = 0; k < q; ++k) {
        if (slots[k].tag == TokenTag::kFrame && slots[k].frame == slots[q].frame) mask.set(q, k, false);
      }
    }
  }

  for (const auto& ev : replay) {
    const auto carrier = static_cast<std::int64_t>(ev.carrier_frame);
    const auto after = static_cast<std::int64_t>(ev.after_frame);
    std::size_t key = total;
    for (std::size_t k = 0; k < total; ++k) {
      if (slots[k].tag == TokenTag::kCarrier && slots[k].frame == carrier) key = k;
    }
    if (key == total) {
      throw Error(ErrorCode::kOracle, "replay names carrier " + std::to_string(ev.carrier_frame) +
                                          " which is not in the sequence");
    }
    for (std::size_t q = 0; q < total; ++q) {
      const bool later_frame = (slots[q].tag == TokenTag::kFrame || slots[q].tag == TokenTag::kCarrier) &&
                               slots[q].frame > after;
      if (later_frame || slots[q].tag == TokenTag::kText) mask.set(q, key, false);
    }
  }

  std::vector<std::size_t> positions(total);
  for (std::size_t i = 0; i < total; ++i) positions[i] = i;

  KvCache scratch(cfg.layers, d);
  Matrix logits = forward_step(model, scratch, input, positions, mask, TagSet{}, options);

  OracleRun run;
  run.question_logits = Matrix(question.size(), cfg.vocab_size);
  const std::size_t first_q = total - question.size();
  for (std::size_t i = 0; i < question.size(); ++i) {
    std::ranges::copy(logits.row(first_q + i), run.question_logits.row(i).begin());
  }
  run.mask = std::move(mask);
  run.positions = std::move(positions);
  return run;
}

}  // namespace videoscan
