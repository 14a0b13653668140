#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace videoscan {

enum class TokenTag : std::uint8_t { kSystem, kFrame, kCarrier, kText };

std::string_view to_string(TokenTag tag);

// What occupies one sequence slot: its segment tag and, for frame tokens and
// carriers, the frame it belongs to (-1 otherwise).
struct TokenSlot {
  TokenTag tag = TokenTag::kText;
  std::int64_t frame = -1;

  friend bool operator==(const TokenSlot&, const TokenSlot&) = default;
};

// One contiguous span of a full sequence.
struct Segment {
  TokenTag tag = TokenTag::kText;
  std::size_t begin = 0;
  std::size_t length = 0;
  std::int64_t frame = -1;
};

// Ordered spans: system, (frame_t tokens, carrier_t) for each frame, text.
// Frame spans may be empty; that is the carrier-only training layout.
class SequenceLayout {
 public:
  SequenceLayout() = default;
  explicit SequenceLayout(std::vector<Segment> segments);

  // Streaming-order layout with one frame span (possibly empty) per entry of
  // frame_tokens, each followed by its carrier.
  static SequenceLayout streaming(std::size_t system_tokens,
                                  std::span<const std::size_t> frame_tokens,
                                  std::size_t text_tokens);

  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t length() const noexcept;
  std::vector<TokenSlot> slots() const;

 private:
  std::vector<Segment> segments_;
};

// Boolean query x key visibility grid plus the slot descriptors it was
// built from. Row i may read key j iff allowed(i, j).
class MaskSpec {
 public:
  MaskSpec() = default;
  MaskSpec(std::vector<TokenSlot> query_slots, std::vector<TokenSlot> key_slots);

  std::size_t queries() const noexcept { return query_slots_.size(); }
  std::size_t keys() const noexcept { return key_slots_.size(); }

  bool allowed(std::size_t q, std::size_t k) const noexcept { return allow_[q * keys() + k] != 0; }
  void set(std::size_t q, std::size_t k, bool value) noexcept {
    allow_[q * keys() + k] = value ? 1 : 0;
  }
  std::span<const std::uint8_t> row(std::size_t q) const noexcept {
    return {allow_.data() + q * keys(), keys()};
  }
  std::span<const std::uint8_t> grid() const noexcept { return allow_; }

  const std::vector<TokenSlot>& query_slots() const noexcept { return query_slots_; }
  const std::vector<TokenSlot>& key_slots() const noexcept { return key_slots_; }

  // Hides key k from every query except the key's own row (when the key is
  // also a query at the same index, i.e. square masks).
  void block_key(std::size_t k);

  // Throws Error(kDegenerateRow) if some row has no visible key.
  void check_rows() const;

  // PBM-style text grid ("P1", cols rows, then one line per query; 1 =
  // allowed).
  std::string to_pbm() const;

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;

 private:
  std::vector<TokenSlot> query_slots_;
  std::vector<TokenSlot> key_slots_;
  std::vector<std::uint8_t> allow_;
};

// Full-sequence semantic-aware causal mask:
//   system  -> causal within system
//   frame_t -> system, carriers < t, causal prefix of frame_t
//   carrier -> system, carriers < t, all of frame_t, itself
//   text    -> system, all carriers, causal text prefix
MaskSpec build_semantic_mask(const SequenceLayout& layout);

// The kind of block being prefilled on top of a cache.
struct NewSegment {
  enum class Kind { kSystem, kFrameAndCarrier, kCarrierOnly, kText };
  Kind kind = Kind::kText;
  // Token count excluding the carrier for kFrameAndCarrier.
  std::size_t tokens = 0;
  std::int64_t frame = -1;

  std::vector<TokenSlot> slots() const;
  std::size_t length() const noexcept;
};

// Mask for one prefill step: queries are the new tokens, keys are the cached
// entries followed by the new tokens. Every cached entry is visible.
MaskSpec build_streaming_mask(std::span<const TokenSlot> cached, const NewSegment& segment);

}  // namespace videoscan
