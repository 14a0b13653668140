#include "videoscan/masking.hpp"

#include <sstream>

#include "videoscan/error.hpp"

namespace videoscan {

std::string_view to_string(TokenTag tag) {
  switch (tag) {
    case TokenTag::kSystem: return "system";
    case TokenTag::kFrame: return "frame";
    case TokenTag::kCarrier: return "carrier";
    case TokenTag::kText: return "text";
  }
  return "unknown";
}

namespace {

[[noreturn]] void layout_error(const std::string& what) { throw Error(ErrorCode::kLayout, what); }

}  // namespace

SequenceLayout::SequenceLayout(std::vector<Segment> segments) : segments_(std::move(segments)) {
  std::size_t cursor = 0;
  std::size_t i = 0;
  const auto n = segments_.size();
  for (const auto& s : segments_) {
    if (s.begin < cursor) {
      layout_error("segment at " + std::to_string(s.begin) + " overlaps the previous span ending at " +
                   std::to_string(cursor));
    }
    if (s.begin > cursor) {
      layout_error("gap before segment at " + std::to_string(s.begin));
    }
    cursor = s.begin + s.length;
  }
  if (i < n && segments_[i].tag == TokenTag::kSystem) ++i;
  std::int64_t last_frame = -1;
  while (i < n && segments_[i].tag == TokenTag::kFrame) {
    const auto& f = segments_[i];
    if (i + 1 >= n || segments_[i + 1].tag != TokenTag::kCarrier) {
      layout_error("frame span " + std::to_string(f.frame) + " is not followed by its carrier");
    }
    const auto& c = segments_[i + 1];
    if (c.length != 1) layout_error("carrier span must hold exactly one token");
    if (c.frame != f.frame) layout_error("carrier frame index does not match its frame span");
    if (f.frame <= last_frame) layout_error("frame indices must be strictly increasing");
    last_frame = f.frame;
    i += 2;
  }
  if (i < n && segments_[i].tag == TokenTag::kText) ++i;
  if (i != n) {
    layout_error("unexpected " + std::string(to_string(segments_[i].tag)) + " segment at " +
                 std::to_string(segments_[i].begin));
  }
}

SequenceLayout SequenceLayout::streaming(std::size_t system_tokens,
                                         std::span<const std::size_t> frame_tokens,
                                         std::size_t text_tokens) {
  std::vector<Segment> segs;
  std::size_t cursor = 0;
  if (system_tokens > 0) {
    segs.push_back({TokenTag::kSystem, cursor, system_tokens, -1});
    cursor += system_tokens;
  }
  for (std::size_t t = 0; t < frame_tokens.size(); ++t) {
    const auto frame = static_cast<std::int64_t>(t);
    segs.push_back({TokenTag::kFrame, cursor, frame_tokens[t], frame});
    cursor += frame_tokens[t];
    segs.push_back({TokenTag::kCarrier, cursor, 1, frame});
    cursor += 1;
  }
  if (text_tokens > 0) segs.push_back({TokenTag::kText, cursor, text_tokens, -1});
  return SequenceLayout(std::move(segs));
}

std::size_t SequenceLayout::length() const noexcept {
  return segments_.empty() ? 0 : segments_.back().begin + segments_.back().length;
}

std::vector<TokenSlot> SequenceLayout::slots() const {
  std::vector<TokenSlot> out;
  out.reserve(length());
  for (const auto& s : segments_) {
    for (std::size_t k = 0; k < s.length; ++k) out.push_back({s.tag, s.frame});
  }
  return out;
}

MaskSpec::MaskSpec(std::vector<TokenSlot> query_slots, std::vector<TokenSlot> key_slots)
    : query_slots_(std::move(query_slots)),
      key_slots_(std::move(key_slots)),
      allow_(query_slots_.size() * key_slots_.size(), 0) {}

void MaskSpec::block_key(std::size_t k) {
  const bool square = queries() == keys();
  for (std::size_t q = 0; q < queries(); ++q) {
    if (square && q == k) continue;
    set(q, k, false);
  }
}

void MaskSpec::check_rows() const {
  for (std::size_t q = 0; q < queries(); ++q) {
    bool any = false;
    for (auto v : row(q)) any = any || v != 0;
    if (!any) throw Error(ErrorCode::kDegenerateRow, "query " + std::to_string(q) + " sees no key");
  }
}

std::string MaskSpec::to_pbm() const {
  std::ostringstream out;
  out << "P1\n" << keys() << ' ' << queries() << '\n';
  for (std::size_t q = 0; q < queries(); ++q) {
    for (std::size_t k = 0; k < keys(); ++k) {
      if (k) out << ' ';
      out << (allowed(q, k) ? '1' : '0');
    }
    out << '\n';
  }
  return out.str();
}

MaskSpec build_semantic_mask(const SequenceLayout& layout) {
  auto slots = layout.slots();
  const std::size_t n = slots.size();
  MaskSpec mask(slots, slots);
  for (std::size_t q = 0; q < n; ++q) {
    const TokenSlot& qs = slots[q];
    for (std::size_t k = 0; k <= q; ++k) {
      const TokenSlot& ks = slots[k];
      bool ok = false;
      switch (qs.tag) {
        case TokenTag::kSystem:
          ok = ks.tag == TokenTag::kSystem;
          break;
        case TokenTag::kFrame:
        case TokenTag::kCarrier:
          // Same rule for both: the carrier sits after its frame, so "causal
          // prefix of own frame" is the whole frame plus itself.
          ok = ks.tag == TokenTag::kSystem ||
               (ks.tag == TokenTag::kCarrier && ks.frame < qs.frame) ||
               (ks.frame == qs.frame && (ks.tag == TokenTag::kFrame || k == q));
          break;
        case TokenTag::kText:
          ok = ks.tag == TokenTag::kSystem || ks.tag == TokenTag::kCarrier ||
               ks.tag == TokenTag::kText;
          break;
      }
      mask.set(q, k, ok);
    }
  }
  return mask;
}

std::vector<TokenSlot> NewSegment::slots() const {
  std::vector<TokenSlot> out;
  switch (kind) {
    case Kind::kSystem:
      out.assign(tokens, TokenSlot{TokenTag::kSystem, -1});
      break;
    case Kind::kText:
      out.assign(tokens, TokenSlot{TokenTag::kText, -1});
      break;
    case Kind::kFrameAndCarrier:
      out.assign(tokens, TokenSlot{TokenTag::kFrame, frame});
      out.push_back({TokenTag::kCarrier, frame});
      break;
    case Kind::kCarrierOnly:
      out.push_back({TokenTag::kCarrier, frame});
      break;
  }
  return out;
}

std::size_t NewSegment::length() const noexcept {
  switch (kind) {
    case Kind::kFrameAndCarrier: return tokens + 1;
    case Kind::kCarrierOnly: return 1;
    default: return tokens;
  }
}

MaskSpec build_streaming_mask(std::span<const TokenSlot> cached, const NewSegment& segment) {
  for (const auto& s : cached) {
    if (s.tag == TokenTag::kFrame) {
      layout_error("cache holds a frame-token entry; frame tokens are never retained");
    }
    if (s.tag != TokenTag::kSystem && s.tag != TokenTag::kCarrier && s.tag != TokenTag::kText) {
      layout_error("unknown cache tag");
    }
  }
  auto fresh = segment.slots();
  std::vector<TokenSlot> keys(cached.begin(), cached.end());
  keys.insert(keys.end(), fresh.begin(), fresh.end());
  MaskSpec mask(fresh, keys);
  const std::size_t c = cached.size();
  for (std::size_t q = 0; q < fresh.size(); ++q) {
    for (std::size_t k = 0; k < c; ++k) mask.set(q, k, true);
    // Within the new block every segment kind is causal: frame tokens see
    // their prefix, the trailing carrier sees the whole frame and itself.
    for (std::size_t k = 0; k <= q; ++k) mask.set(q, c + k, true);
  }
  return mask;
}

}  // namespace videoscan
