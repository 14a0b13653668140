#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "videoscan/masking.hpp"
#include "videoscan/model.hpp"

namespace videoscan {

// Metadata shared by all layers for one cached token.
struct CacheEntry {
  TokenSlot slot;
  std::size_t position = 0;

  friend bool operator==(const CacheEntry&, const CacheEntry&) = default;
};

// Per-layer keys and values for retained tokens. Keys carry their position
// from the moment they were computed; entries are never re-positioned.
template <typename T>
class BasicKvCache {
 public:
  BasicKvCache() = default;
  BasicKvCache(std::size_t layers, std::size_t model_dim);

  std::size_t layers() const noexcept { return keys_.size(); }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t model_dim() const noexcept { return model_dim_; }
  bool empty() const noexcept { return entries_.empty(); }

  const std::vector<CacheEntry>& entries() const noexcept { return entries_; }
  const BasicMatrix<T>& keys(std::size_t layer) const { return keys_.at(layer); }
  const BasicMatrix<T>& values(std::size_t layer) const { return values_.at(layer); }
  std::vector<TokenSlot> slots() const;

  // Appends one entry; key_rows/value_rows hold one row per layer.
  void append(const CacheEntry& entry, std::span<const std::span<const T>> key_rows,
              std::span<const std::span<const T>> value_rows);
  void erase(std::size_t index);
  // Removes every entry whose tag matches. Returns the count removed.
  std::size_t erase_tag(TokenTag tag);

  // Index of the carrier entry for `frame`, or npos.
  std::size_t find_carrier(std::int64_t frame) const noexcept;
  std::size_t count(TokenTag tag) const noexcept;

  std::size_t max_position() const noexcept;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  friend bool operator==(const BasicKvCache&, const BasicKvCache&) = default;

 private:
  std::size_t model_dim_ = 0;
  std::vector<CacheEntry> entries_;
  std::vector<BasicMatrix<T>> keys_;
  std::vector<BasicMatrix<T>> values_;
};

using KvCache = BasicKvCache<float>;

// Immutable weights plus the adapter-merged projections used by the kernels.
template <typename T>
class BasicModel {
 public:
  struct Projections {
    BasicMatrix<T> wq, wk, wv, wo;
  };

  explicit BasicModel(BasicWeights<T> weights);

  const ModelConfig& config() const noexcept { return weights_.config; }
  const BasicWeights<T>& weights() const noexcept { return weights_; }
  const Projections& projections(std::size_t layer) const { return merged_.at(layer); }

  // Same weights with different streaming knobs. Architecture must match.
  BasicModel with_config(const ModelConfig& config) const;

 private:
  BasicWeights<T> weights_;
  std::vector<Projections> merged_;
};

using Model = BasicModel<float>;

// Observer for attention rows; lets instrumentation record weights without
// touching the computation.
struct AttentionRowView {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t query_position = 0;
  TokenSlot query_slot;
  std::span<const std::size_t> key_positions;
  std::span<const TokenSlot> key_slots;
  std::span<const std::uint8_t> allowed;
  std::span<const float> weights;
  // Head slices of the query and the keys (key-major, head_dim each).
  std::span<const float> query;
  std::span<const float> keys;
};

class AttentionObserver {
 public:
  virtual ~AttentionObserver() = default;
  virtual bool wants(std::size_t layer, std::size_t head, std::size_t query_position) const = 0;
  virtual bool wants_vectors() const { return false; }
  virtual void on_row(const AttentionRowView& row) = 0;
};

// Activations kept by a batched forward pass for backpropagation.
template <typename T>
struct LayerTape {
  BasicMatrix<T> input;               // residual stream entering the layer
  BasicMatrix<T> norm1_hat, norm1;    // normalized (pre-affine) and post-affine
  std::vector<T> norm1_inv_std;
  BasicMatrix<T> q, k, v;
  std::vector<BasicMatrix<T>> probs;  // per head, queries x keys
  BasicMatrix<T> attn;                // concatenated heads before output proj
  BasicMatrix<T> mid;                 // residual after attention
  BasicMatrix<T> norm2_hat, norm2;
  std::vector<T> norm2_inv_std;
  BasicMatrix<T> up;                  // pre-activation
  BasicMatrix<T> act;                 // gelu(up)
};

template <typename T>
struct ForwardTape {
  std::vector<LayerTape<T>> layers;
  BasicMatrix<T> final_input;
  BasicMatrix<T> final_hat, final_norm;
  std::vector<T> final_inv_std;
};

struct ForwardOptions {
  AttentionObserver* observer = nullptr;
};

// Tag set used by forward_step to decide which new entries enter the cache.
class TagSet {
 public:
  TagSet() = default;
  TagSet(std::initializer_list<TokenTag> tags) {
    for (auto t : tags) bits_ |= bit(t);
  }
  static TagSet all() { return {TokenTag::kSystem, TokenTag::kFrame, TokenTag::kCarrier, TokenTag::kText}; }
  bool contains(TokenTag t) const noexcept { return (bits_ & bit(t)) != 0; }

 private:
  static std::uint8_t bit(TokenTag t) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(t)); }
  std::uint8_t bits_ = 0;
};

// Adds the learned position row to each token embedding.
template <typename T>
BasicMatrix<T> embed_positions(const BasicMatrix<T>& embeddings,
                               std::span<const std::size_t> positions,
                               const BasicWeights<T>& weights);

// Multi-head scaled dot-product attention. q: s x d, keys/values: c x d,
// mask: s x c grid. Returns the concatenated head outputs (s x d), before
// the output projection.
template <typename T>
BasicMatrix<T> attention_forward(const BasicMatrix<T>& q, const BasicMatrix<T>& keys,
                                 const BasicMatrix<T>& values, std::span<const std::uint8_t> mask,
                                 std::size_t heads,
                                 std::vector<BasicMatrix<T>>* probs_out = nullptr);

// Runs every layer over the new tokens, attending to cache + new tokens
// under `mask` (rows: new tokens; keys: cache entries then new tokens).
// New entries whose tag is in `retain` are appended to the cache. Returns
// next-token logits for every new row.
//
// With a non-null tape the cache must be empty; the tape then holds what
// backprop needs.
template <typename T>
BasicMatrix<T> forward_step(const BasicModel<T>& model, BasicKvCache<T>& cache,
                            const BasicMatrix<T>& new_embeddings,
                            std::span<const std::size_t> positions, const MaskSpec& mask,
                            TagSet retain, const ForwardOptions& options = {},
                            ForwardTape<T>* tape = nullptr);

// Embedding rows for token ids.
template <typename T>
BasicMatrix<T> embed_tokens(const BasicWeights<T>& weights, std::span<const std::int32_t> tokens);

// Multiply-adds counted for one decoder layer processing s new tokens
// against c visible keys (cache + new):
//   2*s*d*3d (QKV) + 4*s*c*d (scores and mixing) + 2*s*d*d (output)
//   + 4*s*d*ff (feed-forward)
std::uint64_t layer_flops(const ModelConfig& config, std::size_t new_tokens, std::size_t keys);

// Whole forward_step: all layers plus the d x vocab readout.
std::uint64_t step_flops(const ModelConfig& config, std::size_t new_tokens, std::size_t cached);

extern template class BasicKvCache<float>;
extern template class BasicKvCache<double>;
extern template class BasicModel<float>;
extern template class BasicModel<double>;

}  // namespace videoscan
