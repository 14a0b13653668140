#include "videoscan/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "videoscan/error.hpp"

namespace videoscan {

template <typename T>
BasicKvCache<T>::BasicKvCache(std::size_t layers, std::size_t model_dim)
    : model_dim_(model_dim), keys_(layers, BasicMatrix<T>(0, model_dim)),
      values_(layers, BasicMatrix<T>(0, model_dim)) {}

template <typename T>
std::vector<TokenSlot> BasicKvCache<T>::slots() const {
  std::vector<TokenSlot> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.slot);
  return out;
}

template <typename T>
void BasicKvCache<T>::append(const CacheEntry& entry, std::span<const std::span<const T>> key_rows,
                             std::span<const std::span<const T>> value_rows) {
  if (key_rows.size() != layers() || value_rows.size() != layers()) {
    throw Error(ErrorCode::kShape, "cache append needs one key/value row per layer");
  }
  if (!entries_.empty() && entry.position <= entries_.back().position) {
    throw Error(ErrorCode::kOrdering, "cache positions must be strictly increasing (got " +
                                          std::to_string(entry.position) + " after " +
                                          std::to_string(entries_.back().position) + ")");
  }
  for (std::size_t l = 0; l < layers(); ++l) {
    keys_[l].append_row(key_rows[l]);
    values_[l].append_row(value_rows[l]);
  }
  entries_.push_back(entry);
}

template <typename T>
void BasicKvCache<T>::erase(std::size_t index) {
  if (index >= entries_.size()) throw Error(ErrorCode::kShape, "cache erase out of range");
  for (std::size_t l = 0; l < layers(); ++l) {
    keys_[l].erase_row(index);
    values_[l].erase_row(index);
  }
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(index));
}

template <typename T>
std::size_t BasicKvCache<T>::erase_tag(TokenTag tag) {
  std::size_t removed = 0;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (entries_[i].slot.tag == tag) {
      erase(i);
      ++removed;
    }
  }
  return removed;
}

template <typename T>
std::size_t BasicKvCache<T>::find_carrier(std::int64_t frame) const noexcept {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].slot.tag == TokenTag::kCarrier && entries_[i].slot.frame == frame) return i;
  }
  return npos;
}

template <typename T>
std::size_t BasicKvCache<T>::count(TokenTag tag) const noexcept {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [tag](const CacheEntry& e) { return e.slot.tag == tag; }));
}

template <typename T>
std::size_t BasicKvCache<T>::max_position() const noexcept {
  return entries_.empty() ? 0 : entries_.back().position;
}

template class BasicKvCache<float>;
template class BasicKvCache<double>;

namespace {

template <typename T>
BasicMatrix<T> merge(const BasicMatrix<T>& w, const LoraPair<T>& lora) {
  if (lora.a.empty() || lora.b.empty()) return w;
  BasicMatrix<T> out = w;
  add_inplace(out, matmul(lora.a, lora.b));
  return out;
}

}  // namespace

template <typename T>
BasicModel<T>::BasicModel(BasicWeights<T> weights) : weights_(std::move(weights)) {
  weights_.config.validate();
  const auto& c = weights_.config;
  if (weights_.layers.size() != c.layers || weights_.token_embedding.rows() != c.vocab_size ||
      weights_.token_embedding.cols() != c.model_dim ||
      weights_.position_embedding.rows() != c.max_positions ||
      weights_.unembedding.cols() != c.vocab_size) {
    throw Error(ErrorCode::kConfig, "weights do not match their config");
  }
  // Merging is bookkeeping, not per-token work: keep it off the counter.
  const auto saved = flop_counter();
  for (const auto& l : weights_.layers) {
    merged_.push_back(
        {merge(l.wq, l.lora_q), merge(l.wk, l.lora_k), merge(l.wv, l.lora_v), merge(l.wo, l.lora_o)});
  }
  flop_counter() = saved;
}

template <typename T>
BasicModel<T> BasicModel<T>::with_config(const ModelConfig& config) const {
  if (!config.same_architecture(weights_.config)) {
    throw Error(ErrorCode::kConfig, "runtime config does not match the weights' architecture");
  }
  config.validate();
  BasicModel copy = *this;
  copy.weights_.config = config;
  return copy;
}

template class BasicModel<float>;
template class BasicModel<double>;

template <typename T>
BasicMatrix<T> embed_positions(const BasicMatrix<T>& embeddings,
                               std::span<const std::size_t> positions,
                               const BasicWeights<T>& weights) {
  if (embeddings.rows() != positions.size()) {
    throw Error(ErrorCode::kShape, "one position per embedding row required");
  }
  if (embeddings.cols() != weights.position_embedding.cols()) {
    throw Error(ErrorCode::kShape, "embedding width does not match the model");
  }
  BasicMatrix<T> out = embeddings;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= weights.position_embedding.rows()) {
      throw Error(ErrorCode::kCapacity, "position " + std::to_string(positions[i]) +
                                            " exceeds max_positions " +
                                            std::to_string(weights.position_embedding.rows()));
    }
    auto row = out.row(i);
    auto pos = weights.position_embedding.row(positions[i]);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += pos[j];
  }
  return out;
}

template <typename T>
BasicMatrix<T> embed_tokens(const BasicWeights<T>& weights, std::span<const std::int32_t> tokens) {
  BasicMatrix<T> out(tokens.size(), weights.config.model_dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= weights.token_embedding.rows()) {
      throw Error(ErrorCode::kConfig, "token id " + std::to_string(tokens[i]) +
                                          " outside vocabulary of " +
                                          std::to_string(weights.token_embedding.rows()));
    }
    std::ranges::copy(weights.token_embedding.row(static_cast<std::size_t>(tokens[i])),
                      out.row(i).begin());
  }
  return out;
}

template <typename T>
BasicMatrix<T> attention_forward(const BasicMatrix<T>& q, const BasicMatrix<T>& keys,
                                 const BasicMatrix<T>& values, std::span<const std::uint8_t> mask,
                                 std::size_t heads, std::vector<BasicMatrix<T>>* probs_out) {
  const std::size_t s = q.rows(), c = keys.rows(), d = q.cols();
  if (heads == 0 || d % heads != 0 || keys.cols() != d || values.cols() != d || values.rows() != c) {
    throw Error(ErrorCode::kShape, "attention operand shapes disagree");
  }
  if (mask.size() != s * c) {
    throw Error(ErrorCode::kShape, "attention mask must cover every (query, key) pair");
  }
  const std::size_t dk = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  BasicMatrix<T> out(s, d);
  if (probs_out) probs_out->assign(heads, BasicMatrix<T>(s, c));
  std::vector<T> row(c);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    for (std::size_t i = 0; i < s; ++i) {
      const auto allow = mask.subspan(i * c, c);
      const T* qi = q.data() + i * d + off;
      for (std::size_t j = 0; j < c; ++j) {
        if (!allow[j]) {
          row[j] = T(0);
          continue;
        }
        const T* kj = keys.data() + j * d + off;
        T acc = T(0);
        for (std::size_t e = 0; e < dk; ++e) acc += qi[e] * kj[e];
        row[j] = acc * scale;
      }
      softmax_row<T>(row, allow);
      T* yi = out.data() + i * d + off;
      for (std::size_t j = 0; j < c; ++j) {
        if (!allow[j]) continue;
        const T p = row[j];
        const T* vj = values.data() + j * d + off;
        for (std::size_t e = 0; e < dk; ++e) yi[e] += p * vj[e];
      }
      if (probs_out) std::ranges::copy(row, (*probs_out)[h].row(i).begin());
    }
  }
  flop_counter() += 4ULL * s * c * d;
  return out;
}

namespace {

template <typename T>
BasicMatrix<T> layer_norm_rows(const BasicMatrix<T>& x, const BasicMatrix<T>& gain,
                               const BasicMatrix<T>& bias, T eps, BasicMatrix<T>* hat_out,
                               std::vector<T>* inv_out) {
  const std::size_t n = x.rows(), d = x.cols();
  BasicMatrix<T> out(n, d);
  if (hat_out) *hat_out = BasicMatrix<T>(n, d);
  if (inv_out) inv_out->assign(n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    T mean = T(0);
    for (T v : r) mean += v;
    mean /= static_cast<T>(d);
    T var = T(0);
    for (T v : r) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const T hat = (r[j] - mean) * inv;
      if (hat_out) (*hat_out)(i, j) = hat;
      o[j] = hat * gain(0, j) + bias(0, j);
    }
    if (inv_out) (*inv_out)[i] = inv;
  }
  return out;
}

template <typename T>
BasicMatrix<T> stack(const BasicMatrix<T>& top, const BasicMatrix<T>& bottom) {
  if (top.rows() == 0) return bottom;
  BasicMatrix<T> out(top.rows() + bottom.rows(), bottom.cols());
  std::ranges::copy(top.flat(), out.flat().begin());
  std::ranges::copy(bottom.flat(), out.flat().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

}  // namespace

template <typename T>
BasicMatrix<T> forward_step(const BasicModel<T>& model, BasicKvCache<T>& cache,
                            const BasicMatrix<T>& new_embeddings,
                            std::span<const std::size_t> positions, const MaskSpec& mask,
                            TagSet retain, const ForwardOptions& options, ForwardTape<T>* tape) {
  const ModelConfig& cfg = model.config();
  const BasicWeights<T>& w = model.weights();
  const std::size_t s = new_embeddings.rows();
  const std::size_t c = cache.size() + s;
  if (cache.layers() != cfg.layers || cache.model_dim() != cfg.model_dim) {
    throw Error(ErrorCode::kShape, "cache does not belong to this model");
  }
  if (positions.size() != s || mask.queries() != s || mask.keys() != c) {
    throw Error(ErrorCode::kShape, "mask must be " + std::to_string(s) + "x" + std::to_string(c) +
                                       ", got " + std::to_string(mask.queries()) + "x" +
                                       std::to_string(mask.keys()));
  }
  for (std::size_t i = 0; i < s; ++i) {
    const bool after_cache = cache.empty() || positions[i] > cache.max_position();
    if (!after_cache || (i > 0 && positions[i] <= positions[i - 1])) {
      throw Error(ErrorCode::kOrdering,
                  "new positions must increase and follow every cached position");
    }
  }
  if (tape && !cache.empty()) {
    throw Error(ErrorCode::kState, "taped forward passes run on an empty cache");
  }

  const T eps = static_cast<T>(cfg.norm_eps);
  const std::size_t heads = cfg.heads;
  const std::size_t dk = cfg.head_dim();
  BasicMatrix<T> x = embed_positions(new_embeddings, positions, w);

  std::vector<BasicMatrix<T>> new_keys, new_values;
  new_keys.reserve(cfg.layers);
  new_values.reserve(cfg.layers);
  if (tape) tape->layers.assign(cfg.layers, {});

  std::vector<std::size_t> key_positions;
  AttentionObserver* observer = nullptr;
  if constexpr (std::is_same_v<T, float>) observer = options.observer;
  if (observer) {
    for (const auto& e : cache.entries()) key_positions.push_back(e.position);
    key_positions.insert(key_positions.end(), positions.begin(), positions.end());
  }

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& lw = w.layers[l];
    const auto& proj = model.projections(l);
    LayerTape<T>* lt = tape ? &tape->layers[l] : nullptr;
    if (lt) lt->input = x;

    BasicMatrix<T> n1 = layer_norm_rows(x, lw.norm1_gain, lw.norm1_bias, eps,
                                        lt ? &lt->norm1_hat : nullptr,
                                        lt ? &lt->norm1_inv_std : nullptr);
    BasicMatrix<T> q = matmul(n1, proj.wq);
    BasicMatrix<T> k = matmul(n1, proj.wk);
    BasicMatrix<T> v = matmul(n1, proj.wv);

    const BasicMatrix<T> keys = stack(cache.keys(l), k);
    const BasicMatrix<T> values = stack(cache.values(l), v);
    std::vector<BasicMatrix<T>> probs;
    const bool want_probs = lt != nullptr || observer != nullptr;
    BasicMatrix<T> attn =
        attention_forward(q, keys, values, mask.grid(), heads, want_probs ? &probs : nullptr);

    if constexpr (std::is_same_v<T, float>) {
      if (observer) {
        const bool vectors = observer->wants_vectors();
        std::vector<float> qh(dk), kh(vectors ? c * dk : 0);
        for (std::size_t h = 0; h < heads; ++h) {
          if (vectors) {
            for (std::size_t j = 0; j < c; ++j)
              for (std::size_t e = 0; e < dk; ++e) kh[j * dk + e] = keys(j, h * dk + e);
          }
          for (std::size_t i = 0; i < s; ++i) {
            if (!observer->wants(l, h, positions[i])) continue;
            if (vectors)
              for (std::size_t e = 0; e < dk; ++e) qh[e] = q(i, h * dk + e);
            AttentionRowView view;
            view.layer = l;
            view.head = h;
            view.query_position = positions[i];
            view.query_slot = mask.query_slots()[i];
            view.key_positions = key_positions;
            view.key_slots = mask.key_slots();
            view.allowed = mask.row(i);
            view.weights = probs[h].row(i);
            if (vectors) {
              view.query = qh;
              view.keys = kh;
            }
            observer->on_row(view);
          }
        }
      }
    }

    BasicMatrix<T> mid = matmul(attn, proj.wo);
    add_inplace(mid, x);
    BasicMatrix<T> n2 = layer_norm_rows(mid, lw.norm2_gain, lw.norm2_bias, eps,
                                        lt ? &lt->norm2_hat : nullptr,
                                        lt ? &lt->norm2_inv_std : nullptr);
    BasicMatrix<T> up = matmul(n2, lw.w_up);
    BasicMatrix<T> act = up;
    for (auto& a : act.flat()) a = gelu(a);
    BasicMatrix<T> out = matmul(act, lw.w_down);
    add_inplace(out, mid);

    if (lt) {
      lt->norm1 = std::move(n1);
      lt->q = std::move(q);
      lt->k = k;
      lt->v = v;
      lt->probs = std::move(probs);
      lt->attn = std::move(attn);
      lt->mid = std::move(mid);
      lt->norm2 = std::move(n2);
      lt->up = std::move(up);
      lt->act = std::move(act);
    }
    new_keys.push_back(std::move(k));
    new_values.push_back(std::move(v));
    x = std::move(out);
  }

  BasicMatrix<T> final_hat;
  std::vector<T> final_inv;
  BasicMatrix<T> nf = layer_norm_rows(x, w.final_norm_gain, w.final_norm_bias, eps,
                                      tape ? &final_hat : nullptr, tape ? &final_inv : nullptr);
  BasicMatrix<T> logits = matmul(nf, w.unembedding);
  if (tape) {
    tape->final_input = std::move(x);
    tape->final_hat = std::move(final_hat);
    tape->final_norm = std::move(nf);
    tape->final_inv_std = std::move(final_inv);
  }

  std::vector<std::span<const T>> krows(cfg.layers), vrows(cfg.layers);
  for (std::size_t i = 0; i < s; ++i) {
    const TokenSlot& slot = mask.query_slots()[i];
    if (!retain.contains(slot.tag)) continue;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      krows[l] = new_keys[l].row(i);
      vrows[l] = new_values[l].row(i);
    }
    cache.append({slot, positions[i]}, krows, vrows);
  }
  return logits;
}

std::uint64_t layer_flops(const ModelConfig& config, std::size_t new_tokens, std::size_t keys) {
  const std::uint64_t s = new_tokens, c = keys, d = config.model_dim, f = config.ff_dim;
  return 2 * s * d * 3 * d + 4 * s * c * d + 2 * s * d * d + 4 * s * d * f;
}

std::uint64_t step_flops(const ModelConfig& config, std::size_t new_tokens, std::size_t cached) {
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < config.layers; ++l) {
    total += layer_flops(config, new_tokens, cached + new_tokens);
  }
  return total + 2ULL * new_tokens * config.model_dim * config.vocab_size;
}

#define VIDEOSCAN_INSTANTIATE(T)                                                                 \
  template BasicMatrix<T> embed_positions(const BasicMatrix<T>&, std::span<const std::size_t>,   \
                                          const BasicWeights<T>&);                               \
  template BasicMatrix<T> embed_tokens(const BasicWeights<T>&, std::span<const std::int32_t>);   \
  template BasicMatrix<T> attention_forward(const BasicMatrix<T>&, const BasicMatrix<T>&,        \
                                            const BasicMatrix<T>&, std::span<const std::uint8_t>, \
                                            std::size_t, std::vector<BasicMatrix<T>>*);          \
  template BasicMatrix<T> forward_step(const BasicModel<T>&, BasicKvCache<T>&,                   \
                                       const BasicMatrix<T>&, std::span<const std::size_t>,      \
                                       const MaskSpec&, TagSet, const ForwardOptions&,           \
                                       ForwardTape<T>*);

VIDEOSCAN_INSTANTIATE(float)
VIDEOSCAN_INSTANTIATE(double)

#undef VIDEOSCAN_INSTANTIATE

}  // namespace videoscan
