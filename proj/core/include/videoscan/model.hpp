#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "videoscan/config.hpp"
#include "videoscan/numerics.hpp"

namespace videoscan {

// Low-rank update W + A * B with A: d x r, B: r x d.
template <typename T>
struct LoraPair {
  BasicMatrix<T> a;
  BasicMatrix<T> b;

  friend bool operator==(const LoraPair&, const LoraPair&) = default;
};

template <typename T>
struct LayerWeights {
  BasicMatrix<T> wq, wk, wv, wo;  // d x d
  BasicMatrix<T> w_up;            // d x ff
  BasicMatrix<T> w_down;          // ff x d
  BasicMatrix<T> norm1_gain, norm1_bias;  // 1 x d
  BasicMatrix<T> norm2_gain, norm2_bias;  // 1 x d
  LoraPair<T> lora_q, lora_k, lora_v, lora_o;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

template <typename T>
struct BasicWeights {
  ModelConfig config;
  BasicMatrix<T> token_embedding;     // vocab x d
  BasicMatrix<T> position_embedding;  // max_positions x d
  BasicMatrix<T> unembedding;         // d x vocab
  BasicMatrix<T> final_norm_gain, final_norm_bias;  // 1 x d
  std::vector<LayerWeights<T>> layers;
  // Stand-in for the vision encoder: one learned code per synthetic symbol
  // (alphabet x d). Empty until the training harness creates it.
  BasicMatrix<T> frame_stub;

  // Zero-filled tensors with the same shapes (used as gradient buffers).
  BasicWeights zeros_like() const;

  template <typename U>
  BasicWeights<U> cast() const;

  // Visits every tensor in checkpoint declaration order. The name is stable
  // and used for parameter-group reporting.
  void for_each(const std::function<void(const std::string&, BasicMatrix<T>&)>& fn);
  void for_each(const std::function<void(const std::string&, const BasicMatrix<T>&)>& fn) const;

  std::size_t parameter_count() const;

  friend bool operator==(const BasicWeights&, const BasicWeights&) = default;
};

using Weights = BasicWeights<float>;
using Weights64 = BasicWeights<double>;

// Scaled-uniform initialization U(-1/sqrt(d), 1/sqrt(d)); norm gains 1,
// biases 0, adapter B matrices 0 so A*B vanishes at creation.
Weights init_model(const ModelConfig& config, std::uint64_t seed);

// Creates the frame stub with `symbols` rows, drawn from the same
// initializer family.
template <typename T>
void init_frame_stub(BasicWeights<T>& weights, std::size_t symbols, std::uint64_t seed);

// Checkpoint: "VSWT", u32 version, serialized ModelConfig, then every
// tensor in declaration order as little-endian f32 (the stub is preceded by
// its u32 row count).
void save_weights(const Weights& weights, std::ostream& out);
Weights load_weights(std::istream& in);
void save_weights(const Weights& weights, const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
template <typename U>
BasicWeights<U> BasicWeights<T>::cast() const {
  BasicWeights<U> out;
  out.config = config;
  out.token_embedding = token_embedding.template cast<U>();
  out.position_embedding = position_embedding.template cast<U>();
  out.unembedding = unembedding.template cast<U>();
  out.final_norm_gain = final_norm_gain.template cast<U>();
  out.final_norm_bias = final_norm_bias.template cast<U>();
  out.frame_stub = frame_stub.template cast<U>();
  const auto lora = [](const LoraPair<T>& p) {
    return LoraPair<U>{p.a.template cast<U>(), p.b.template cast<U>()};
  };
  for (const auto& l : layers) {
    LayerWeights<U> o;
    o.wq = l.wq.template cast<U>();
    o.wk = l.wk.template cast<U>();
    o.wv = l.wv.template cast<U>();
    o.wo = l.wo.template cast<U>();
    o.w_up = l.w_up.template cast<U>();
    o.w_down = l.w_down.template cast<U>();
    o.norm1_gain = l.norm1_gain.template cast<U>();
    o.norm1_bias = l.norm1_bias.template cast<U>();
    o.norm2_gain = l.norm2_gain.template cast<U>();
    o.norm2_bias = l.norm2_bias.template cast<U>();
    o.lora_q = lora(l.lora_q);
    o.lora_k = lora(l.lora_k);
    o.lora_v = lora(l.lora_v);
    o.lora_o = lora(l.lora_o);
    out.layers.push_back(std::move(o));
  }
  return out;
}

extern template struct BasicWeights<float>;
extern template struct BasicWeights<double>;

}  // namespace videoscan
