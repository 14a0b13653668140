#include <algorithm>
#include <cmath>

#include "videoscan/error.hpp"
#include "videoscan/training.hpp"

namespace videoscan {

namespace {

// dx for y = hat * gain + bias, hat = (x - mean) * inv_std. Accumulates
// the gain/bias gradients.
template <typename T>
BasicMatrix<T> layer_norm_backward(const BasicMatrix<T>& dy, const BasicMatrix<T>& hat,
                                   const std::vector<T>& inv_std, const BasicMatrix<T>& gain,
                                   BasicMatrix<T>* dgain, BasicMatrix<T>* dbias) {
  const std::size_t rows = dy.rows();
  const std::size_t d = dy.cols();
  BasicMatrix<T> dx(rows, d);
  std::vector<T> dhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    T mean_dhat = T(0);
    T mean_dhat_hat = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T g = dy(r, j);
      if (dgain) (*dgain)(0, j) += g * hat(r, j);
      if (dbias) (*dbias)(0, j) += g;
      dhat[j] = g * gain(0, j);
      mean_dhat += dhat[j];
      mean_dhat_hat += dhat[j] * hat(r, j);
    }
    mean_dhat /= static_cast<T>(d);
    mean_dhat_hat /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx(r, j) = inv_std[r] * (dhat[j] - mean_dhat - hat(r, j) * mean_dhat_hat);
    }
  }
  return dx;
}

template <typename T>
void add_scaled(BasicMatrix<T>& dst, const BasicMatrix<T>& src, T scale) {
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

// Gradient of W_eff = W + A B into W, A and B.
template <typename T>
void projection_backward(const BasicMatrix<T>& d_eff, const LoraPair<T>& lora, BasicMatrix<T>& dw,
                         LoraPair<T>& dlora) {
  add_inplace(dw, d_eff);
  add_inplace(dlora.a, matmul_bt(d_eff, lora.b));
  add_inplace(dlora.b, matmul_at(lora.a, d_eff));
}

}  // namespace

template <typename T>
BasicMatrix<T> assemble_inputs(const BasicWeights<T>& w, const TrainingExample& ex) {
  const std::size_t d = w.config.model_dim;
  BasicMatrix<T> x(ex.rows.size(), d);
  const auto needs_stub = [&](std::size_t symbol) {
    if (symbol >= w.frame_stub.rows() || w.frame_stub.cols() != d) {
      throw Error(ErrorCode::kState, "frame stub is missing or too small for symbol " +
                                         std::to_string(symbol));
    }
  };
  for (std::size_t i = 0; i < ex.rows.size(); ++i) {
    const RowSource& src = ex.rows[i];
    auto out = x.row(i);
    switch (src.kind) {
      case RowSource::Kind::kToken: {
        if (src.token < 0 || static_cast<std::size_t>(src.token) >= w.config.vocab_size) {
          throw Error(ErrorCode::kConfig, "token id " + std::to_string(src.token) + " out of range");
        }
        const auto e = w.token_embedding.row(static_cast<std::size_t>(src.token));
        std::copy(e.begin(), e.end(), out.begin());
        break;
      }
      case RowSource::Kind::kFrameToken: {
        const std::size_t sym = ex.frame_symbols.at(src.frame);
        needs_stub(sym);
        const auto stub = w.frame_stub.row(sym);
        const auto noise = ex.frame_noise.at(src.frame).row(src.row);
        for (std::size_t j = 0; j < d; ++j) out[j] = stub[j] + static_cast<T>(noise[j]);
        break;
      }
      case RowSource::Kind::kCarrier: {
        const std::size_t sym = ex.frame_symbols.at(src.frame);
        needs_stub(sym);
        const auto stub = w.frame_stub.row(sym);
        const Matrix& noise = ex.frame_noise.at(src.frame);
        const std::size_t n = noise.rows();
        if (ex.carrier_mode == CarrierMode::kLastToken) {
          for (std::size_t j = 0; j < d; ++j) out[j] = stub[j] + static_cast<T>(noise(n - 1, j));
        } else {
          for (std::size_t j = 0; j < d; ++j) {
            T acc = T(0);
            for (std::size_t r = 0; r < n; ++r) acc += stub[j] + static_cast<T>(noise(r, j));
            out[j] = acc / static_cast<T>(n);
          }
        }
        break;
      }
    }
  }
  return x;
}

template <typename T>
LossStats<T> example_loss(const BasicModel<T>& model, const TrainingExample& ex,
                          BasicWeights<T>* grad, T scale, BasicMatrix<T>* d_inputs) {
  const BasicWeights<T>& w = model.weights();
  const ModelConfig& cfg = w.config;
  const std::size_t d = cfg.model_dim;
  const std::size_t heads = cfg.heads;
  const std::size_t dk = cfg.head_dim();
  const std::size_t vocab = cfg.vocab_size;

  const BasicMatrix<T> input = assemble_inputs(w, ex);
  const std::size_t s = input.rows();
  BasicKvCache<T> cache(cfg.layers, d);
  const bool backward = grad != nullptr || d_inputs != nullptr;
  ForwardTape<T> tape;
  const BasicMatrix<T> logits =
      forward_step(model, cache, input, ex.positions, ex.mask, TagSet{}, {}, backward ? &tape : nullptr);

  LossStats<T> stats;
  BasicMatrix<T> dlogits(backward ? s : 0, backward ? vocab : 0);
  for (const auto& [row, target] : ex.targets) {
    const auto z = logits.row(row);
    const T mx = *std::max_element(z.begin(), z.end());
    T sum = T(0);
    for (T v : z) sum += std::exp(v - mx);
    const T log_z = mx + std::log(sum);
    stats.loss += log_z - z[static_cast<std::size_t>(target)];
    stats.targets += 1;
    const auto best = static_cast<std::int32_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (best == target) stats.correct += 1;
    if (backward) {
      for (std::size_t j = 0; j < vocab; ++j) dlogits(row, j) += std::exp(z[j] - log_z);
      dlogits(row, static_cast<std::size_t>(target)) -= T(1);
    }
  }
  if (!backward) return stats;

  // Readout and final norm.
  BasicWeights<T> local;
  BasicWeights<T>* g = grad;
  if (!g) {
    local = w.zeros_like();
    g = &local;
  }
  const T sc = grad ? scale : T(1);
  add_scaled(g->unembedding, matmul_at(tape.final_norm, dlogits), sc);
  BasicMatrix<T> dx = matmul_bt(dlogits, w.unembedding);
  {
    BasicMatrix<T> dgain(1, d), dbias(1, d);
    dx = layer_norm_backward(dx, tape.final_hat, tape.final_inv_std, w.final_norm_gain, &dgain, &dbias);
    add_scaled(g->final_norm_gain, dgain, sc);
    add_scaled(g->final_norm_bias, dbias, sc);
  }

  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));
  for (std::size_t l = cfg.layers; l-- > 0;) {
    const LayerWeights<T>& lw = w.layers[l];
    const auto& proj = model.projections(l);
    const LayerTape<T>& lt = tape.layers[l];
    LayerWeights<T>& gl = g->layers[l];

    // Feed-forward block: out = gelu(LN2(mid) W_up) W_down + mid.
    add_scaled(gl.w_down, matmul_at(lt.act, dx), sc);
    BasicMatrix<T> dup = matmul_bt(dx, lw.w_down);
    for (std::size_t i = 0; i < dup.size(); ++i) dup.flat()[i] *= gelu_grad(lt.up.flat()[i]);
    add_scaled(gl.w_up, matmul_at(lt.norm2, dup), sc);
    BasicMatrix<T> dn2 = matmul_bt(dup, lw.w_up);
    BasicMatrix<T> dgain2(1, d), dbias2(1, d);
    BasicMatrix<T> dmid = layer_norm_backward(dn2, lt.norm2_hat, lt.norm2_inv_std, lw.norm2_gain,
                                              &dgain2, &dbias2);
    add_scaled(gl.norm2_gain, dgain2, sc);
    add_scaled(gl.norm2_bias, dbias2, sc);
    add_inplace(dmid, dx);

    // Attention block: mid = attn W_o + x.
    BasicMatrix<T> dwo = matmul_at(lt.attn, dmid);
    BasicMatrix<T> dattn = matmul_bt(dmid, proj.wo);
    BasicMatrix<T> dq(s, d), dk_(s, d), dv(s, d);
    std::vector<T> dp(s);
    for (std::size_t h = 0; h < heads; ++h) {
      const BasicMatrix<T>& p = lt.probs[h];
      const std::size_t off = h * dk;
      for (std::size_t i = 0; i < s; ++i) {
        // dP = dOut V^T, then the softmax Jacobian.
        T dot_pd = T(0);
        for (std::size_t j = 0; j < s; ++j) {
          T acc = T(0);
          if (p(i, j) != T(0)) {
            for (std::size_t e = 0; e < dk; ++e) acc += dattn(i, off + e) * lt.v(j, off + e);
          }
          dp[j] = acc;
          dot_pd += acc * p(i, j);
        }
        for (std::size_t j = 0; j < s; ++j) {
          const T pij = p(i, j);
          if (pij == T(0)) continue;
          for (std::size_t e = 0; e < dk; ++e) dv(j, off + e) += pij * dattn(i, off + e);
          const T ds = pij * (dp[j] - dot_pd) * inv_sqrt_dk;
          for (std::size_t e = 0; e < dk; ++e) {
            dq(i, off + e) += ds * lt.k(j, off + e);
            dk_(j, off + e) += ds * lt.q(i, off + e);
          }
        }
      }
    }
    BasicMatrix<T> dwq = matmul_at(lt.norm1, dq);
    BasicMatrix<T> dwk = matmul_at(lt.norm1, dk_);
    BasicMatrix<T> dwv = matmul_at(lt.norm1, dv);
    if (sc != T(1)) {
      for (auto* m : {&dwq, &dwk, &dwv, &dwo}) for (T& v : m->flat()) v *= sc;
    }
    projection_backward(dwq, lw.lora_q, gl.wq, gl.lora_q);
    projection_backward(dwk, lw.lora_k, gl.wk, gl.lora_k);
    projection_backward(dwv, lw.lora_v, gl.wv, gl.lora_v);
    projection_backward(dwo, lw.lora_o, gl.wo, gl.lora_o);

    BasicMatrix<T> dn1 = matmul_bt(dq, proj.wq);
    add_inplace(dn1, matmul_bt(dk_, proj.wk));
    add_inplace(dn1, matmul_bt(dv, proj.wv));
    BasicMatrix<T> dgain1(1, d), dbias1(1, d);
    BasicMatrix<T> dinput = layer_norm_backward(dn1, lt.norm1_hat, lt.norm1_inv_std, lw.norm1_gain,
                                                &dgain1, &dbias1);
    add_scaled(gl.norm1_gain, dgain1, sc);
    add_scaled(gl.norm1_bias, dbias1, sc);
    add_inplace(dinput, dmid);
    dx = std::move(dinput);
  }
  // Embedding sums: x = e + P[pos].
  for (std::size_t i = 0; i < s; ++i) {
    auto src = dx.row(i);
    auto prow = g->position_embedding.row(ex.positions[i]);
    for (std::size_t j = 0; j < d; ++j) prow[j] += sc * src[j];
    const RowSource& rs = ex.rows[i];
    switch (rs.kind) {
      case RowSource::Kind::kToken: {
        auto trow = g->token_embedding.row(static_cast<std::size_t>(rs.token));
        for (std::size_t j = 0; j < d; ++j) trow[j] += sc * src[j];
        break;
      }
      case RowSource::Kind::kFrameToken:
      case RowSource::Kind::kCarrier: {
        auto srow = g->frame_stub.row(ex.frame_symbols[rs.frame]);
        for (std::size_t j = 0; j < d; ++j) srow[j] += sc * src[j];
        break;
      }
    }
  }
  if (d_inputs) *d_inputs = std::move(dx);
  return stats;
}

template <typename T>
LossStats<T> batch_loss(const BasicWeights<T>& weights, std::span<const TrainingExample> batch,
                        BasicWeights<T>* grad) {
  std::size_t total = 0;
  for (const auto& ex : batch) total += ex.targets.size();
  if (total == 0) throw Error(ErrorCode::kState, "batch has no answer targets");
  const BasicModel<T> model(weights);
  const T scale = T(1) / static_cast<T>(total);
  LossStats<T> out;
  for (const auto& ex : batch) {
    const LossStats<T> s = example_loss(model, ex, grad, scale);
    out.loss += s.loss;
    out.correct += s.correct;
    out.targets += s.targets;
  }
  out.loss *= scale;
  return out;
}

#define VIDEOSCAN_INSTANTIATE(T)                                                                \
  template BasicMatrix<T> assemble_inputs(const BasicWeights<T>&, const TrainingExample&);      \
  template LossStats<T> example_loss(const BasicModel<T>&, const TrainingExample&,              \
                                     BasicWeights<T>*, T, BasicMatrix<T>*);                     \
  template LossStats<T> batch_loss(const BasicWeights<T>&, std::span<const TrainingExample>,    \
                                   BasicWeights<T>*);

VIDEOSCAN_INSTANTIATE(float)
VIDEOSCAN_INSTANTIATE(double)

#undef VIDEOSCAN_INSTANTIATE

}  // namespace videoscan
