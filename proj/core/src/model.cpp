#include "videoscan/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "videoscan/error.hpp"
#include "videoscan/random.hpp"

namespace videoscan {

namespace {

template <typename T, typename Fn>
void visit(std::vector<LayerWeights<T>>& layers, Fn&& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    fn(p + "wq", l.wq);
    fn(p + "wk", l.wk);
    fn(p + "wv", l.wv);
    fn(p + "wo", l.wo);
    fn(p + "w_up", l.w_up);
    fn(p + "w_down", l.w_down);
    fn(p + "norm1_gain", l.norm1_gain);
    fn(p + "norm1_bias", l.norm1_bias);
    fn(p + "norm2_gain", l.norm2_gain);
    fn(p + "norm2_bias", l.norm2_bias);
    fn(p + "lora_q.a", l.lora_q.a);
    fn(p + "lora_q.b", l.lora_q.b);
    fn(p + "lora_k.a", l.lora_k.a);
    fn(p + "lora_k.b", l.lora_k.b);
    fn(p + "lora_v.a", l.lora_v.a);
    fn(p + "lora_v.b", l.lora_v.b);
    fn(p + "lora_o.a", l.lora_o.a);
    fn(p + "lora_o.b", l.lora_o.b);
  }
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
void BasicWeights<T>::for_each(const std::function<void(const std::string&, BasicMatrix<T>&)>& fn) {
  fn("token_embedding", token_embedding);
  fn("position_embedding", position_embedding);
  fn("unembedding", unembedding);
  fn("final_norm_gain", final_norm_gain);
  fn("final_norm_bias", final_norm_bias);
  visit(layers, fn);
  fn("frame_stub", frame_stub);
}

template <typename T>
void BasicWeights<T>::for_each(
    const std::function<void(const std::string&, const BasicMatrix<T>&)>& fn) const {
  auto& self = const_cast<BasicWeights&>(*this);
  self.for_each([&](const std::string& name, BasicMatrix<T>& m) { fn(name, m); });
}

template <typename T>
BasicWeights<T> BasicWeights<T>::zeros_like() const {
  BasicWeights out = *this;
  out.for_each([](const std::string&, BasicMatrix<T>& m) { m.fill(T(0)); });
  return out;
}

template <typename T>
std::size_t BasicWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const BasicMatrix<T>& m) { n += m.size(); });
  return n;
}

template struct BasicWeights<float>;
template struct BasicWeights<double>;

Weights init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.model_dim;
  const std::size_t r = config.lora_rank;
  Weights w;
  w.config = config;
  w.token_embedding = Matrix(config.vocab_size, d);
  w.position_embedding = Matrix(config.max_positions, d);
  w.unembedding = Matrix(d, config.vocab_size);
  w.final_norm_gain = Matrix(1, d, 1.0f);
  w.final_norm_bias = Matrix(1, d);
  w.frame_stub = Matrix(0, d);
  for (std::size_t i = 0; i < config.layers; ++i) {
    LayerWeights<float> l;
    l.wq = l.wk = l.wv = l.wo = Matrix(d, d);
    l.w_up = Matrix(d, config.ff_dim);
    l.w_down = Matrix(config.ff_dim, d);
    l.norm1_gain = l.norm2_gain = Matrix(1, d, 1.0f);
    l.norm1_bias = l.norm2_bias = Matrix(1, d);
    for (auto* p : {&l.lora_q, &l.lora_k, &l.lora_v, &l.lora_o}) {
      p->a = Matrix(d, r);
      p->b = Matrix(r, d);
    }
    w.layers.push_back(std::move(l));
  }

  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  w.for_each([&](const std::string& name, Matrix& m) {
    if (ends_with(name, "_gain") || ends_with(name, "_bias") || ends_with(name, ".b")) return;
    for (auto& v : m.flat()) v = static_cast<float>(rng.uniform(-scale, scale));
  });
  return w;
}

template <typename T>
void init_frame_stub(BasicWeights<T>& weights, std::size_t symbols, std::uint64_t seed) {
  const std::size_t d = weights.config.model_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(seed ^ 0x5354554253545542ULL);
  weights.frame_stub = BasicMatrix<T>(symbols, d);
  for (auto& v : weights.frame_stub.flat()) v = static_cast<T>(rng.uniform(-scale, scale));
}

template void init_frame_stub(BasicWeights<float>&, std::size_t, std::uint64_t);
template void init_frame_stub(BasicWeights<double>&, std::size_t, std::uint64_t);

namespace {

constexpr char kMagic[4] = {'V', 'S', 'W', 'T'};

template <typename U>
void put(std::ostream& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw Error(ErrorCode::kLength, std::string("checkpoint truncated while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U value;
  std::memcpy(&value, buf, sizeof(U));
  return value;
}

void put_config(std::ostream& out, const ModelConfig& c) {
  for (std::size_t v : {c.layers, c.heads, c.model_dim, c.ff_dim, c.vocab_size, c.max_positions,
                        c.tokens_per_frame, c.memory_capacity, c.lora_rank}) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  put<std::uint8_t>(out, static_cast<std::uint8_t>(c.carrier_mode));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(c.carrier_kv_mode));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(c.eviction_rule));
  put<std::uint8_t>(out, c.memory_enabled ? 1 : 0);
  put<std::int32_t>(out, c.eos_token);
  put<float>(out, c.norm_eps);
}

ModelConfig get_config(std::istream& in) {
  ModelConfig c;
  for (std::size_t* f : {&c.layers, &c.heads, &c.model_dim, &c.ff_dim, &c.vocab_size,
                         &c.max_positions, &c.tokens_per_frame, &c.memory_capacity, &c.lora_rank}) {
    *f = get<std::uint32_t>(in, "config");
  }
  const auto enum_byte = [&](std::uint8_t max) {
    const auto b = get<std::uint8_t>(in, "config");
    if (b > max) throw Error(ErrorCode::kFormat, "checkpoint config enum out of range");
    return b;
  };
  c.carrier_mode = static_cast<CarrierMode>(enum_byte(1));
  c.carrier_kv_mode = static_cast<CarrierKvMode>(enum_byte(1));
  c.eviction_rule = static_cast<EvictionRule>(enum_byte(1));
  c.memory_enabled = enum_byte(1) != 0;
  c.eos_token = get<std::int32_t>(in, "config");
  c.norm_eps = get<float>(in, "config");
  c.validate();
  return c;
}

}  // namespace

void save_weights(const Weights& weights, std::ostream& out) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_config(out, weights.config);
  weights.for_each([&](const std::string& name, const Matrix& m) {
    if (name == "frame_stub") put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    for (float v : m.flat()) put<float>(out, v);
  });
  if (!out) throw Error(ErrorCode::kFormat, "failed writing checkpoint");
}

Weights load_weights(std::istream& in) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, "bad checkpoint magic (expected VSWT)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const ModelConfig config = get_config(in);
  // Shapes come from a freshly initialized model; values are overwritten.
  Weights w = init_model(config, 0);
  w.for_each([&](const std::string& name, Matrix& m) {
    if (name == "frame_stub") {
      const auto rows = get<std::uint32_t>(in, "frame stub rows");
      m = Matrix(rows, config.model_dim);
    }
    for (auto& v : m.flat()) v = get<float>(in, name.c_str());
  });
  return w;
}

void save_weights(const Weights& weights, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kFormat, "cannot open " + path.string() + " for writing");
  save_weights(weights, out);
}

Weights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFormat, "cannot open " + path.string());
  return load_weights(in);
}

}  // namespace videoscan
