#include "videoscan/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>

#include "videoscan/error.hpp"
#include "videoscan/random.hpp"
#include "videoscan/session.hpp"

namespace videoscan {

namespace {

constexpr std::uint64_t kTrainStream = 0x7472;
constexpr std::uint64_t kInitStub = 0x5354;

bool in_vocab(std::int32_t t, const ModelConfig& c) {
  return t >= 0 && static_cast<std::size_t>(t) < c.vocab_size;
}

std::size_t carrier_position(const TaskSpec& spec, const ModelConfig& c, std::size_t frame) {
  return spec.system_tokens.size() + frame * (c.tokens_per_frame + 1) + c.tokens_per_frame;
}

// Flattened view over every tensor of a weights object, in for_each order.
template <typename T>
std::vector<std::pair<std::string, BasicMatrix<T>*>> tensors(BasicWeights<T>& w) {
  std::vector<std::pair<std::string, BasicMatrix<T>*>> out;
  w.for_each([&](const std::string& name, BasicMatrix<T>& m) { out.emplace_back(name, &m); });
  return out;
}

bool is_stub(const std::string& name) { return name == "frame_stub"; }

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const Weights& w) : cfg_(cfg) {
    if (cfg.optimizer == OptimizerKind::kAdam) {
      m_ = w.zeros_like();
      v_ = w.zeros_like();
    }
  }

  void step(Weights& w, Weights& g, const std::vector<bool>& trainable) {
    ++t_;
    auto params = tensors(w);
    auto grads = tensors(g);
    if (cfg_.optimizer == OptimizerKind::kSgd) {
      const auto lr = static_cast<float>(cfg_.learning_rate);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) continue;
        auto p = params[i].second->flat();
        auto d = grads[i].second->flat();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * d[k];
      }
      return;
    }
    auto ms = tensors(m_);
    auto vs = tensors(v_);
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!trainable[i]) continue;
      auto p = params[i].second->flat();
      auto d = grads[i].second->flat();
      auto m = ms[i].second->flat();
      auto v = vs[i].second->flat();
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = d[k];
        const double mk = b1 * m[k] + (1.0 - b1) * gk;
        const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
        m[k] = static_cast<float>(mk);
        v[k] = static_cast<float>(vk);
        const double upd = cfg_.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + cfg_.adam_eps);
        p[k] = static_cast<float>(p[k] - upd);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  Weights m_, v_;
  std::size_t t_ = 0;
};

TrainResult train_loop(const Weights& start, const TaskSpec& task, const TrainConfig& cfg,
                       ExampleLayout layout, bool train_stub) {
  cfg.validate();
  task.validate(start.config);
  TrainResult result;
  result.weights = start;
  Weights& w = result.weights;
  if (w.frame_stub.rows() < task.alphabet) {
    if (!train_stub) {
      throw Error(ErrorCode::kState, "stage 2 needs a frame stub created by stage 1");
    }
    init_frame_stub(w, task.alphabet, derive_seed(cfg.seed, kInitStub));
  }

  Weights grad = w.zeros_like();
  std::vector<bool> trainable;
  w.for_each([&](const std::string& name, const Matrix&) {
    trainable.push_back(train_stub || !is_stub(name));
  });
  Optimizer opt(cfg, w);
  const std::uint64_t data_base = derive_seed(task.train_seed, derive_seed(cfg.seed, kTrainStream));
  std::vector<TrainingExample> batch(cfg.batch_size);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const StreamSample sample =
          sample_stream(task, w.config.tokens_per_frame, w.config.model_dim,
                        derive_seed(data_base, step * cfg.batch_size + b));
      batch[b] = build_example(task, w.config, sample, layout);
    }
    grad.for_each([](const std::string&, Matrix& m) { m.fill(0.0f); });
    const LossStats<float> stats = batch_loss<float>(w, batch, &grad);
    if (!std::isfinite(stats.loss)) {
      throw Error(ErrorCode::kNumeric, "loss diverged at step " + std::to_string(step));
    }
    double sq = 0.0;
    auto gs = tensors(grad);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      if (!trainable[i]) continue;
      for (float x : gs[i].second->flat()) sq += static_cast<double>(x) * x;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      throw Error(ErrorCode::kNumeric, "gradient diverged at step " + std::to_string(step));
    }
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
      const auto f = static_cast<float>(cfg.clip_norm / norm);
      for (auto& [name, m] : gs) for (float& x : m->flat()) x *= f;
    }
    opt.step(w, grad, trainable);
    result.metrics.push_back({step, static_cast<double>(stats.loss), norm,
                              static_cast<double>(stats.correct) / static_cast<double>(stats.targets)});
  }
  return result;
}

}  // namespace

void TaskSpec::validate(const ModelConfig& c) const {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::kSpec, what); };
  if (frames_per_stream == 0) fail("frames_per_stream must be positive");
  if (alphabet == 0) fail("alphabet must be positive");
  if (alphabet > c.vocab_size) {
    fail("alphabet " + std::to_string(alphabet) + " exceeds vocab_size " + std::to_string(c.vocab_size));
  }
  if (frames_per_stream > c.memory_capacity) {
    fail("frames_per_stream " + std::to_string(frames_per_stream) + " exceeds memory capacity " +
         std::to_string(c.memory_capacity));
  }
  if (questions_per_stream == 0 || questions_per_stream > frames_per_stream) {
    fail("questions_per_stream must lie in [1, frames_per_stream]");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) fail("noise_scale must be finite and >= 0");
  if (index_token_base < static_cast<std::int32_t>(alphabet)) {
    fail("index tokens overlap the answer symbols");
  }
  const auto last_index = index_token_base + static_cast<std::int32_t>(frames_per_stream) - 1;
  if (!in_vocab(index_token_base, c) || !in_vocab(last_index, c)) fail("index tokens fall outside the vocabulary");
  std::set<std::int32_t> used;
  for (std::int32_t t = 0; t <= last_index; ++t) used.insert(t);
  if (!in_vocab(question_token, c) || !used.insert(question_token).second) {
    fail("question_token must be a free id inside the vocabulary");
  }
  for (std::int32_t t : system_tokens) {
    if (!in_vocab(t, c)) fail("system token " + std::to_string(t) + " is outside the vocabulary");
    if (t < static_cast<std::int32_t>(alphabet)) fail("system tokens overlap the answer symbols");
  }
  const std::size_t text = 3 * questions_per_stream;
  const std::size_t total = system_tokens.size() + frames_per_stream * (c.tokens_per_frame + 1) + text;
  if (total > c.max_positions) fail("a stream does not fit in max_positions");
}

StreamSample sample_stream(const TaskSpec& spec, std::size_t n, std::size_t d, std::uint64_t seed) {
  if (spec.alphabet == 0 || spec.questions_per_stream > spec.frames_per_stream) {
    throw Error(ErrorCode::kSpec, "invalid task spec");
  }
  Rng rng(seed);
  StreamSample s;
  s.symbols.resize(spec.frames_per_stream);
  for (auto& sym : s.symbols) sym = static_cast<std::size_t>(rng.below(spec.alphabet));
  s.noise.reserve(spec.frames_per_stream);
  for (std::size_t k = 0; k < spec.frames_per_stream; ++k) {
    Matrix m(n, d);
    for (float& x : m.flat()) x = static_cast<float>(spec.noise_scale * rng.normal());
    s.noise.push_back(std::move(m));
  }
  std::vector<std::size_t> order(spec.frames_per_stream);
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  for (std::size_t k = 0; k < spec.questions_per_stream; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.below(order.size() - k));
    std::swap(order[k], order[j]);
  }
  s.asked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.questions_per_stream));
  return s;
}

std::vector<FrameTokens> materialize_frames(const StreamSample& sample, const Weights& w) {
  std::vector<FrameTokens> frames;
  frames.reserve(sample.symbols.size());
  for (std::size_t k = 0; k < sample.symbols.size(); ++k) {
    const std::size_t sym = sample.symbols[k];
    if (sym >= w.frame_stub.rows()) {
      throw Error(ErrorCode::kState, "frame stub has no row for symbol " + std::to_string(sym));
    }
    FrameTokens f;
    f.index = k;
    f.embeddings = sample.noise[k];
    for (std::size_t r = 0; r < f.embeddings.rows(); ++r) {
      auto row = f.embeddings.row(r);
      const auto stub = w.frame_stub.row(sym);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = stub[j] + row[j];
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

SyntheticStream gen_synthetic_stream(const TaskSpec& spec, const Weights& weights, std::uint64_t seed) {
  spec.validate(weights.config);
  if (weights.frame_stub.rows() < spec.alphabet) {
    throw Error(ErrorCode::kSpec, "alphabet " + std::to_string(spec.alphabet) +
                                      " overflows the frame stub (" +
                                      std::to_string(weights.frame_stub.rows()) + " symbols)");
  }
  SyntheticStream out;
  out.sample = sample_stream(spec, weights.config.tokens_per_frame, weights.config.model_dim, seed);
  out.frames = materialize_frames(out.sample, weights);
  const std::size_t k = out.sample.asked.front();
  out.question = spec.question_for(k);
  out.answer = static_cast<std::int32_t>(out.sample.symbols[k]);
  return out;
}

TrainingExample build_example(const TaskSpec& spec, const ModelConfig& c, const StreamSample& sample,
                              ExampleLayout layout, std::span<const std::size_t> blocked_carriers) {
  const std::size_t n = c.tokens_per_frame;
  const std::size_t frames = sample.symbols.size();
  const bool full = layout == ExampleLayout::kFull;
  TrainingExample ex;
  ex.frame_symbols = sample.symbols;
  ex.frame_noise = sample.noise;
  ex.carrier_mode = c.carrier_mode;

  std::vector<Segment> segs;
  std::size_t cursor = 0;
  const std::size_t sys = spec.system_tokens.size();
  if (sys > 0) {
    segs.push_back({TokenTag::kSystem, 0, sys, -1});
    for (std::size_t i = 0; i < sys; ++i) {
      ex.rows.push_back({RowSource::Kind::kToken, spec.system_tokens[i], 0, 0});
      ex.positions.push_back(i);
    }
    cursor = sys;
  }
  std::vector<std::size_t> carrier_rows(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const auto id = static_cast<std::int64_t>(k);
    const std::size_t first = carrier_position(spec, c, k) - n;
    const std::size_t len = full ? n : 0;
    segs.push_back({TokenTag::kFrame, cursor, len, id});
    for (std::size_t r = 0; r < len; ++r) {
      ex.rows.push_back({RowSource::Kind::kFrameToken, 0, k, r});
      ex.positions.push_back(first + r);
    }
    cursor += len;
    segs.push_back({TokenTag::kCarrier, cursor, 1, id});
    carrier_rows[k] = cursor;
    ex.rows.push_back({RowSource::Kind::kCarrier, 0, k, 0});
    ex.positions.push_back(first + n);
    cursor += 1;
  }

  std::vector<std::int32_t> text;
  std::vector<std::pair<std::size_t, std::int32_t>> text_targets;
  for (std::size_t q = 0; q < sample.asked.size(); ++q) {
    const std::size_t k = sample.asked[q];
    const auto answer = static_cast<std::int32_t>(sample.symbols[k]);
    for (std::int32_t t : spec.question_for(k)) text.push_back(t);
    text_targets.emplace_back(text.size() - 1, answer);
    if (q + 1 < sample.asked.size()) text.push_back(answer);
  }
  const std::size_t text_pos = sys + frames * (n + 1);
  segs.push_back({TokenTag::kText, cursor, text.size(), -1});
  for (std::size_t i = 0; i < text.size(); ++i) {
    ex.rows.push_back({RowSource::Kind::kToken, text[i], 0, 0});
    ex.positions.push_back(text_pos + i);
  }
  for (const auto& [i, t] : text_targets) ex.targets.emplace_back(cursor + i, t);

  ex.mask = build_semantic_mask(SequenceLayout(std::move(segs)));
  for (std::size_t k : blocked_carriers) {
    if (k >= frames) throw Error(ErrorCode::kLayout, "blocked carrier " + std::to_string(k) + " does not exist");
    ex.mask.block_key(carrier_rows[k]);
  }
  ex.mask.check_rows();
  return ex;
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

std::string_view to_string(TrainableSet set) {
  return set == TrainableSet::kBackboneOnly ? "backbone_only" : "adapters+backbone";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adam") return OptimizerKind::kAdam;
  throw Error(ErrorCode::kConfig, "unknown optimizer '" + std::string(text) + "'");
}

TrainableSet parse_trainable_set(std::string_view text) {
  if (text == "adapters+backbone" || text == "adapters_and_backbone") return TrainableSet::kAdaptersAndBackbone;
  if (text == "backbone_only" || text == "backbone-only") return TrainableSet::kBackboneOnly;
  throw Error(ErrorCode::kConfig, "unknown trainable set '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
  if (stage != 1 && stage != 2) fail("stage must be 1 or 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (steps == 0) fail("steps must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (optimizer == OptimizerKind::kAdam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam eps must be positive");
  }
  if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
}

TrainResult train_stage1(const Weights& weights, const TaskSpec& task, const TrainConfig& cfg) {
  if (cfg.stage != 1) throw Error(ErrorCode::kConfig, "train_stage1 requires stage = 1");
  if (cfg.trainable != TrainableSet::kAdaptersAndBackbone) {
    throw Error(ErrorCode::kConfig, "stage 1 trains adapters+backbone");
  }
  return train_loop(weights, task, cfg, ExampleLayout::kCarriersOnly, true);
}

TrainResult train_stage2(const Weights& weights, const TaskSpec& task, const TrainConfig& cfg) {
  if (cfg.stage != 2) throw Error(ErrorCode::kConfig, "train_stage2 requires stage = 2");
  if (cfg.trainable != TrainableSet::kBackboneOnly) {
    throw Error(ErrorCode::kConfig, "stage 2 trains backbone_only");
  }
  return train_loop(weights, task, cfg, ExampleLayout::kFull, false);
}

void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out) {
  out << "step,loss,grad_norm,accuracy\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.6g\n", r.step, r.loss, r.grad_norm, r.accuracy);
    out << buf;
  }
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kFormat, "cannot open " + path.string() + " for writing");
  write_metrics_csv(rows, out);
}

RecallResult evaluate_recall(const Weights& weights, const ModelConfig& inference, const TaskSpec& task,
                             std::size_t streams, std::uint64_t seed) {
  task.validate(inference);
  if (!inference.same_architecture(weights.config)) {
    throw Error(ErrorCode::kConfig, "inference config does not match the weights' architecture");
  }
  auto model = std::make_shared<const Model>(Model(weights).with_config(inference));
  RecallResult result;
  for (std::size_t i = 0; i < streams; ++i) {
    const StreamSample sample = sample_stream(task, inference.tokens_per_frame, inference.model_dim,
                                              derive_seed(derive_seed(task.heldout_seed, seed), i));
    StreamSession session(model, task.system_tokens);
    for (const auto& f : materialize_frames(sample, weights)) session.ingest_frame(f);
    for (std::size_t k : sample.asked) {
      const GenerationOutput out = session.ask(task.question_for(k), 1);
      result.total += 1;
      if (out.tokens.front() == static_cast<std::int32_t>(sample.symbols[k])) result.correct += 1;
    }
  }
  return result;
}

GradCheckResult grad_check(const Weights64& weights, std::span<const TrainingExample> batch,
                           std::size_t coords_per_group, std::uint64_t seed, double floor) {
  Weights64 w = weights;
  Weights64 grad = w.zeros_like();
  batch_loss<double>(w, batch, &grad);

  // Only rows that a sequence touches can carry gradient in the lookup
  // tables; sample those so every check is informative.
  std::set<std::size_t> tokens, positions, symbols;
  for (const auto& ex : batch) {
    positions.insert(ex.positions.begin(), ex.positions.end());
    for (const auto& r : ex.rows) {
      if (r.kind == RowSource::Kind::kToken) tokens.insert(static_cast<std::size_t>(r.token));
      else symbols.insert(ex.frame_symbols[r.frame]);
    }
  }
  const std::map<std::string, const std::set<std::size_t>*> row_limits = {
      {"token_embedding", &tokens}, {"position_embedding", &positions}, {"frame_stub", &symbols}};

  Rng rng(seed);
  GradCheckResult out;
  auto params = tensors(w);
  auto grads = tensors(grad);
  constexpr double h = 1e-5;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& [name, m] = params[t];
    if (m->empty()) continue;
    out.groups.push_back(name);
    std::vector<std::size_t> rows;
    if (auto it = row_limits.find(name); it != row_limits.end()) {
      rows.assign(it->second->begin(), it->second->end());
    } else {
      for (std::size_t r = 0; r < m->rows(); ++r) rows.push_back(r);
    }
    for (std::size_t c = 0; c < coords_per_group; ++c) {
      const std::size_t r = rows[rng.below(rows.size())];
      const std::size_t col = static_cast<std::size_t>(rng.below(m->cols()));
      double& x = (*m)(r, col);
      const double saved = x;
      x = saved + h;
      const double lp = batch_loss<double>(w, batch).loss;
      x = saved - h;
      const double lm = batch_loss<double>(w, batch).loss;
      x = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = (*grads[t].second)(r, col);
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
      out.max_relative_error = std::max(out.max_relative_error, std::fabs(analytic - numeric) / denom);
      out.coordinates += 1;
    }
  }
  return out;
}

}  // namespace videoscan
