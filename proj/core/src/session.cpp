#include "videoscan/session.hpp"

#include <algorithm>
#include <chrono>

#include <nlohmann/json.hpp>

#include "videoscan/error.hpp"

namespace videoscan {

namespace {

using Clock = std::chrono::steady_clock;

double micros_since(Clock::time_point start) {
  return std::chrono::duration<double, std::micro>(Clock::now() - start).count();
}

std::int32_t argmax(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return static_cast<std::int32_t>(best);
}

}  // namespace

void TraceSink::write(const std::string& json_line) {
  if (out_) *out_ << json_line << '\n';
}

std::string IngestReport::to_json() const {
  nlohmann::ordered_json j;
  j["event"] = "ingest";
  j["frame"] = frame;
  j["latency_us"] = latency_us;
  j["bank_size"] = bank_size;
  j["kv_bytes"] = kv_bytes;
  j["evicted"] = eviction.evicted_frame ? nlohmann::ordered_json(*eviction.evicted_frame) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

std::string GenerationOutput::to_json() const {
  nlohmann::ordered_json j;
  j["event"] = "ask";
  j["prompt_len"] = prompt_len;
  j["new_tokens"] = tokens.size();
  j["prefill_us"] = prefill_us;
  j["decode_us_per_token"] = decode_us_per_token;
  return j.dump();
}

std::vector<std::size_t> even_sample(std::size_t n, std::size_t k) {
  std::vector<std::size_t> out;
  if (k == 0 || n == 0) return out;
  k = std::min(k, n);
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(((2 * i + 1) * n) / (2 * k));
  return out;
}

StreamSession::StreamSession(std::shared_ptr<const Model> model,
                             std::span<const std::int32_t> system_tokens)
    : model_(std::move(model)),
      cache_(model_->config().layers, model_->config().model_dim),
      bank_(model_->config().memory_capacity, model_->config().eviction_rule),
      system_tokens_(system_tokens.begin(), system_tokens.end()) {
  if (system_tokens_.empty()) return;
  const Matrix emb = embed_tokens(model_->weights(), system_tokens_);
  std::vector<std::size_t> positions(system_tokens_.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  run(emb, {NewSegment::Kind::kSystem, system_tokens_.size(), -1}, positions,
      {TokenTag::kSystem}, QueryPhase::kSystem);
  next_position_ = system_tokens_.size();
}

StreamSession open_session(const ModelConfig& config, const Weights& weights,
                           std::span<const std::int32_t> system_tokens) {
  if (!config.same_architecture(weights.config)) {
    throw Error(ErrorCode::kConfig, "session config does not match the weights' architecture");
  }
  auto model = std::make_shared<const Model>(Model(weights).with_config(config));
  return StreamSession(std::move(model), system_tokens);
}

void StreamSession::require_open() const {
  if (!open_) throw Error(ErrorCode::kState, "session is closed");
}

Matrix StreamSession::run(const Matrix& embeddings, const NewSegment& segment,
                          std::span<const std::size_t> positions, TagSet retain,
                          QueryPhase phase) {
  const MaskSpec mask = build_streaming_mask(cache_.slots(), segment);
  ForwardOptions opts;
  if (recorder_) {
    recorder_->set_phase(phase);
    opts.observer = recorder_.get();
  }
  return forward_step(*model_, cache_, embeddings, positions, mask, retain, opts);
}

CarrierRecord StreamSession::prefill_carrier(const FrameTokens& frame) {
  const ModelConfig& cfg = config();
  if (frame.embeddings.rows() != cfg.tokens_per_frame || frame.embeddings.cols() != cfg.model_dim) {
    throw Error(ErrorCode::kShape, "frame " + std::to_string(frame.index) + " is " +
                                       std::to_string(frame.embeddings.rows()) + "x" +
                                       std::to_string(frame.embeddings.cols()) + ", expected " +
                                       std::to_string(cfg.tokens_per_frame) + "x" +
                                       std::to_string(cfg.model_dim));
  }
  const std::size_t n = cfg.tokens_per_frame;
  const std::size_t first = next_position_;
  if (first + n >= cfg.max_positions) {
    throw Error(ErrorCode::kCapacity, "frame " + std::to_string(frame.index) + " needs positions up to " +
                                          std::to_string(first + n) + " but max_positions is " +
                                          std::to_string(cfg.max_positions));
  }
  const auto frame_id = static_cast<std::int64_t>(frame.index);

  CarrierRecord record;
  record.frame = frame.index;
  record.timestamp = frame.index;
  record.embedding = build_carrier_embedding(frame, cfg.carrier_mode);
  record.position = first + n;

  if (cfg.carrier_kv_mode == CarrierKvMode::kInherited) {
    Matrix input(n + 1, cfg.model_dim);
    std::ranges::copy(frame.embeddings.flat(), input.flat().begin());
    std::ranges::copy(record.embedding, input.row(n).begin());
    std::vector<std::size_t> positions(n + 1);
    for (std::size_t i = 0; i <= n; ++i) positions[i] = first + i;
    run(input, {NewSegment::Kind::kFrameAndCarrier, n, frame_id}, positions, {TokenTag::kCarrier},
        QueryPhase::kFrame);
  } else {
    Matrix input(1, cfg.model_dim);
    std::ranges::copy(record.embedding, input.row(0).begin());
    const std::size_t pos[1] = {record.position};
    run(input, {NewSegment::Kind::kCarrierOnly, 0, frame_id}, pos, {TokenTag::kCarrier},
        QueryPhase::kFrame);
  }
  next_position_ = first + n + 1;

  const std::size_t idx = cache_.size() - 1;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto k = cache_.keys(l).row(idx);
    const auto v = cache_.values(l).row(idx);
    record.keys.emplace_back(k.begin(), k.end());
    record.values.emplace_back(v.begin(), v.end());
  }
  return record;
}

EvictionReport StreamSession::admit(CarrierRecord record) {
  EvictionReport report = bank_.insert(std::move(record));
  if (report.evicted_frame) {
    const auto idx = cache_.find_carrier(static_cast<std::int64_t>(*report.evicted_frame));
    if (idx == KvCache::npos) throw Error(ErrorCode::kState, "evicted carrier missing from cache");
    cache_.erase(idx);
  }
  return report;
}

CarrierRecord StreamSession::prefill_frame(const FrameTokens& frame) {
  require_open();
  CarrierRecord record = prefill_carrier(frame);
  if (config().memory_enabled) admit(record);
  return record;
}

IngestReport StreamSession::ingest_frame(const FrameTokens& frame) {
  require_open();
  const auto start = Clock::now();
  FlopScope flops;
  IngestReport report;
  report.frame = frame.index;
  report.eviction.rule = bank_.rule();

  if (!config().memory_enabled) {
    if (!buffered_.empty() && frame.index <= buffered_.back().index) {
      throw Error(ErrorCode::kOrdering, "frames must arrive in increasing index order");
    }
    buffered_.push_back(frame);
  } else {
    if (!bank_.empty() && frame.index <= bank_.records().back().frame) {
      throw Error(ErrorCode::kOrdering, "frames must arrive in increasing index order");
    }
    report.eviction = admit(prefill_carrier(frame));
  }
  report.bank_size = bank_.size();
  report.kv_bytes = kv_footprint().bytes;
  report.flops = flops.elapsed();
  report.latency_us = micros_since(start);
  sink_.write(report.to_json());
  return report;
}

void StreamSession::flush_buffered_frames() {
  if (buffered_.empty()) return;
  const auto picks = even_sample(buffered_.size(), config().memory_capacity);
  for (std::size_t i : picks) prefill_carrier(buffered_[i]);
  buffered_.clear();
}

GenerationOutput StreamSession::ask(std::span<const std::int32_t> question, std::size_t max_new,
                                    const AskOptions& options) {
  require_open();
  if (!config().memory_enabled) flush_buffered_frames();

  GenerationOutput out;
  std::vector<std::int32_t> prompt = std::move(pending_);
  pending_.clear();
  prompt.insert(prompt.end(), question.begin(), question.end());
  out.prompt_len = prompt.size();
  if (prompt.empty()) {
    if (max_new == 0) {
      sink_.write(out.to_json());
      return out;
    }
    throw Error(ErrorCode::kState, "ask() needs question tokens to condition on");
  }
  const ModelConfig& cfg = config();
  if (next_position_ + prompt.size() + max_new > cfg.max_positions) {
    throw Error(ErrorCode::kCapacity, "question and answer would exceed max_positions");
  }

  const auto start = Clock::now();
  FlopScope flops;
  std::vector<std::size_t> positions(prompt.size());
  for (std::size_t i = 0; i < prompt.size(); ++i) positions[i] = next_position_ + i;
  Matrix logits = run(embed_tokens(model_->weights(), prompt),
                      {NewSegment::Kind::kText, prompt.size(), -1}, positions, {TokenTag::kText},
                      QueryPhase::kQuestion);
  if (recorder_ && max_new > 0) recorder_->mark_generating(next_position_ + prompt.size() - 1);
  next_position_ += prompt.size();
  out.prefill_flops = flops.elapsed();
  out.prefill_us = micros_since(start);

  const auto decode_start = Clock::now();
  std::vector<float> last(logits.row(logits.rows() - 1).begin(), logits.row(logits.rows() - 1).end());
  while (out.tokens.size() < max_new) {
    const std::int32_t tok = argmax(last);
    out.tokens.push_back(tok);
    if (options.keep_logits) out.step_logits.push_back(last);
    if (tok == cfg.eos_token || out.tokens.size() == max_new) {
      pending_.push_back(tok);
      break;
    }
    const std::int32_t ids[1] = {tok};
    const std::size_t pos[1] = {next_position_};
    Matrix step = run(embed_tokens(model_->weights(), std::span<const std::int32_t>(ids)),
                      {NewSegment::Kind::kText, 1, -1}, pos, {TokenTag::kText},
                      QueryPhase::kGenerated);
    next_position_ += 1;
    last.assign(step.row(0).begin(), step.row(0).end());
  }
  if (!out.tokens.empty()) {
    out.decode_us_per_token = micros_since(decode_start) / static_cast<double>(out.tokens.size());
  }
  sink_.write(out.to_json());
  return out;
}

KvFootprint StreamSession::kv_footprint() const {
  KvFootprint fp;
  const std::size_t per_entry = 2 * config().model_dim * sizeof(float) * config().layers;
  fp.entries_per_layer = cache_.size();
  fp.text_entries_per_layer = cache_.count(TokenTag::kText);
  fp.bytes = fp.entries_per_layer * per_entry;
  fp.bytes_excluding_text = (fp.entries_per_layer - fp.text_entries_per_layer) * per_entry;
  return fp;
}

void StreamSession::reset_dialogue() {
  cache_.erase_tag(TokenTag::kText);
  pending_.clear();
}

void StreamSession::enable_attention_capture(CaptureFilter filter) {
  recorder_ = std::make_unique<AttentionRecorder>(std::move(filter));
}

AttentionTrace StreamSession::take_attention_trace() {
  if (!recorder_) throw Error(ErrorCode::kState, "attention capture is not enabled on this session");
  return recorder_->take();
}

}  // namespace videoscan
