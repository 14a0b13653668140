#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "videoscan/carrier_memory.hpp"
#include "videoscan/masking.hpp"
#include "videoscan/model.hpp"
#include "videoscan/transformer.hpp"

namespace videoscan {

// Symbol-recall task. Symbols 0..alphabet-1 double as their answer token
// ids; the question for frame k is [question_token, index_token_base + k].
struct TaskSpec {
  std::size_t frames_per_stream = 8;
  std::size_t alphabet = 16;
  std::int32_t index_token_base = 16;
  std::int32_t question_token = 32;
  std::vector<std::int32_t> system_tokens = {33, 34, 35, 36};
  double noise_scale = 0.1;
  // 1 for the recall task, frames_per_stream for the dense-recall variant.
  std::size_t questions_per_stream = 1;
  std::uint64_t train_seed = 1;
  std::uint64_t heldout_seed = 0x4e1d0u;

  // Throws Error(kSpec) naming the first violated constraint.
  void validate(const ModelConfig& config) const;

  std::vector<std::int32_t> question_for(std::size_t frame) const {
    return {question_token, index_token_base + static_cast<std::int32_t>(frame)};
  }
};

// The data-only part of a stream, independent of the stub weights.
struct StreamSample {
  std::vector<std::size_t> symbols;  // one per frame
  std::vector<Matrix> noise;         // one N x d block per frame, already scaled
  std::vector<std::size_t> asked;    // frames queried, in question order
};

StreamSample sample_stream(const TaskSpec& spec, std::size_t tokens_per_frame, std::size_t dim,
                           std::uint64_t seed);

struct SyntheticStream {
  std::vector<FrameTokens> frames;
  std::vector<std::int32_t> question;  // first question
  std::int32_t answer = 0;             // first answer
  StreamSample sample;
};

// Frame k's tokens are stub[s_k] + noise. Requires a frame stub with at
// least `alphabet` rows.
SyntheticStream gen_synthetic_stream(const TaskSpec& spec, const Weights& weights,
                                     std::uint64_t seed);

std::vector<FrameTokens> materialize_frames(const StreamSample& sample, const Weights& weights);

// Per-row provenance of a training input, so gradients reach the token
// table and the frame stub.
struct RowSource {
  enum class Kind : std::uint8_t { kToken, kFrameToken, kCarrier };
  Kind kind = Kind::kToken;
  std::int32_t token = 0;
  std::size_t frame = 0;
  std::size_t row = 0;
};

struct TrainingExample {
  std::vector<RowSource> rows;
  std::vector<std::size_t> positions;
  MaskSpec mask;
  std::vector<std::size_t> frame_symbols;
  std::vector<Matrix> frame_noise;
  CarrierMode carrier_mode = CarrierMode::kMean;
  // (row, target token): cross-entropy is taken only here.
  std::vector<std::pair<std::size_t, std::int32_t>> targets;
};

enum class ExampleLayout {
  kCarriersOnly,  // [system][c_1 .. c_F][text], causal
  kFull,          // [system][f_1 c_1 .. f_F c_F][text], semantic mask
};

// Positions follow the streaming engine: frame k occupies N + 1 slots
// whether or not its tokens are present. Carriers listed in
// `blocked_carriers` are hidden from every other row.
TrainingExample build_example(const TaskSpec& spec, const ModelConfig& config,
                              const StreamSample& sample, ExampleLayout layout,
                              std::span<const std::size_t> blocked_carriers = {});

template <typename T>
BasicMatrix<T> assemble_inputs(const BasicWeights<T>& weights, const TrainingExample& example);

template <typename T>
struct LossStats {
  T loss = T(0);  // summed cross-entropy over targets
  std::size_t correct = 0;
  std::size_t targets = 0;
};

// Cross-entropy of one example. When grad is non-null, adds
// scale * d(loss)/d(param) into it; d_inputs receives d(loss)/d(input row)
// (unscaled).
template <typename T>
LossStats<T> example_loss(const BasicModel<T>& model, const TrainingExample& example,
                          BasicWeights<T>* grad = nullptr, T scale = T(1),
                          BasicMatrix<T>* d_inputs = nullptr);

// Mean cross-entropy over every target in the batch.
template <typename T>
LossStats<T> batch_loss(const BasicWeights<T>& weights, std::span<const TrainingExample> batch,
                        BasicWeights<T>* grad = nullptr);

enum class OptimizerKind { kSgd, kAdam };
enum class TrainableSet { kAdaptersAndBackbone, kBackboneOnly };

std::string_view to_string(OptimizerKind kind);
std::string_view to_string(TrainableSet set);
OptimizerKind parse_optimizer(std::string_view text);
TrainableSet parse_trainable_set(std::string_view text);

struct TrainConfig {
  int stage = 1;
  double learning_rate = 3e-3;
  std::size_t steps = 400;
  std::size_t batch_size = 8;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  TrainableSet trainable = TrainableSet::kAdaptersAndBackbone;
  std::uint64_t seed = 1;
  // Global gradient-norm clip; 0 disables it.
  double clip_norm = 1.0;

  // Throws Error(kConfig). learning_rate may be 0 (a no-op run).
  void validate() const;
};

struct MetricRow {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  Weights weights;
  std::vector<MetricRow> metrics;
};

// Carrier-only sequences; trains the frame stub and every backbone tensor.
TrainResult train_stage1(const Weights& weights, const TaskSpec& task, const TrainConfig& cfg);

// Full frame + carrier sequences under the semantic mask; the stub is frozen.
TrainResult train_stage2(const Weights& weights, const TaskSpec& task, const TrainConfig& cfg);

void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out);
void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

struct RecallResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

// Streams held-out samples through a StreamSession configured by
// `inference` (architecture must match the weights) and scores the first
// generated token of every question.
RecallResult evaluate_recall(const Weights& weights, const ModelConfig& inference,
                             const TaskSpec& task, std::size_t streams, std::uint64_t seed);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<std::string> groups;  // tensor names that were sampled
};

// Backprop vs central differences (step 1e-5) in 64-bit on `coords_per_group`
// sampled entries of every tensor. Relative error is
// |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const Weights64& weights, std::span<const TrainingExample> batch,
                           std::size_t coords_per_group, std::uint64_t seed,
                           double floor = 1e-6);

}  // namespace videoscan
