#include "videoscan/carrier_memory.hpp"

#include <nlohmann/json.hpp>

#include "videoscan/error.hpp"

namespace videoscan {

std::string EvictionReport::to_json() const {
  nlohmann::ordered_json j;
  j["frame_evicted"] = evicted_frame ? nlohmann::ordered_json(*evicted_frame) : nlohmann::ordered_json(nullptr);
  j["score"] = score;
  j["rule"] = std::string(to_string(rule));
  j["bank_size"] = bank_size;
  return j.dump();
}

std::vector<float> build_carrier_embedding(const FrameTokens& frame, CarrierMode mode) {
  const Matrix& e = frame.embeddings;
  if (e.rows() == 0 || e.cols() == 0) {
    throw Error(ErrorCode::kShape, "frame " + std::to_string(frame.index) + " has no tokens");
  }
  if (mode == CarrierMode::kLastToken) {
    const auto last = e.row(e.rows() - 1);
    return {last.begin(), last.end()};
  }
  // Accumulate in double so the mean stays within float rounding of the
  // exact column average regardless of N.
  std::vector<double> acc(e.cols(), 0.0);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    const auto r = e.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) acc[j] += r[j];
  }
  std::vector<float> out(e.cols());
  const double n = static_cast<double>(e.rows());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<float>(acc[j] / n);
  return out;
}

MemoryBank::MemoryBank(std::size_t capacity, EvictionRule rule) : capacity_(capacity), rule_(rule) {
  if (capacity == 0) throw Error(ErrorCode::kConfig, "memory capacity must be >= 1");
}

std::pair<std::size_t, float> MemoryBank::choose_victim(const std::vector<float>& incoming) const {
  if (records_.empty()) throw Error(ErrorCode::kState, "no eviction candidates in an empty bank");
  const auto sim = [](const std::vector<float>& a, const std::vector<float>& b) {
    return cosine_similarity<float>(a, b);
  };
  // Candidates are visited oldest first; strict '>' keeps the oldest on ties.
  std::size_t victim = 0;
  float best = 0.0f;
  bool have = false;
  const std::size_t n = records_.size();
  if (rule_ == EvictionRule::kAdjacentPairs) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& next = i + 1 < n ? records_[i + 1].embedding : incoming;
      const float score = sim(records_[i].embedding, next);
      if (!have || score > best) {
        best = score;
        victim = i;
        have = true;
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const float score = sim(records_[i].embedding, incoming);
      if (!have || score > best) {
        best = score;
        victim = i;
        have = true;
      }
    }
  }
  return {victim, best};
}

EvictionReport MemoryBank::insert(CarrierRecord incoming) {
  if (!records_.empty() && incoming.frame <= records_.back().frame) {
    throw Error(ErrorCode::kOrdering, "carrier for frame " + std::to_string(incoming.frame) +
                                          " arrives after frame " +
                                          std::to_string(records_.back().frame));
  }
  EvictionReport report;
  report.rule = rule_;
  if (records_.size() >= capacity_) {
    const auto [victim, score] = choose_victim(incoming.embedding);
    report.evicted_frame = records_[victim].frame;
    report.score = score;
    records_.erase(records_.begin() + static_cast<std::ptrdiff_t>(victim));
  }
  records_.push_back(std::move(incoming));
  report.bank_size = records_.size();
  if (report.evicted_frame) log_.push_back(report);
  return report;
}

std::vector<BankEntry> MemoryBank::snapshot() const {
  std::vector<BankEntry> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back({r.frame, r.position, r.embedding});
  return out;
}

}  // namespace videoscan
