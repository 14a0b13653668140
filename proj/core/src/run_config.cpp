#include "videoscan/run_config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "videoscan/error.hpp"

namespace videoscan {

namespace {

using Json = nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::kConfig, where + ": " + what);
}

void check_keys(const Json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) bad(where, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) bad(where, "unknown key '" + key + "'");
  }
}

template <typename T>
void read(const Json& obj, const std::string& where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const Json& v = obj.at(key);
  const std::string at = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) bad(at, "expected a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      bad(at, "expected a non-negative integer");
    }
    out = static_cast<T>(v.get<std::uint64_t>());
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) bad(at, "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) bad(at, "out of range");
    out = static_cast<T>(x);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) bad(at, "expected a number");
    out = static_cast<T>(v.get<double>());
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) bad(at, "expected a string");
    out = v.get<std::string>();
  }
}

template <typename Parse, typename E>
void read_enum(const Json& obj, const std::string& where, const char* key, Parse parse, E& out) {
  std::string text;
  read(obj, where, key, text);
  if (!text.empty()) out = parse(text);
}

void read_model(const Json& j, ModelConfig& m) {
  const std::string w = "model";
  check_keys(j, w, {"layers", "heads", "model_dim", "ff_dim", "vocab_size", "max_positions",
                    "tokens_per_frame", "memory_capacity", "lora_rank", "carrier_mode",
                    "carrier_kv_mode", "eviction_rule", "memory_enabled", "eos_token", "norm_eps"});
  read(j, w, "layers", m.layers);
  read(j, w, "heads", m.heads);
  read(j, w, "model_dim", m.model_dim);
  read(j, w, "ff_dim", m.ff_dim);
  read(j, w, "vocab_size", m.vocab_size);
  read(j, w, "max_positions", m.max_positions);
  read(j, w, "tokens_per_frame", m.tokens_per_frame);
  read(j, w, "memory_capacity", m.memory_capacity);
  read(j, w, "lora_rank", m.lora_rank);
  read_enum(j, w, "carrier_mode", parse_carrier_mode, m.carrier_mode);
  read_enum(j, w, "carrier_kv_mode", parse_carrier_kv_mode, m.carrier_kv_mode);
  read_enum(j, w, "eviction_rule", parse_eviction_rule, m.eviction_rule);
  read(j, w, "memory_enabled", m.memory_enabled);
  read(j, w, "eos_token", m.eos_token);
  read(j, w, "norm_eps", m.norm_eps);
}

void read_task(const Json& j, TaskSpec& t) {
  const std::string w = "task";
  check_keys(j, w, {"frames_per_stream", "alphabet", "index_token_base", "question_token",
                    "system_tokens", "noise_scale", "questions_per_stream", "train_seed",
                    "heldout_seed"});
  read(j, w, "frames_per_stream", t.frames_per_stream);
  read(j, w, "alphabet", t.alphabet);
  read(j, w, "index_token_base", t.index_token_base);
  read(j, w, "question_token", t.question_token);
  if (j.contains("system_tokens")) {
    const Json& s = j.at("system_tokens");
    if (!s.is_array()) bad("task.system_tokens", "expected an array of integers");
    t.system_tokens.clear();
    for (const auto& v : s) {
      if (!v.is_number_integer()) bad("task.system_tokens", "expected an array of integers");
      t.system_tokens.push_back(v.get<std::int32_t>());
    }
  }
  read(j, w, "noise_scale", t.noise_scale);
  read(j, w, "questions_per_stream", t.questions_per_stream);
  read(j, w, "train_seed", t.train_seed);
  read(j, w, "heldout_seed", t.heldout_seed);
}

void read_train(const Json& j, const std::string& w, TrainConfig& c) {
  check_keys(j, w, {"stage", "learning_rate", "steps", "batch_size", "optimizer", "beta1", "beta2",
                    "adam_eps", "trainable", "seed", "clip_norm"});
  read(j, w, "stage", c.stage);
  read(j, w, "learning_rate", c.learning_rate);
  read(j, w, "steps", c.steps);
  read(j, w, "batch_size", c.batch_size);
  read_enum(j, w, "optimizer", parse_optimizer, c.optimizer);
  read(j, w, "beta1", c.beta1);
  read(j, w, "beta2", c.beta2);
  read(j, w, "adam_eps", c.adam_eps);
  read_enum(j, w, "trainable", parse_trainable_set, c.trainable);
  read(j, w, "seed", c.seed);
  read(j, w, "clip_norm", c.clip_norm);
}

}  // namespace

RunConfig::RunConfig() {
  stage2.stage = 2;
  stage2.trainable = TrainableSet::kBackboneOnly;
}

void RunConfig::validate() const {
  model.validate();
  task.validate(model);
  stage1.validate();
  stage2.validate();
  if (stage1.stage != 1) throw Error(ErrorCode::kConfig, "stage1.stage must be 1");
  if (stage2.stage != 2) throw Error(ErrorCode::kConfig, "stage2.stage must be 2");
  if (stage2.trainable != TrainableSet::kBackboneOnly) {
    throw Error(ErrorCode::kConfig, "stage2.trainable must be backbone_only");
  }
}

RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig rc;
  check_keys(j, "config", {"seed", "model", "task", "stage1", "stage2", "paths", "eval_streams"});
  read(j, "config", "seed", rc.seed);
  read(j, "config", "eval_streams", rc.eval_streams);
  if (j.contains("model")) read_model(j.at("model"), rc.model);
  if (j.contains("task")) read_task(j.at("task"), rc.task);
  if (j.contains("stage1")) read_train(j.at("stage1"), "stage1", rc.stage1);
  if (j.contains("stage2")) read_train(j.at("stage2"), "stage2", rc.stage2);
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    check_keys(p, "paths", {"weights", "frames", "trace"});
    std::string s;
    const auto path = [&](const char* key, std::optional<std::filesystem::path>& out) {
      s.clear();
      read(p, "paths", key, s);
      if (!s.empty()) out = s;
    };
    path("weights", rc.weights_path);
    path("frames", rc.frames_path);
    path("trace", rc.trace_path);
  }
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace videoscan
