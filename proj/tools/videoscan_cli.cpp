#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "videoscan/error.hpp"
#include "videoscan/frame_file.hpp"
#include "videoscan/instrumentation.hpp"
#include "videoscan/model.hpp"
#include "videoscan/random.hpp"
#include "videoscan/run_config.hpp"
#include "videoscan/session.hpp"
#include "videoscan/training.hpp"

namespace vs = videoscan;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string frames;
  std::string weights;
  std::optional<std::size_t> memory_size;
  std::string carrier_mode;
  std::string kv_mode;
  std::string eviction;
  bool no_memory = false;
  std::string out;
  std::size_t max_new = 8;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)");
  cmd->add_option("--seed", c.seed, "Seed for weights and synthetic data");
  cmd->add_option("--frames", c.frames, "Frame file (VSCN)");
  cmd->add_option("--weights", c.weights, "Checkpoint (VSWT)");
  cmd->add_option("--memory-size", c.memory_size, "Memory bank capacity M");
  cmd->add_option("--carrier-mode", c.carrier_mode, "mean | last")
      ->check(CLI::IsMember({"mean", "last"}));
  cmd->add_option("--kv-mode", c.kv_mode, "inherited | embedding-only")
      ->check(CLI::IsMember({"inherited", "embedding-only"}));
  cmd->add_option("--eviction", c.eviction, "adjacent | vs-incoming")
      ->check(CLI::IsMember({"adjacent", "vs-incoming"}));
  cmd->add_flag("--no-memory", c.no_memory, "Disable the memory bank");
  cmd->add_option("--out", c.out, "Output path");
  cmd->add_option("--max-new", c.max_new, "Tokens to generate per question");
}

// Config file, then command-line overrides.
vs::RunConfig resolve(const Common& c) {
  vs::RunConfig rc = c.config.empty() ? vs::RunConfig{} : vs::load_run_config(c.config);
  if (c.seed) rc.seed = *c.seed;
  if (c.memory_size) rc.model.memory_capacity = *c.memory_size;
  if (!c.carrier_mode.empty()) rc.model.carrier_mode = vs::parse_carrier_mode(c.carrier_mode);
  if (!c.kv_mode.empty()) rc.model.carrier_kv_mode = vs::parse_carrier_kv_mode(c.kv_mode);
  if (!c.eviction.empty()) rc.model.eviction_rule = vs::parse_eviction_rule(c.eviction);
  if (c.no_memory) rc.model.memory_enabled = false;
  if (!c.frames.empty()) rc.frames_path = c.frames;
  if (!c.weights.empty()) rc.weights_path = c.weights;
  rc.validate();
  return rc;
}

vs::Weights weights_for(const vs::RunConfig& rc) {
  if (rc.weights_path) return vs::load_weights(*rc.weights_path);
  return vs::init_model(rc.model, rc.seed);
}

std::vector<std::int32_t> parse_tokens(const std::string& text) {
  std::vector<std::int32_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(static_cast<std::int32_t>(std::stoi(item)));
    } catch (const std::exception&) {
      throw vs::Error(vs::ErrorCode::kConfig, "bad token id '" + item + "'");
    }
  }
  return out;
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw vs::Error(vs::ErrorCode::kFormat, "cannot open " + path + " for writing");
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<vs::FrameTokens> frames_for(const vs::RunConfig& rc, std::size_t synthetic_count) {
  if (rc.frames_path) return vs::load_frames(*rc.frames_path, &rc.model);
  return vs::random_frames(synthetic_count, rc.model.tokens_per_frame, rc.model.model_dim,
                           vs::derive_seed(rc.seed, 0x6672));
}

int cmd_simulate(const Common& c, std::size_t count, const std::string& question) {
  const vs::RunConfig rc = resolve(c);
  const vs::Weights w = weights_for(rc);
  Output out(c.out);
  vs::StreamSession session = vs::open_session(rc.model, w, rc.task.system_tokens);
  session.set_trace_sink(vs::TraceSink(out.stream()));
  for (const auto& f : frames_for(rc, count)) session.ingest_frame(f);
  const auto q = parse_tokens(question);
  if (!q.empty()) session.ask(q, c.max_new);
  return 0;
}

int cmd_ask(const Common& c, const std::string& question, std::size_t streams) {
  const vs::RunConfig rc = resolve(c);
  const vs::Weights w = weights_for(rc);
  Output out(c.out);
  if (streams > 0) {
    const vs::RecallResult r = vs::evaluate_recall(w, rc.model, rc.task, streams, rc.seed);
    char buf[160];
    std::snprintf(buf, sizeof buf, "{\"event\":\"recall\",\"streams\":%zu,\"correct\":%zu,\"total\":%zu,\"accuracy\":%.6f}",
                  streams, r.correct, r.total, r.accuracy());
    out.stream() << buf << '\n';
    return 0;
  }
  std::vector<std::int32_t> q = parse_tokens(question);
  std::vector<vs::FrameTokens> frames;
  std::optional<std::int32_t> expected;
  if (rc.frames_path) {
    frames = vs::load_frames(*rc.frames_path, &rc.model);
  } else if (w.frame_stub.rows() >= rc.task.alphabet) {
    const vs::SyntheticStream s = vs::gen_synthetic_stream(rc.task, w, vs::derive_seed(rc.task.heldout_seed, rc.seed));
    frames = s.frames;
    if (q.empty()) {
      q = s.question;
      expected = s.answer;
    }
  }
  if (q.empty()) throw vs::Error(vs::ErrorCode::kConfig, "no question given (use --question)");
  vs::StreamSession session = vs::open_session(rc.model, w, rc.task.system_tokens);
  for (const auto& f : frames) session.ingest_frame(f);
  const vs::GenerationOutput g = session.ask(q, c.max_new);
  std::ostringstream line;
  line << "{\"event\":\"answer\",\"tokens\":[";
  for (std::size_t i = 0; i < g.tokens.size(); ++i) line << (i ? "," : "") << g.tokens[i];
  line << "]";
  if (expected) line << ",\"expected\":" << *expected;
  line << ",\"prefill_us\":" << g.prefill_us << ",\"decode_us_per_token\":" << g.decode_us_per_token << "}";
  out.stream() << line.str() << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& stages, const std::string& metrics) {
  const vs::RunConfig rc = resolve(c);
  if (c.out.empty()) throw vs::Error(vs::ErrorCode::kConfig, "train needs --out for the checkpoint");
  vs::Weights w = rc.weights_path ? vs::load_weights(*rc.weights_path) : vs::init_model(rc.model, rc.seed);
  std::vector<vs::MetricRow> rows;
  const auto keep = [&](const vs::TrainResult& r, std::size_t offset) {
    for (auto m : r.metrics) {
      m.step += offset;
      rows.push_back(m);
    }
  };
  if (stages == "1" || stages == "both") {
    const vs::TrainResult r = vs::train_stage1(w, rc.task, rc.stage1);
    keep(r, 0);
    w = r.weights;
  }
  if (stages == "2" || stages == "both") {
    const vs::TrainResult r = vs::train_stage2(w, rc.task, rc.stage2);
    keep(r, rows.size());
    w = r.weights;
  }
  vs::save_weights(w, std::filesystem::path(c.out));
  if (!metrics.empty()) vs::write_metrics_csv(rows, std::filesystem::path(metrics));
  return 0;
}

int cmd_bench(const Common& c, std::size_t count, const std::vector<std::size_t>& points,
              std::size_t parallel) {
  const vs::RunConfig rc = resolve(c);
  vs::BenchSchedule schedule;
  schedule.frames = count;
  schedule.question_points = points;
  schedule.max_new = c.max_new;
  schedule.system = rc.task.system_tokens;
  std::optional<vs::Weights> w;
  if (rc.weights_path) w = vs::load_weights(*rc.weights_path);
  Output out(c.out);
  if (parallel <= 1) {
    std::ofstream trace;
    vs::TraceSink sink;
    if (rc.trace_path) {
      trace.open(*rc.trace_path);
      sink = vs::TraceSink(trace);
    }
    const vs::BenchReport r = vs::bench_serving(rc.model, schedule, rc.seed, sink, w ? &*w : nullptr);
    out.stream() << r.summary_json() << '\n';
    return 0;
  }
  std::vector<vs::BenchReport> reports(parallel);
  std::vector<std::string> errors(parallel);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < parallel; ++i) {
    threads.emplace_back([&, i] {
      try {
        reports[i] = vs::bench_serving(rc.model, schedule, rc.seed + i, {}, w ? &*w : nullptr);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) throw std::runtime_error(e);
  }
  out.stream() << "[\n";
  for (std::size_t i = 0; i < parallel; ++i) {
    out.stream() << reports[i].summary_json() << (i + 1 < parallel ? ",\n" : "\n");
  }
  out.stream() << "]\n";
  return 0;
}

int cmd_inspect_attn(const Common& c, std::size_t count, const std::string& question, bool per_head) {
  const vs::RunConfig rc = resolve(c);
  const vs::Weights w = weights_for(rc);
  std::vector<std::int32_t> q = parse_tokens(question);
  if (q.empty()) q = rc.task.question_for(0);
  vs::StreamSession session = vs::open_session(rc.model, w, rc.task.system_tokens);
  for (const auto& f : frames_for(rc, count)) session.ingest_frame(f);
  session.enable_attention_capture({});
  session.ask(q, std::max<std::size_t>(c.max_new, 1));
  const vs::AttentionTrace trace = session.take_attention_trace();
  Output out(c.out);
  auto profiles = vs::averaged_generated_attention(trace);
  if (per_head) {
    auto heads = vs::per_head_generated_attention(trace);
    profiles.insert(profiles.end(), heads.begin(), heads.end());
  }
  vs::write_attention_csv(profiles, out.stream());
  return 0;
}

int cmd_make_frames(const Common& c, std::size_t count) {
  const vs::RunConfig rc = resolve(c);
  if (c.out.empty()) throw vs::Error(vs::ErrorCode::kConfig, "make-frames needs --out");
  std::vector<vs::FrameTokens> frames;
  if (rc.weights_path) {
    // Task-shaped frames from a trained stub; the stream repeats as needed.
    const vs::Weights w = vs::load_weights(*rc.weights_path);
    std::size_t stream = 0;
    while (frames.size() < count) {
      const auto s = vs::gen_synthetic_stream(rc.task, w, vs::derive_seed(rc.seed, stream++));
      for (const auto& f : s.frames) {
        if (frames.size() == count) break;
        frames.push_back(f);
        frames.back().index = frames.size() - 1;
      }
    }
  } else {
    frames = vs::random_frames(count, rc.model.tokens_per_frame, rc.model.model_dim,
                               vs::derive_seed(rc.seed, 0x6672));
  }
  vs::save_frames(frames, std::filesystem::path(c.out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming video-LLM inference with semantic carriers"};
  app.require_subcommand(1);

  Common common;
  std::size_t count = 32;
  std::string question;
  std::size_t streams = 0;
  std::string stages = "both";
  std::string metrics;
  std::vector<std::size_t> points;
  std::size_t parallel = 1;
  bool per_head = false;

  auto* simulate = app.add_subcommand("simulate", "Ingest frames and emit a JSONL trace");
  add_common(simulate, common);
  simulate->add_option("--count", count, "Synthetic frame count when no --frames is given");
  simulate->add_option("--question", question, "Comma-separated token ids asked after the last frame");

  auto* ask = app.add_subcommand("ask", "Ingest frames, ask a question, print the answer");
  add_common(ask, common);
  ask->add_option("--question", question, "Comma-separated token ids");
  ask->add_option("--streams", streams, "Score recall over this many held-out task streams");

  auto* train = app.add_subcommand("train", "Run the two-stage recipe and write a checkpoint");
  add_common(train, common);
  train->add_option("--stage", stages, "1 | 2 | both")->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--metrics", metrics, "Metrics CSV path");

  auto* bench = app.add_subcommand("bench", "Serving benchmark; writes a summary JSON");
  add_common(bench, common);
  bench->add_option("--count", count, "Frames to ingest");
  bench->add_option("--ask-at", points, "Ask after this many frames (repeatable)");
  bench->add_option("--parallel", parallel, "Independent sessions, seeds seed..seed+N-1")
      ->check(CLI::PositiveNumber);

  auto* inspect = app.add_subcommand("inspect-attn", "Capture generated-token attention as CSV");
  add_common(inspect, common);
  inspect->add_option("--count", count, "Synthetic frame count when no --frames is given");
  inspect->add_option("--question", question, "Comma-separated token ids");
  inspect->add_flag("--per-head", per_head, "Also export one profile per head");

  auto* make_frames = app.add_subcommand("make-frames", "Write a synthetic frame file");
  add_common(make_frames, common);
  make_frames->add_option("--count", count, "Frames to generate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*simulate) return cmd_simulate(common, count, question);
    if (*ask) return cmd_ask(common, question, streams);
    if (*train) return cmd_train(common, stages, metrics);
    if (*bench) return cmd_bench(common, count, points, parallel);
    if (*inspect) return cmd_inspect_attn(common, count, question, per_head);
    if (*make_frames) return cmd_make_frames(common, count);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
