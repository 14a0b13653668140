#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "videoscan/config.hpp"
#include "videoscan/training.hpp"

namespace videoscan {

// Everything a CLI run needs, loaded from one JSON file:
//   {"seed", "model": {...}, "task": {...}, "stage1": {...}, "stage2": {...},
//    "paths": {"weights", "frames", "trace"}, "eval_streams"}
// Every section is optional; missing fields keep their defaults. Unknown
// keys and ill-typed values are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  TaskSpec task;
  TrainConfig stage1;
  TrainConfig stage2;
  std::optional<std::filesystem::path> weights_path;
  std::optional<std::filesystem::path> frames_path;
  std::optional<std::filesystem::path> trace_path;
  std::size_t eval_streams = 200;

  RunConfig();

  // Runs the same validators as the in-memory types. Throws Error.
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace videoscan
