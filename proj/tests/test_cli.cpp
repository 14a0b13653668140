#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(VIDEOSCAN_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("videoscan_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
    std::ofstream(dir_ / "c.json") << R"({
      "model": {"layers": 2, "heads": 2, "model_dim": 16, "ff_dim": 32, "vocab_size": 40,
                "tokens_per_frame": 2, "memory_capacity": 8, "max_positions": 512},
      "task": {"frames_per_stream": 4, "alphabet": 8},
      "stage1": {"steps": 150, "batch_size": 4},
      "stage2": {"steps": 30, "batch_size": 4}
    })";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const char* name) const { return (dir_ / name).string(); }
  std::string config() const { return "--config " + path("c.json"); }

  fs::path dir_;
};

nlohmann::json without_timing(nlohmann::json j) {
  for (const char* key : {"ingest_us", "ask_us", "serving_fps_proxy"}) j.erase(key);
  return j;
}

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("simulate --bogus-flag").code, 2);
  EXPECT_EQ(run("simulate --carrier-mode median").code, 2);
  const auto r = run("train --stage 3");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("usage error"), std::string::npos);
}

TEST_F(Cli, RuntimeErrorsExitOneWithOneLine) {
  const auto r = run("simulate --frames " + path("missing.bin"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.out.rfind("error: ", 0), 0u) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1);
  EXPECT_EQ(run("train " + config()).code, 1);  // no --out
}

TEST_F(Cli, SimulateNoMemoryKeepsBankEmpty) {
  const auto r = run("simulate " + config() + " --count 12 --no-memory --question 32,16 --out " + path("t.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(slurp(path("t.jsonl")));
  std::string line;
  std::size_t ingests = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("event") == "ingest") {
      ++ingests;
      EXPECT_EQ(j.at("bank_size"), 0);
    }
  }
  EXPECT_EQ(ingests, 12u);
}

TEST_F(Cli, SimulateWithMemoryFillsBank) {
  const auto r = run("simulate " + config() + " --count 12 --memory-size 5 --eviction vs-incoming");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  std::string line;
  std::size_t last = 0, evictions = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    last = j.at("bank_size");
    evictions += !j.at("evicted").is_null();
  }
  EXPECT_EQ(last, 5u);
  EXPECT_EQ(evictions, 7u);
}

TEST_F(Cli, BenchIsDeterministicApartFromTiming) {
  const std::string args = "bench " + config() + " --seed 7 --count 20 --ask-at 10 --ask-at 20 --out ";
  ASSERT_EQ(run(args + path("a.json")).code, 0);
  ASSERT_EQ(run(args + path("b.json")).code, 0);
  const auto a = nlohmann::json::parse(slurp(path("a.json")));
  const auto b = nlohmann::json::parse(slurp(path("b.json")));
  EXPECT_EQ(without_timing(a), without_timing(b));
  EXPECT_EQ(a.at("frames"), 20);
  EXPECT_EQ(a.at("m"), 8);
}

TEST_F(Cli, BenchParallelUsesDerivedSeeds) {
  const auto r = run("bench " + config() + " --seed 3 --count 5 --parallel 2");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j.size(), 2u);
  const auto single = nlohmann::json::parse(run("bench " + config() + " --seed 4 --count 5").out);
  EXPECT_EQ(without_timing(j[1]), without_timing(single));
}

TEST_F(Cli, MakeFramesThenSimulateFromFile) {
  ASSERT_EQ(run("make-frames " + config() + " --count 6 --out " + path("f.bin")).code, 0);
  EXPECT_EQ(fs::file_size(path("f.bin")), 20u + 6 * 2 * 16 * 4);
  const auto r = run("simulate " + config() + " --frames " + path("f.bin"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 6);
}

TEST_F(Cli, InspectAttnWritesCsv) {
  const auto r = run("inspect-attn " + config() + " --count 4 --per-head");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.rfind("layer,head_or_mean,key_pos,segment,score\n", 0), 0u);
  EXPECT_NE(r.out.find(",mean,"), std::string::npos);
  EXPECT_NE(r.out.find(",carrier,"), std::string::npos);
}

TEST_F(Cli, TrainThenAskBeatsChance) {
  const auto t = run("train " + config() + " --out " + path("w.bin") + " --metrics " + path("m.csv"));
  ASSERT_EQ(t.code, 0) << t.out;
  const std::string metrics = slurp(path("m.csv"));
  EXPECT_EQ(metrics.rfind("step,loss,grad_norm,accuracy\n", 0), 0u);
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 150 + 30);

  const auto a = run("ask " + config() + " --weights " + path("w.bin") + " --streams 200");
  ASSERT_EQ(a.code, 0) << a.out;
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j.at("total"), 200);
  // Five times the 1/8 uniform guess.
  EXPECT_GE(j.at("accuracy").get<double>(), 5.0 / 8.0);

  const auto single = run("ask " + config() + " --weights " + path("w.bin") + " --max-new 1");
  ASSERT_EQ(single.code, 0) << single.out;
  const auto s = nlohmann::json::parse(single.out);
  EXPECT_EQ(s.at("tokens").size(), 1u);
  EXPECT_TRUE(s.contains("expected"));
}
