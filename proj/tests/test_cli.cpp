#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "partwhole/cli.hpp"

using namespace partwhole;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "partwhole");
  return cli::dispatch(args);
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("partwhole_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

json read(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

json tiny_config() {
  return {{"schema", 1},
          {"pretrain",
           {{"model",
             {{"encoder", {{"input_size", 32}, {"feature_dim", 16}}},
              {"loc_hidden", 32},
              {"loc_bottleneck", 8},
              {"loc_out", 32},
              {"head_hidden", 32}}},
            {"sampler", {{"crop_size", 16}, {"crops_per_anchor", 2}}},
            {"schedule", {{"levels", 2}, {"warmup_epochs", 1}, {"joint_epochs", 1}, {"batch_size", 4}}}}},
          {"eval",
           {{"localize", {{"patch_size", 16}}},
            {"compose", {{"trials", 4}}},
            {"interp", {{"trials", 4}, {"patch_size", 16}}},
            {"match", {{"window", 32}, {"stride", 16}, {"pairs", 2}}}}}};
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({"--help"}), cli::kExitOk);
  EXPECT_EQ(run({}), cli::kExitUsage);
  EXPECT_EQ(run({"bogus"}), cli::kExitUsage);
  EXPECT_EQ(run({"synthgen"}), cli::kExitUsage);
  EXPECT_EQ(run({"synthgen", "--out", "x", "--count", "many"}), cli::kExitUsage);
  EXPECT_EQ(run({"eval", "teleport", "--ckpt", "a", "--corpus", "b", "--out", "c"}), cli::kExitUsage);
}

TEST(Cli, UnknownConfigKeyIsAnError) {
  const auto dir = scratch("badkey");
  auto cfg = tiny_config();
  cfg["pretrain"]["optim"]["learning_rate"] = 0.1;
  write(dir / "cfg.json", cfg);
  testing::internal::CaptureStderr();
  EXPECT_EQ(run({"pretrain", "--config", (dir / "cfg.json").string(), "--print-config"}), cli::kExitError);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("optim.learning_rate"), std::string::npos);
}

TEST(Cli, PrintConfigResolvesOverrides) {
  const auto dir = scratch("print");
  write(dir / "cfg.json", tiny_config());
  testing::internal::CaptureStdout();
  ASSERT_EQ(run({"pretrain", "--config", (dir / "cfg.json").string(), "--seed", "9", "--print-config"}), 0);
  const auto j = json::parse(testing::internal::GetCapturedStdout());
  EXPECT_EQ(j["schema"], 1);
  EXPECT_EQ(j["pretrain"]["seed"], 9);
  EXPECT_EQ(j["pretrain"]["model"]["encoder"]["input_size"], 32);
  EXPECT_EQ(j["pretrain"]["optim"]["lr"], 1e-3);
}

TEST(Cli, MissingCorpusIsRuntimeError) {
  const auto dir = scratch("missing");
  testing::internal::CaptureStderr();
  EXPECT_EQ(run({"pretrain", "--corpus", (dir / "nope").string(), "--out", (dir / "run").string()}),
            cli::kExitError);
  testing::internal::GetCapturedStderr();
}

TEST(Cli, EndToEnd) {
  const auto dir = scratch("e2e");
  write(dir / "cfg.json", tiny_config());
  write(dir / "task.json", {{"schema", 1}, {"kind", "segmentation"}, {"corpus", "corpus"}, {"steps", 3}});
  const std::string cfg = (dir / "cfg.json").string();
  const std::string corpus = (dir / "corpus").string();
  const std::string run_dir = (dir / "run").string();
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  ASSERT_EQ(run({"synthgen", "--out", corpus, "--count", "12", "--seed", "0", "--size", "64", "--classes", "10"}), 0);
  ASSERT_EQ(run({"pretrain", "--corpus", corpus, "--config", cfg, "--out", run_dir, "--quiet"}), 0);
  const std::string ckpt = run_dir + "/final.pwc";
  for (const char* a : {"localize", "compose", "interp", "match"})
    ASSERT_EQ(run({"eval", a, "--ckpt", ckpt, "--corpus", corpus, "--config", cfg, "--out", run_dir + "/eval"}), 0)
        << a;
  ASSERT_EQ(run({"transfer", "--ckpt", ckpt, "--task", (dir / "task.json").string(), "--shots", "4", "--seeds",
                 "0,1", "--out", run_dir + "/transfer"}),
            0);
  ASSERT_EQ(run({"report", "--run", run_dir}), 0);
  testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();

  for (const char* f : {"localize.json", "compose.json", "interp.json", "match.json"})
    EXPECT_EQ(read(fs::path(run_dir) / "eval" / f)["schema"], 1) << f;
  EXPECT_EQ(read(fs::path(run_dir) / "summary.json")["schema"], 1);
  EXPECT_EQ(read(fs::path(run_dir) / "run.json")["status"], "ok");
  const auto transfer = read(fs::path(run_dir) / "transfer" / "summary.json");
  EXPECT_EQ(transfer["schema"], 1);
  std::ifstream md(fs::path(run_dir) / "report.md");
  std::stringstream ss;
  ss << md.rdbuf();
  EXPECT_NE(ss.str().find(".svg"), std::string::npos);
  EXPECT_NE(ss.str().find("localize"), std::string::npos);
  for (const auto& e : fs::recursive_directory_iterator(run_dir))
    if (e.path().extension() == ".svg") EXPECT_GT(fs::file_size(e.path()), 100u);
}
