#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "partwhole/checkpoint.hpp"
#include "partwhole/error.hpp"
#include "partwhole/trainer.hpp"

using namespace partwhole;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig c = TrainConfig::desk();
  c.model.encoder.input_size = 32;
  c.model.encoder.feature_dim = 16;
  c.model.loc_hidden = 32;
  c.model.loc_bottleneck = 8;
  c.model.loc_out = 32;
  c.model.head_hidden = 32;
  c.sampler.global_size = 32;
  c.sampler.crop_size = 16;
  c.sampler.crops_per_anchor = 2;
  c.levels = 2;
  c.warmup_epochs = 1;
  c.joint_epochs = 1;
  c.batch_size = 4;
  c.temps.teacher_warmup_epochs = 2;
  return c;
}

Corpus tiny_corpus(int n = 6) {
  Corpus c;
  c.spec.image_size = 64;
  c.spec.seed = 11;
  c.images = generate_corpus(c.spec, n);
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("partwhole_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<float> flatten(const std::vector<ConstParamRef>& refs) {
  std::vector<float> out;
  for (const auto& r : refs) out.insert(out.end(), r.values.begin(), r.values.end());
  return out;
}

std::vector<float> student_params(const ModelState& s) {
  std::vector<ConstParamRef> refs;
  s.student.params("", refs);
  return flatten(refs);
}

std::vector<float> teacher_params(const ModelState& s) {
  std::vector<ConstParamRef> refs;
  s.teacher.params("", refs);
  return flatten(refs);
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Schedule, PhasesAndBudgets) {
  TrainConfig c = tiny_config();
  c.levels = 3;
  c.warmup_epochs = 2;
  c.joint_epochs = 3;
  const auto s = build_schedule(c, 10);
  ASSERT_EQ(s.size(), 6u);
  std::int64_t step = 0;
  int epoch = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s[i].phase.level, static_cast<int>(i / 2));
    EXPECT_EQ(s[i].phase.mode, i % 2 == 0 ? PhaseMode::warmup : PhaseMode::joint);
    EXPECT_EQ(s[i].steps_per_epoch, 3);  // ceil(10 / 4)
    EXPECT_EQ(s[i].first_step, step);
    EXPECT_EQ(s[i].first_epoch, epoch);
    step += s[i].steps;
    epoch += s[i].phase.epochs;
    if (s[i].phase.mode == PhaseMode::warmup) {
      EXPECT_EQ(s[i].weights.localizability, 1.0);
      EXPECT_EQ(s[i].weights.composability, 0.0);
      EXPECT_EQ(s[i].weights.decomposability, 0.0);
    }
  }
  EXPECT_EQ(step, 3 * (2 + 3) * 3);
}

TEST(Schedule, ExplicitPhasesValidated) {
  TrainConfig c = tiny_config();
  c.phases = {{1, PhaseMode::joint, 1, 4}, {0, PhaseMode::joint, 1, 4}};
  EXPECT_THROW(build_schedule(c, 4), PreconditionError);
  c.phases = {{0, PhaseMode::joint, 1, 4}, {0, PhaseMode::warmup, 1, 4}};
  EXPECT_THROW(build_schedule(c, 4), PreconditionError);
}

TEST(Pretrain, DeterministicAndLogsEmaSchedule) {
  const auto corpus = tiny_corpus();
  const auto cfg = tiny_config();
  const auto dir_a = scratch("det_a");
  const auto dir_b = scratch("det_b");
  const auto a = pretrain(corpus, cfg, {dir_a, {}, -1, true});
  const auto b = pretrain(corpus, cfg, {dir_b, {}, -1, true});
  EXPECT_EQ(student_params(a.state), student_params(b.state));
  EXPECT_EQ(lines(dir_a / "metrics.jsonl"), lines(dir_b / "metrics.jsonl"));
  const auto sched = build_schedule(cfg, 6);
  const std::int64_t total = sched.back().first_step + sched.back().steps;
  ASSERT_EQ(static_cast<std::int64_t>(a.log.size()), total);
  for (const auto& lb : a.log) EXPECT_EQ(lb.ema_lambda, ema_coefficient(lb.step, total));
  EXPECT_TRUE(fs::exists(a.final_checkpoint));
}

TEST(Pretrain, ResumeReproducesUninterruptedRun) {
  const auto corpus = tiny_corpus();
  const auto cfg = tiny_config();
  const auto dir_full = scratch("full");
  const auto dir_part = scratch("part");
  const auto full = pretrain(corpus, cfg, {dir_full, {}, -1, true});
  const auto part = pretrain(corpus, cfg, {dir_part, {}, 2, true});
  ASSERT_FALSE(part.checkpoints.empty());
  EXPECT_TRUE(part.final_checkpoint.empty());
  const auto resumed = pretrain(corpus, cfg, {dir_part, part.checkpoints.back(), -1, true});
  EXPECT_EQ(student_params(resumed.state), student_params(full.state));
  EXPECT_EQ(teacher_params(resumed.state), teacher_params(full.state));
  EXPECT_EQ(resumed.state.center, full.state.center);
  EXPECT_EQ(lines(dir_part / "metrics.jsonl"), lines(dir_full / "metrics.jsonl"));
}

TEST(Pretrain, ResumeRejectsDifferentConfig) {
  const auto corpus = tiny_corpus();
  auto cfg = tiny_config();
  const auto part = pretrain(corpus, cfg, {scratch("cfg"), {}, 1, true});
  cfg.lr = 5e-4;
  EXPECT_THROW(pretrain(corpus, cfg, {scratch("cfg"), part.checkpoints.back(), -1, true}), PreconditionError);
}

TEST(Pretrain, CorpusTooSmallForLevels) {
  auto cfg = tiny_config();
  cfg.levels = 6;
  EXPECT_THROW(check_corpus_compatible(tiny_corpus(2), cfg), PreconditionError);
}

TEST(Pretrain, TeacherFrozenWhenEmaPinned) {
  auto cfg = tiny_config();
  cfg.ema_start = cfg.ema_end = 1.0;
  const auto initial = ModelState::create(cfg.model, cfg.seed);
  const auto r = pretrain(tiny_corpus(), cfg, {scratch("frozen"), {}, -1, true});
  EXPECT_EQ(teacher_params(r.state), teacher_params(initial));
  EXPECT_NE(student_params(r.state), student_params(initial));
}

TEST(Checkpoint, RoundTrip) {
  const auto state = ModelState::create(tiny_config().model, 4);
  Archive a;
  pack_model(state, a);
  a.meta["schema"] = 1;
  const auto path = scratch("ckpt") / "model.pwc";
  write_archive(path, a);
  {
    std::ifstream is(path, std::ios::binary);
    char magic[8];
    is.read(magic, 8);
    EXPECT_EQ(std::string(magic, 8), "PWCKPT01");
  }
  const auto back = load_model(path);
  EXPECT_EQ(student_params(back), student_params(state));
  EXPECT_EQ(teacher_params(back), teacher_params(state));
  EXPECT_EQ(back.center, state.center);
  EXPECT_EQ(read_archive(path).meta["schema"], 1);
}

TEST(Checkpoint, TruncatedFileRejected) {
  const auto state = ModelState::create(tiny_config().model, 4);
  Archive a;
  pack_model(state, a);
  const auto path = scratch("trunc") / "model.pwc";
  write_archive(path, a);
  fs::resize_file(path, fs::file_size(path) - 16);
  EXPECT_ANY_THROW(read_archive(path));
}
