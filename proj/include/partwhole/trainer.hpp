#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "partwhole/data.hpp"
#include "partwhole/losses.hpp"
#include "partwhole/model.hpp"
#include "partwhole/optim.hpp"
#include "partwhole/synthgen.hpp"

namespace partwhole {

enum class PhaseMode { warmup, joint };

std::string to_string(PhaseMode mode);
PhaseMode phase_mode_from_string(const std::string& s);

/// One stage of the coarse-to-fine curriculum.
struct CurriculumPhase {
  int level = 0;
  PhaseMode mode = PhaseMode::joint;
  int epochs = 1;
  int batch_size = 8;

  friend bool operator==(const CurriculumPhase&, const CurriculumPhase&) = default;
};

struct TrainConfig {
  ModelConfig model;
  SamplerConfig sampler;
  AugmentConfig augment;

  // Explicit phases override the (levels, warmup_epochs, joint_epochs) recipe.
  std::vector<CurriculumPhase> phases;
  int levels = 3;
  int warmup_epochs = 5;
  int joint_epochs = 10;
  int batch_size = 8;

  double lr = 1e-3;
  double min_lr = 1e-5;
  double lr_warmup_fraction = 0.1;
  double weight_decay = 0.04;
  double clip_norm = 3.0;

  double ema_start = 0.996;
  double ema_end = 1.0;
  bool ema_enabled = true;

  LossWeights weights;
  TemperaturePair temps;
  double center_momentum = 0.9;
  bool centering = true;

  std::uint64_t seed = 0;
  int checkpoint_every_epochs = 0;  // 0: only at phase ends

  void validate() const;
  /// CPU-sized defaults.
  static TrainConfig desk();
  /// ResNet-50-sized head widths, crop sizes and epoch budgets.
  static TrainConfig full_scale();
};

struct ScheduledPhase {
  CurriculumPhase phase;
  LossWeights weights;
  int steps_per_epoch = 0;
  std::int64_t first_step = 0;
  std::int64_t steps = 0;
  int first_epoch = 0;  // global epoch index at phase start
};

/// Ordered phases with step budgets for a corpus of `corpus_size` images.
std::vector<ScheduledPhase> build_schedule(const TrainConfig& config, int corpus_size);

struct LossBreakdown {
  std::int64_t step = 0;
  int phase = 0;
  PhaseMode mode = PhaseMode::joint;
  int level = 0;
  double l_loc = 0.0;
  double l_comp = 0.0;
  double l_decomp = 0.0;
  double total = 0.0;
  LossWeights weights;
  double tau_t = 0.0;
  double ema_lambda = 0.0;
  double lr = 0.0;
  double teacher_entropy = 0.0;  // mean entropy of the teacher distribution
  double grad_norm = 0.0;

  nlohmann::json to_json() const;
};

/// Per-step schedule values supplied by the caller.
struct StepSchedule {
  double tau_t = 0.04;
  double lr = 1e-3;
  double ema_lambda = 0.996;
  int phase_index = 0;
};

/// One optimization transaction on a batch of anchors at phase.level; see the
/// README for the data flow. Throws NumericError on a non-finite loss.
LossBreakdown train_step(ModelState& state, AdamW& optimizer, const std::vector<AnchorSample>& batch,
                         const ScheduledPhase& phase, const TrainConfig& config, const StepSchedule& schedule);

struct PretrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Stop after this many epochs in total (for tests); negative runs the
  /// full schedule.
  int stop_after_epochs = -1;
  bool quiet = true;
};

struct PretrainResult {
  ModelState state;
  std::vector<LossBreakdown> log;  // steps run by this call
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;
  double min_teacher_entropy = 0.0;
  double seconds = 0.0;
};

/// Runs the full schedule, writing metrics.jsonl and checkpoints under
/// out_dir. Resuming from a checkpoint reproduces the uninterrupted run.
PretrainResult pretrain(const Corpus& corpus, const TrainConfig& config, const PretrainOptions& options);

/// Errors when corpus images cannot provide anchors for every scheduled level.
void check_corpus_compatible(const Corpus& corpus, const TrainConfig& config);

}  // namespace partwhole
