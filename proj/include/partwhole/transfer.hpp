#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "partwhole/model.hpp"
#include "partwhole/stats.hpp"
#include "partwhole/synthgen.hpp"

namespace partwhole {

enum class TaskKind { classification, segmentation };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// Labeled downstream task over a corpus. Train and test hold corpus indices;
/// no subject appears in both.
struct TransferTask {
  TaskKind kind = TaskKind::segmentation;
  std::vector<int> train;
  std::vector<int> test;
  int shots = 0;  // 0 means the whole training split

  std::string metric() const { return kind == TaskKind::classification ? "auc" : "dice"; }
  void validate(const std::vector<LabeledImage>& images) const;
};

struct SyntheticTasks {
  TransferTask classification;
  TransferTask segmentation;
};

/// Subject-disjoint 80/20 split shared by both tasks. Classification labels
/// are the nodule variant; segmentation targets are the organ masks.
SyntheticTasks make_synthetic_tasks(const std::vector<LabeledImage>& images, std::uint64_t split_seed = 0,
                                    double train_fraction = 0.8);

struct FinetuneConfig {
  int steps = 150;
  int batch_size = 6;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double clip_norm = 3.0;

  void validate() const;
};

/// Expanding path mirroring the encoder stages: one 2x2 transposed
/// convolution per stage, skip connections added from the matching encoder
/// stage, then a 3x3 convolution to one logit channel.
struct Decoder {
  std::vector<ConvTranspose2x2> ups;
  Conv2d head;

  static Decoder create(const EncoderConfig& encoder, Rng& rng);
  void params(const std::string& prefix, std::vector<ParamRef>& out);
};

struct SegmentationNet {
  Encoder encoder;
  Decoder decoder;

  void params(std::vector<ParamRef>& out);
};

/// Per-pixel foreground logits at encoder input resolution.
FeatureMap segment(const SegmentationNet& net, const Image& input);

struct FinetuneResult {
  int seed = 0;
  double metric = 0.0;
  std::vector<double> loss_curve;

  nlohmann::json to_json() const;
};

/// End-to-end fine-tuning of `encoder` on a seed-dependent `shots` subset of
/// the training split; evaluates the task metric on the test split.
FinetuneResult finetune(const Encoder& encoder, const std::vector<LabeledImage>& images, const TransferTask& task,
                        const FinetuneConfig& config, int seed);

/// Images and masks resampled to the encoder input size; masks thresholded at
/// 0.5.
Image to_input(const Image& img, int size);
Image to_mask(const Image& mask, int size);

}  // namespace partwhole
