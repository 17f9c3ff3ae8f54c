#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "partwhole/image.hpp"
#include "partwhole/nn.hpp"

namespace partwhole {

enum class EncoderKind { small_conv, pluggable };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::small_conv;
  int feature_dim = 128;
  int input_size = 224;
  int in_channels = 1;
  // Only read for kind == pluggable; small_conv derives {d/8, d/4, d/2, d}
  // with one stride-2 convolution per stage.
  std::vector<int> stage_widths;
  int convs_per_stage = 1;
  bool batch_norm = false;  // conv -> batch norm -> ReLU when set

  void validate() const;
  std::vector<int> widths() const;
  int stages() const { return static_cast<int>(widths().size()); }
};

/// Shapes of the encoder and the four projection heads.
struct ModelConfig {
  EncoderConfig encoder;
  int loc_hidden = 256;
  int loc_bottleneck = 64;
  int loc_out = 1024;      // K
  int head_hidden = 256;   // composability / decomposability hidden width
  int n_parts = 4;

  void validate() const;
  /// Full-size head widths (hidden 2048, bottleneck 256, K = 65536).
  static ModelConfig full_scale();
};

/// Stride-2 convolution stages (conv, optional batch norm, ReLU), then global
/// average pooling.
struct Encoder {
  EncoderConfig config;
  std::vector<std::vector<Conv2d>> stages;
  std::vector<std::vector<BatchNorm2d>> norms;  // parallel to stages; empty without batch norm

  static Encoder create(const EncoderConfig& config, Rng& rng);
  int layers() const;
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
  void buffers(const std::string& prefix, std::vector<ParamRef>& out);
  void buffers(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct EncoderLayerTape {
  std::vector<ConvTape> convs;      // per sample
  BatchNormTape norm;
  std::vector<FeatureMap> outputs;  // post-ReLU, per sample
};

struct EncoderTape {
  std::vector<EncoderLayerTape> layers;
  std::vector<int> stage_end;  // index into layers of each stage's output
};

/// Inference: feature vector of length feature_dim using running
/// normalization statistics. Accepts any square view whose side is at least
/// 2^stages; the channel count must match the config.
std::vector<float> encode(const Encoder& encoder, const Image& view);

/// Inference: output map of every stage (post-ReLU), deepest last.
std::vector<FeatureMap> encode_stages(const Encoder& encoder, const Image& view);

/// Training-mode forward of equally sized views: batch statistics normalize
/// the group, and the running statistics absorb them when `update_running`.
std::vector<std::vector<float>> encode_batch(Encoder& encoder, const std::vector<Image>& views,
                                             EncoderTape* tape, bool update_running = true);

/// Backpropagates per-sample dL/dfeature (an empty entry means zero) plus
/// optional per-stage, per-sample output gradients ([stage][sample], empty
/// maps skipped) into `grad`.
void encoder_backward(const Encoder& encoder, const EncoderTape& tape,
                      const std::vector<std::vector<float>>& dfeatures, Encoder& grad,
                      const std::vector<std::vector<FeatureMap>>* stage_grads = nullptr);

/// Localizability projection: MLP to a bottleneck, L2 normalization, then a
/// bias-free layer whose rows are normalized at use. Logits are therefore
/// cosines in [-1, 1] before temperature scaling.
struct ProjectionHead {
  Mlp mlp;                        // d -> h -> h -> bottleneck
  std::vector<float> prototypes;  // K x bottleneck, row-major

  int out_features() const { return static_cast<int>(prototypes.size()) / mlp.out_features(); }
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct ProjectionTape {
  MlpTape mlp;
  std::vector<float> bottleneck;  // before normalization
  std::vector<float> unit;        // normalized bottleneck
  std::vector<float> row_norms;   // prototype row norms
};

/// Student: encoder + localizability, composability and decomposability heads.
struct StudentNet {
  Encoder encoder;
  ProjectionHead loc_head;
  Mlp comp_head;    // n*d -> hidden -> d
  Mlp decomp_head;  // d -> hidden -> n*d

  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
  void buffers(const std::string& prefix, std::vector<ParamRef>& out) { encoder.buffers(prefix + "encoder.", out); }
  void buffers(const std::string& prefix, std::vector<ConstParamRef>& out) const {
    encoder.buffers(prefix + "encoder.", out);
  }
};

/// Teacher: EMA shadow of the student's encoder and localizability head.
struct TeacherNet {
  Encoder encoder;
  ProjectionHead loc_head;

  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
  void buffers(const std::string& prefix, std::vector<ParamRef>& out) { encoder.buffers(prefix + "encoder.", out); }
  void buffers(const std::string& prefix, std::vector<ConstParamRef>& out) const {
    encoder.buffers(prefix + "encoder.", out);
  }
};

struct ModelState {
  ModelConfig config;
  StudentNet student;
  TeacherNet teacher;
  std::vector<float> center;  // length K
  std::int64_t step = 0;
  std::int64_t total_steps = 0;

  /// Random student; teacher starts as an exact copy; center zero.
  static ModelState create(const ModelConfig& config, std::uint64_t seed);
};

std::vector<float> loc_project(const ProjectionHead& head, std::span<const float> feature,
                               ProjectionTape* tape = nullptr);
/// Accumulates parameter gradients into `grad`; returns dL/dfeature.
std::vector<float> loc_backward(const ProjectionHead& head, const ProjectionTape& tape, std::span<const float> dlogits,
                                ProjectionHead& grad);

/// Concatenates exactly n part features (canonical order) and applies the
/// composability head.
std::vector<float> compose(const Mlp& head, const std::vector<std::vector<float>>& part_features,
                           MlpTape* tape = nullptr);

/// Like compose, but accepts 1..n parts and fills the missing trailing slots
/// with zero vectors. Used by the zero-shot composition analysis for part
/// counts other than the trained n.
std::vector<float> compose_padded(const Mlp& head, const std::vector<std::vector<float>>& part_features,
                                  int feature_dim);

/// Applies the decomposability head and splits its n*d output into n
/// contiguous blocks; block i pairs with canonical part i.
std::vector<std::vector<float>> decompose(const Mlp& head, std::span<const float> whole_embedding, int n,
                                          MlpTape* tape = nullptr);

/// Cosine schedule end - (end - start) * (cos(pi * step / total) + 1) / 2.
double ema_coefficient(std::int64_t step, std::int64_t total_steps, double start = 0.996, double end = 1.0);

/// teacher <- lambda * teacher + (1 - lambda) * student on the encoder and
/// localizability head.
void ema_update(TeacherNet& teacher, const StudentNet& student, double lambda);

/// Teacher parameters copied from the student (used at initialization).
TeacherNet teacher_from(const StudentNet& student);

}  // namespace partwhole
