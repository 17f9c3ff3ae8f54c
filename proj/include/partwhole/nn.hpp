#pragma once

#include <span>
#include <string>
#include <vector>

#include "partwhole/image.hpp"
#include "partwhole/rng.hpp"

namespace partwhole {

/// Channel-major (C x H x W) activation map.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}
  int plane() const { return height * width; }
};

FeatureMap to_feature_map(const Image& img);

/// Named view of one parameter tensor. `decay` marks tensors subject to
/// weight decay (weights, not biases).
struct ParamRef {
  std::string name;
  std::span<float> values;
  bool decay = true;
};

struct ConstParamRef {
  std::string name;
  std::span<const float> values;
};

/// 3x3 convolution, padding 1, stride 1 or 2.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<float> weight;  // out x (in * 9), row-major
  std::vector<float> bias;

  static Conv2d create(int in, int out, int stride, Rng& rng);
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct ConvTape {
  int in_height = 0;
  int in_width = 0;
  int out_height = 0;
  int out_width = 0;
  std::vector<float> columns;  // (in * 9) x (out_h * out_w)
};

FeatureMap conv_forward(const Conv2d& conv, const FeatureMap& x, ConvTape* tape);
/// Accumulates parameter gradients into `grad`; returns dL/dx.
FeatureMap conv_backward(const Conv2d& conv, const ConvTape& tape, const FeatureMap& dy, Conv2d& grad);

/// 2x2 transposed convolution with stride 2 (exact 2x upsampling).
struct ConvTranspose2x2 {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<float> weight;  // (out * 4) x in, row-major; row = oc * 4 + dy * 2 + dx
  std::vector<float> bias;

  static ConvTranspose2x2 create(int in, int out, Rng& rng);
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

FeatureMap upconv_forward(const ConvTranspose2x2& up, const FeatureMap& x);
FeatureMap upconv_backward(const ConvTranspose2x2& up, const FeatureMap& x, const FeatureMap& dy,
                           ConvTranspose2x2& grad);

/// Per-channel batch normalization over (sample, height, width).
struct BatchNorm2d {
  int channels = 0;
  double momentum = 0.1;
  double eps = 1e-5;
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;

  static BatchNorm2d create(int channels);
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
  /// Running statistics: checkpointed, never optimized.
  void buffers(const std::string& prefix, std::vector<ParamRef>& out);
  void buffers(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct BatchNormTape {
  std::vector<double> inv_std;
  std::vector<FeatureMap> xhat;
};

/// Normalizes with the statistics of `xs` (all of one shape) and, when
/// `update_running`, folds them into the running estimates (unbiased variance).
std::vector<FeatureMap> bn_forward_train(BatchNorm2d& bn, const std::vector<FeatureMap>& xs, BatchNormTape* tape,
                                         bool update_running = true);
/// Normalizes with the running statistics.
FeatureMap bn_forward_eval(const BatchNorm2d& bn, const FeatureMap& x);
/// Accumulates dgamma/dbeta into `grad`; returns dL/dx for every sample.
std::vector<FeatureMap> bn_backward(const BatchNorm2d& bn, const BatchNormTape& tape,
                                    const std::vector<FeatureMap>& dys, BatchNorm2d& grad);

void relu_inplace(FeatureMap& x);
/// dy masked by (y > 0), where y is the post-activation output.
void relu_backward_inplace(const FeatureMap& y, FeatureMap& dy);

struct Linear {
  int in_features = 0;
  int out_features = 0;
  std::vector<float> weight;  // out x in, row-major
  std::vector<float> bias;

  static Linear create(int in, int out, double init_std, Rng& rng);
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

/// Stack of linear layers with GELU between consecutive layers (none after
/// the last).
struct Mlp {
  std::vector<Linear> layers;

  static Mlp create(const std::vector<int>& widths, double init_std, Rng& rng);
  int in_features() const { return layers.front().in_features; }
  int out_features() const { return layers.back().out_features; }
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct MlpTape {
  std::vector<std::vector<float>> inputs;       // input to each layer
  std::vector<std::vector<float>> preactivations;  // output of each non-final layer before GELU
};

std::vector<float> mlp_forward(const Mlp& mlp, std::span<const float> x, MlpTape* tape);
std::vector<float> mlp_backward(const Mlp& mlp, const MlpTape& tape, std::span<const float> dy, Mlp& grad);

float gelu(float x);
float gelu_derivative(float x);

/// Zero-valued copy with identical structure, used as a gradient buffer.
template <class Net>
Net zeros_like(const Net& net) {
  Net out = net;
  std::vector<ParamRef> refs;
  out.params("", refs);
  for (auto& r : refs) std::fill(r.values.begin(), r.values.end(), 0.0f);
  return out;
}

}  // namespace partwhole
