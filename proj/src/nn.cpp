#include "partwhole/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "partwhole/error.hpp"

namespace partwhole {

namespace {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

void fill_normal(std::vector<float>& v, double stddev, Rng& rng) {
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
}

// Truncated at two standard deviations.
void fill_trunc_normal(std::vector<float>& v, double stddev, Rng& rng) {
  for (auto& x : v) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    x = static_cast<float>(z * stddev);
  }
}

}  // namespace

FeatureMap to_feature_map(const Image& img) {
  FeatureMap f(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        f.data[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] = img.at(y, x, c);
  return f;
}

Conv2d Conv2d::create(int in, int out, int stride, Rng& rng) {
  require(in > 0 && out > 0, "channels", "must be positive");
  require(stride == 1 || stride == 2, "stride", "must be 1 or 2");
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.stride = stride;
  c.weight.resize(static_cast<std::size_t>(out) * in * 9);
  c.bias.assign(static_cast<std::size_t>(out), 0.0f);
  fill_normal(c.weight, std::sqrt(2.0 / (in * 9.0)), rng);
  return c;
}

void Conv2d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", weight, true});
  out.push_back({prefix + "bias", bias, false});
}

void Conv2d::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

FeatureMap conv_forward(const Conv2d& conv, const FeatureMap& x, ConvTape* tape) {
  require(x.channels == conv.in_channels, "input",
          "expected " + std::to_string(conv.in_channels) + " channels, got " + std::to_string(x.channels));
  const int s = conv.stride;
  const int oh = (x.height - 1) / s + 1;
  const int ow = (x.width - 1) / s + 1;
  const int P = oh * ow;
  const int rows = conv.in_channels * 9;
  std::vector<float> local;
  std::vector<float>& cols = tape ? tape->columns : local;
  cols.assign(static_cast<std::size_t>(rows) * P, 0.0f);
  for (int ci = 0; ci < conv.in_channels; ++ci) {
    const float* src = x.data.data() + static_cast<std::size_t>(ci) * x.plane();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        float* dst = cols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s + ky - 1;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s + kx - 1;
            if (ix >= 0 && ix < x.width) dst[oy * ow + ox] = src[iy * x.width + ix];
          }
        }
      }
  }
  FeatureMap y(conv.out_channels, oh, ow);
  MapRM ym(y.data.data(), conv.out_channels, P);
  ym.noalias() = ConstMapRM(conv.weight.data(), conv.out_channels, rows) * ConstMapRM(cols.data(), rows, P);
  ym.colwise() += ConstVecMap(conv.bias.data(), conv.out_channels);
  if (tape) {
    tape->in_height = x.height;
    tape->in_width = x.width;
    tape->out_height = oh;
    tape->out_width = ow;
  }
  return y;
}

FeatureMap conv_backward(const Conv2d& conv, const ConvTape& tape, const FeatureMap& dy, Conv2d& grad) {
  const int P = tape.out_height * tape.out_width;
  const int rows = conv.in_channels * 9;
  require(dy.channels == conv.out_channels && dy.plane() == P, "gradient", "shape mismatch in conv backward");
  ConstMapRM dym(dy.data.data(), conv.out_channels, P);
  ConstMapRM colm(tape.columns.data(), rows, P);
  MapRM(grad.weight.data(), conv.out_channels, rows).noalias() += dym * colm.transpose();
  VecMap(grad.bias.data(), conv.out_channels) += dym.rowwise().sum();
  MatrixRM dcols = ConstMapRM(conv.weight.data(), conv.out_channels, rows).transpose() * dym;

  FeatureMap dx(conv.in_channels, tape.in_height, tape.in_width);
  const int s = conv.stride;
  const int oh = tape.out_height;
  const int ow = tape.out_width;
  for (int ci = 0; ci < conv.in_channels; ++ci) {
    float* dst = dx.data.data() + static_cast<std::size_t>(ci) * dx.plane();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const float* src = dcols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s + ky - 1;
          if (iy < 0 || iy >= dx.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s + kx - 1;
            if (ix >= 0 && ix < dx.width) dst[iy * dx.width + ix] += src[oy * ow + ox];
          }
        }
      }
  }
  return dx;
}

ConvTranspose2x2 ConvTranspose2x2::create(int in, int out, Rng& rng) {
  ConvTranspose2x2 u;
  u.in_channels = in;
  u.out_channels = out;
  u.weight.resize(static_cast<std::size_t>(out) * 4 * in);
  u.bias.assign(static_cast<std::size_t>(out), 0.0f);
  fill_normal(u.weight, std::sqrt(2.0 / in), rng);
  return u;
}

void ConvTranspose2x2::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", weight, true});
  out.push_back({prefix + "bias", bias, false});
}

void ConvTranspose2x2::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

FeatureMap upconv_forward(const ConvTranspose2x2& up, const FeatureMap& x) {
  require(x.channels == up.in_channels, "input", "channel mismatch in transposed conv");
  const int P = x.plane();
  MatrixRM y4 = ConstMapRM(up.weight.data(), up.out_channels * 4, up.in_channels) *
                ConstMapRM(x.data.data(), up.in_channels, P);
  FeatureMap y(up.out_channels, x.height * 2, x.width * 2);
  for (int oc = 0; oc < up.out_channels; ++oc)
    for (int k = 0; k < 4; ++k) {
      const int dy = k / 2;
      const int dx = k % 2;
      const float* src = y4.data() + static_cast<std::size_t>(oc * 4 + k) * P;
      float* dst = y.data.data() + static_cast<std::size_t>(oc) * y.plane();
      for (int iy = 0; iy < x.height; ++iy)
        for (int ix = 0; ix < x.width; ++ix)
          dst[(2 * iy + dy) * y.width + 2 * ix + dx] = src[iy * x.width + ix] + up.bias[oc];
    }
  return y;
}

FeatureMap upconv_backward(const ConvTranspose2x2& up, const FeatureMap& x, const FeatureMap& dy,
                           ConvTranspose2x2& grad) {
  const int P = x.plane();
  MatrixRM dy4(up.out_channels * 4, P);
  for (int oc = 0; oc < up.out_channels; ++oc) {
    const float* src = dy.data.data() + static_cast<std::size_t>(oc) * dy.plane();
    for (int k = 0; k < 4; ++k) {
      const int ky = k / 2;
      const int kx = k % 2;
      float* dst = dy4.data() + static_cast<std::size_t>(oc * 4 + k) * P;
      for (int iy = 0; iy < x.height; ++iy)
        for (int ix = 0; ix < x.width; ++ix) dst[iy * x.width + ix] = src[(2 * iy + ky) * dy.width + 2 * ix + kx];
    }
    grad.bias[oc] += ConstVecMap(src, dy.plane()).sum();
  }
  ConstMapRM xm(x.data.data(), up.in_channels, P);
  MapRM(grad.weight.data(), up.out_channels * 4, up.in_channels).noalias() += dy4 * xm.transpose();
  FeatureMap dx(up.in_channels, x.height, x.width);
  MapRM(dx.data.data(), up.in_channels, P).noalias() =
      ConstMapRM(up.weight.data(), up.out_channels * 4, up.in_channels).transpose() * dy4;
  return dx;
}

BatchNorm2d BatchNorm2d::create(int channels) {
  require(channels > 0, "channels", "must be positive");
  BatchNorm2d bn;
  bn.channels = channels;
  bn.gamma.assign(static_cast<std::size_t>(channels), 1.0f);
  bn.beta.assign(static_cast<std::size_t>(channels), 0.0f);
  bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0f);
  bn.running_var.assign(static_cast<std::size_t>(channels), 1.0f);
  return bn;
}

void BatchNorm2d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "gamma", gamma, false});
  out.push_back({prefix + "beta", beta, false});
}

void BatchNorm2d::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  out.push_back({prefix + "gamma", gamma});
  out.push_back({prefix + "beta", beta});
}

void BatchNorm2d::buffers(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "running_mean", running_mean, false});
  out.push_back({prefix + "running_var", running_var, false});
}

void BatchNorm2d::buffers(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  out.push_back({prefix + "running_mean", running_mean});
  out.push_back({prefix + "running_var", running_var});
}

std::vector<FeatureMap> bn_forward_train(BatchNorm2d& bn, const std::vector<FeatureMap>& xs, BatchNormTape* tape,
                                         bool update_running) {
  require(!xs.empty(), "batch", "must be non-empty");
  const FeatureMap& first = xs.front();
  require(first.channels == bn.channels, "input", "channel count differs from the normalization layer");
  for (const auto& x : xs)
    require(x.channels == first.channels && x.height == first.height && x.width == first.width, "batch",
            "all samples must share one shape");
  const int P = first.plane();
  const double m = static_cast<double>(xs.size()) * P;
  std::vector<FeatureMap> out(xs.size(), FeatureMap(first.channels, first.height, first.width));
  if (tape) {
    tape->inv_std.assign(static_cast<std::size_t>(bn.channels), 0.0);
    tape->xhat.assign(xs.size(), FeatureMap(first.channels, first.height, first.width));
  }
  for (int c = 0; c < bn.channels; ++c) {
    const std::size_t off = static_cast<std::size_t>(c) * P;
    double sum = 0.0;
    for (const auto& x : xs)
      for (int i = 0; i < P; ++i) sum += x.data[off + i];
    const double mean = sum / m;
    double ss = 0.0;
    for (const auto& x : xs)
      for (int i = 0; i < P; ++i) {
        const double d = x.data[off + i] - mean;
        ss += d * d;
      }
    const double var = ss / m;
    const double inv = 1.0 / std::sqrt(var + bn.eps);
    const double g = bn.gamma[c];
    const double b = bn.beta[c];
    for (std::size_t n = 0; n < xs.size(); ++n)
      for (int i = 0; i < P; ++i) {
        const double xh = (xs[n].data[off + i] - mean) * inv;
        if (tape) tape->xhat[n].data[off + i] = static_cast<float>(xh);
        out[n].data[off + i] = static_cast<float>(g * xh + b);
      }
    if (tape) tape->inv_std[static_cast<std::size_t>(c)] = inv;
    if (update_running) {
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      bn.running_mean[c] = static_cast<float>((1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mean);
      bn.running_var[c] = static_cast<float>((1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * unbiased);
    }
  }
  return out;
}

FeatureMap bn_forward_eval(const BatchNorm2d& bn, const FeatureMap& x) {
  require(x.channels == bn.channels, "input", "channel count differs from the normalization layer");
  FeatureMap out(x.channels, x.height, x.width);
  const int P = x.plane();
  for (int c = 0; c < bn.channels; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.eps);
    const double scale = bn.gamma[c] * inv;
    const double shift = bn.beta[c] - bn.running_mean[c] * scale;
    const std::size_t off = static_cast<std::size_t>(c) * P;
    for (int i = 0; i < P; ++i) out.data[off + i] = static_cast<float>(x.data[off + i] * scale + shift);
  }
  return out;
}

std::vector<FeatureMap> bn_backward(const BatchNorm2d& bn, const BatchNormTape& tape,
                                    const std::vector<FeatureMap>& dys, BatchNorm2d& grad) {
  require(dys.size() == tape.xhat.size(), "batch", "gradient count differs from the forward batch");
  const FeatureMap& first = tape.xhat.front();
  const int P = first.plane();
  const double m = static_cast<double>(dys.size()) * P;
  std::vector<FeatureMap> dx(dys.size(), FeatureMap(first.channels, first.height, first.width));
  for (int c = 0; c < bn.channels; ++c) {
    const std::size_t off = static_cast<std::size_t>(c) * P;
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < dys.size(); ++n)
      for (int i = 0; i < P; ++i) {
        sum_dy += dys[n].data[off + i];
        sum_dy_xhat += static_cast<double>(dys[n].data[off + i]) * tape.xhat[n].data[off + i];
      }
    grad.gamma[c] += static_cast<float>(sum_dy_xhat);
    grad.beta[c] += static_cast<float>(sum_dy);
    const double k = bn.gamma[c] * tape.inv_std[static_cast<std::size_t>(c)] / m;
    for (std::size_t n = 0; n < dys.size(); ++n)
      for (int i = 0; i < P; ++i)
        dx[n].data[off + i] = static_cast<float>(
            k * (m * dys[n].data[off + i] - sum_dy - tape.xhat[n].data[off + i] * sum_dy_xhat));
  }
  return dx;
}

void relu_inplace(FeatureMap& x) {
  for (auto& v : x.data) v = v > 0.0f ? v : 0.0f;
}

void relu_backward_inplace(const FeatureMap& y, FeatureMap& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > 0.0f)) dy.data[i] = 0.0f;
}

Linear Linear::create(int in, int out, double init_std, Rng& rng) {
  require(in > 0 && out > 0, "features", "must be positive");
  Linear l;
  l.in_features = in;
  l.out_features = out;
  l.weight.resize(static_cast<std::size_t>(out) * in);
  l.bias.assign(static_cast<std::size_t>(out), 0.0f);
  fill_trunc_normal(l.weight, init_std > 0.0 ? init_std : 1.0 / std::sqrt(static_cast<double>(in)), rng);
  return l;
}

void Linear::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", weight, true});
  out.push_back({prefix + "bias", bias, false});
}

void Linear::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

Mlp Mlp::create(const std::vector<int>& widths, double init_std, Rng& rng) {
  require(widths.size() >= 2, "widths", "an MLP needs at least one layer");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(Linear::create(widths[i], widths[i + 1], init_std, rng));
  return m;
}

void Mlp::params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].params(prefix + std::to_string(i) + ".", out);
}

void Mlp::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].params(prefix + std::to_string(i) + ".", out);
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * static_cast<float>(std::numbers::sqrt2 / 2.0))); }

float gelu_derivative(float x) {
  const float cdf = 0.5f * (1.0f + std::erf(x * static_cast<float>(std::numbers::sqrt2 / 2.0)));
  const float pdf = std::exp(-0.5f * x * x) * static_cast<float>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

std::vector<float> mlp_forward(const Mlp& mlp, std::span<const float> x, MlpTape* tape) {
  require(static_cast<int>(x.size()) == mlp.in_features(), "input",
          "expected width " + std::to_string(mlp.in_features()) + ", got " + std::to_string(x.size()));
  if (tape) {
    tape->inputs.clear();
    tape->preactivations.clear();
  }
  std::vector<float> h(x.begin(), x.end());
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const Linear& l = mlp.layers[i];
    if (tape) tape->inputs.push_back(h);
    std::vector<float> y(static_cast<std::size_t>(l.out_features));
    VecMap(y.data(), l.out_features).noalias() =
        ConstMapRM(l.weight.data(), l.out_features, l.in_features) * ConstVecMap(h.data(), l.in_features) +
        ConstVecMap(l.bias.data(), l.out_features);
    if (i + 1 < mlp.layers.size()) {
      if (tape) tape->preactivations.push_back(y);
      for (auto& v : y) v = gelu(v);
    }
    h = std::move(y);
  }
  return h;
}

std::vector<float> mlp_backward(const Mlp& mlp, const MlpTape& tape, std::span<const float> dy, Mlp& grad) {
  std::vector<float> g(dy.begin(), dy.end());
  for (std::size_t k = mlp.layers.size(); k-- > 0;) {
    const Linear& l = mlp.layers[k];
    Linear& gl = grad.layers[k];
    if (k + 1 < mlp.layers.size()) {
      const auto& pre = tape.preactivations[k];
      for (std::size_t j = 0; j < g.size(); ++j) g[j] *= gelu_derivative(pre[j]);
    }
    const auto& in = tape.inputs[k];
    ConstVecMap gv(g.data(), l.out_features);
    MapRM(gl.weight.data(), l.out_features, l.in_features).noalias() +=
        gv * ConstVecMap(in.data(), l.in_features).transpose();
    VecMap(gl.bias.data(), l.out_features) += gv;
    std::vector<float> dx(static_cast<std::size_t>(l.in_features));
    VecMap(dx.data(), l.in_features).noalias() =
        ConstMapRM(l.weight.data(), l.out_features, l.in_features).transpose() * gv;
    g = std::move(dx);
  }
  return g;
}

}  // namespace partwhole
