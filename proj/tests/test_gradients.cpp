// Finite-difference checks of every hand-written backward pass.
#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "partwhole/model.hpp"
#include "partwhole/nn.hpp"

using namespace partwhole;

namespace {

Image random_image(int side, int channels, Rng& rng) {
  Image img(side, side, channels);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Central differences on a sample of entries of `values`; loss() reevaluates
// the scalar objective.
void check_entries(std::span<float> values, std::span<const float> analytic, const std::function<double()>& loss,
                   const std::string& name, int samples = 12, float h = 2e-3f) {
  ASSERT_EQ(values.size(), analytic.size()) << name;
  const std::size_t stride = std::max<std::size_t>(1, values.size() / samples);
  double max_abs = 0;
  for (float g : analytic) max_abs = std::max(max_abs, std::fabs(static_cast<double>(g)));
  for (std::size_t i = 0; i < values.size(); i += stride) {
    const float keep = values[i];
    values[i] = keep + h;
    const double up = loss();
    values[i] = keep - h;
    const double down = loss();
    values[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    EXPECT_NEAR(analytic[i], numeric, 2e-2 * std::max(1.0, max_abs)) << name << "[" << i << "]";
  }
}

}  // namespace

TEST(Gradients, BatchNormMatchesFiniteDifferences) {
  Rng rng(3);
  BatchNorm2d bn = BatchNorm2d::create(3);
  for (auto& g : bn.gamma) g = static_cast<float>(0.5 + rng.uniform());
  for (auto& b : bn.beta) b = static_cast<float>(rng.normal());
  std::vector<FeatureMap> xs(4, FeatureMap(3, 2, 3));
  for (auto& x : xs)
    for (auto& v : x.data) v = static_cast<float>(rng.normal());
  std::vector<FeatureMap> r = xs;
  for (auto& x : r)
    for (auto& v : x.data) v = static_cast<float>(rng.normal());

  auto loss = [&] {
    auto ys = bn_forward_train(bn, xs, nullptr, false);
    double s = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) s += dot(ys[i].data, r[i].data);
    return s;
  };
  BatchNormTape tape;
  bn_forward_train(bn, xs, &tape, false);
  BatchNorm2d grad = zeros_like(bn);
  auto dxs = bn_backward(bn, tape, r, grad);
  check_entries(bn.gamma, grad.gamma, loss, "gamma");
  check_entries(bn.beta, grad.beta, loss, "beta");
  for (std::size_t i = 0; i < xs.size(); ++i) check_entries(xs[i].data, dxs[i].data, loss, "x" + std::to_string(i));
}

TEST(Gradients, EncoderBatchMatchesFiniteDifferences) {
  Rng rng(5);
  EncoderConfig cfg;
  cfg.kind = EncoderKind::pluggable;
  cfg.stage_widths = {4, 8};
  cfg.feature_dim = 8;
  cfg.input_size = 16;
  Encoder enc = Encoder::create(cfg, rng);
  std::vector<Image> views;
  for (int i = 0; i < 3; ++i) views.push_back(random_image(16, 1, rng));
  std::vector<std::vector<float>> r;
  for (int i = 0; i < 3; ++i) r.push_back(random_vec(8, rng));

  auto loss = [&] {
    auto fs = encode_batch(enc, views, nullptr, false);
    double s = 0;
    for (std::size_t i = 0; i < fs.size(); ++i) s += dot(fs[i], r[i]);
    return s;
  };
  EncoderTape tape;
  encode_batch(enc, views, &tape, false);
  Encoder grad = zeros_like(enc);
  encoder_backward(enc, tape, r, grad);

  std::vector<ParamRef> ps, gs;
  enc.params("", ps);
  grad.params("", gs);
  for (std::size_t i = 0; i < ps.size(); ++i) check_entries(ps[i].values, gs[i].values, loss, ps[i].name);
}

TEST(Gradients, ProjectionHeadMatchesFiniteDifferences) {
  Rng rng(7);
  ProjectionHead head;
  head.mlp = Mlp::create({5, 8, 8, 4}, 0.5, rng);
  head.prototypes = random_vec(6 * 4, rng);
  auto feature = random_vec(5, rng);
  auto r = random_vec(6, rng);

  auto loss = [&] { return dot(loc_project(head, feature), r); };
  ProjectionTape tape;
  loc_project(head, feature, &tape);
  ProjectionHead grad = zeros_like(head);
  auto dfeat = loc_backward(head, tape, r, grad);

  std::vector<ParamRef> ps, gs;
  head.params("", ps);
  grad.params("", gs);
  for (std::size_t i = 0; i < ps.size(); ++i) check_entries(ps[i].values, gs[i].values, loss, ps[i].name);
  check_entries(feature, dfeat, loss, "feature");
}
