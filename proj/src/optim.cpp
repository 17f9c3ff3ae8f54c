#include "partwhole/optim.hpp"

#include <cmath>
#include <numbers>

#include "partwhole/error.hpp"

namespace partwhole {

AdamW::AdamW(const std::vector<ParamRef>& params) {
  for (const auto& p : params) {
    m.emplace_back(p.values.size(), 0.0f);
    v.emplace_back(p.values.size(), 0.0f);
  }
}

void AdamW::step(std::vector<ParamRef>& params, const std::vector<ParamRef>& grads, double lr) {
  require(params.size() == grads.size() && params.size() == m.size(), "optimizer",
          "parameter list does not match optimizer state");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values;
    auto g = grads[i].values;
    auto& mi = m[i];
    auto& vi = v[i];
    const double decay = params[i].decay ? lr * weight_decay : 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      mi[k] = static_cast<float>(beta1 * mi[k] + (1.0 - beta1) * gk);
      vi[k] = static_cast<float>(beta2 * vi[k] + (1.0 - beta2) * gk * gk);
      const double mhat = mi[k] / bc1;
      const double vhat = vi[k] / bc2;
      p[k] = static_cast<float>(p[k] - decay * p[k] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

double clip_grad_norm(std::vector<ParamRef>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (float x : g.values) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& g : grads)
      for (auto& x : g.values) x *= scale;
  }
  return norm;
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base, double min_lr, std::int64_t warmup_steps) {
  require(total_steps > 0, "total_steps", "must be positive");
  if (step < warmup_steps) return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return min_lr + (base - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace partwhole
