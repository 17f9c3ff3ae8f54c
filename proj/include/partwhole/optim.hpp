#pragma once

#include <cstdint>
#include <vector>

#include "partwhole/nn.hpp"

namespace partwhole {

/// Adam with decoupled weight decay. Moment buffers are aligned with the
/// parameter list order passed to step().
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;

  AdamW() = default;
  explicit AdamW(const std::vector<ParamRef>& params);

  /// Applies one update; parameters flagged `decay` also shrink by
  /// lr * weight_decay.
  void step(std::vector<ParamRef>& params, const std::vector<ParamRef>& grads, double lr);

  std::int64_t t = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the pre-clipping norm.
double clip_grad_norm(std::vector<ParamRef>& grads, double max_norm);

/// Linear warm-up from 0 to base over warmup_steps, then cosine decay to
/// min_lr at total_steps.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base, double min_lr, std::int64_t warmup_steps);

}  // namespace partwhole
