#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "partwhole/error.hpp"

namespace partwhole {

struct LossWeights {
  double localizability = 1.0;
  double composability = 1.0;
  double decomposability = 1.0;

  void validate() const {
    for (double w : {localizability, composability, decomposability})
      require(std::isfinite(w) && w >= 0.0, "weights", "must be finite and non-negative");
    require(localizability + composability + decomposability > 0.0, "weights", "must not all be zero");
  }
  static LossWeights warmup() { return {1.0, 0.0, 0.0}; }
};

/// Student and teacher softmax temperatures. The teacher temperature ramps
/// linearly from teacher_start to teacher_end over the warm-up epochs.
struct TemperaturePair {
  double student = 0.1;
  double teacher_start = 0.04;
  double teacher_end = 0.07;
  int teacher_warmup_epochs = 5;

  void validate() const {
    require(student > 0.0, "tau_s", "must be positive");
    require(teacher_start > 0.0 && teacher_end > 0.0, "tau_t", "must be positive");
    require(teacher_start < student && teacher_end < student, "tau_t", "must be below tau_s");
    require(teacher_warmup_epochs >= 0, "tau_t_warmup_epochs", "must be non-negative");
  }

  /// Teacher temperature at a (possibly fractional) global epoch.
  double teacher_at(double epoch) const {
    if (teacher_warmup_epochs == 0 || epoch >= teacher_warmup_epochs) return teacher_end;
    return teacher_start + (teacher_end - teacher_start) * std::max(0.0, epoch) / teacher_warmup_epochs;
  }
};

template <std::floating_point T>
struct LossGrad {
  T loss{};
  std::vector<std::vector<T>> grads;  // one gradient per student-side input vector
};

/// exp(z_i / tau) / sum_k exp(z_k / tau), with max subtraction.
template <std::floating_point T>
std::vector<T> sharpened_softmax(std::span<const T> logits, T tau) {
  require(tau > T(0), "tau", "must be positive");
  require(!logits.empty(), "logits", "must be non-empty");
  T mx = logits[0];
  for (T v : logits) {
    require(std::isfinite(v), "logits", "must be finite");
    mx = std::max(mx, v);
  }
  std::vector<T> p(logits.size());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp((logits[i] - mx) / tau);
  for (auto& v : p) v /= sum;
  return p;
}

template <std::floating_point T>
T entropy(std::span<const T> p) {
  T h = 0;
  for (T v : p)
    if (v > T(0)) h -= v * std::log(v);
  return h;
}

/// center <- momentum * center + (1 - momentum) * mean(batch).
template <std::floating_point T>
void center_update(std::vector<T>& center, const std::vector<std::vector<T>>& teacher_logits, double momentum) {
  require(!teacher_logits.empty(), "teacher_logits", "batch must be non-empty");
  require(momentum >= 0.0 && momentum <= 1.0, "momentum", "must be in [0, 1]");
  for (std::size_t i = 0; i < center.size(); ++i) {
    double mean = 0.0;
    for (const auto& z : teacher_logits) {
      require(z.size() == center.size(), "teacher_logits", "length must equal the center length");
      mean += static_cast<double>(z[i]);
    }
    mean /= static_cast<double>(teacher_logits.size());
    center[i] = static_cast<T>(momentum * static_cast<double>(center[i]) + (1.0 - momentum) * mean);
  }
}

/// Centered (when `center` is non-empty) and sharpened teacher distribution.
template <std::floating_point T>
std::vector<T> teacher_distribution(std::span<const T> teacher_logits, std::span<const T> center, T tau_t) {
  std::vector<T> z(teacher_logits.begin(), teacher_logits.end());
  if (!center.empty()) {
    require(center.size() == z.size(), "center", "length must equal K");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= center[i];
  }
  return sharpened_softmax<T>(z, tau_t);
}

/// -(1/|Z_s|) sum_s sum_i P_t(z_t)_i log P_s(z_s)_i. Gradients are returned for
/// the student logits only; the teacher distribution is a constant target.
template <std::floating_point T>
LossGrad<T> localizability_loss(std::span<const T> teacher_logits, const std::vector<std::vector<T>>& student_logits,
                                T tau_t, T tau_s, std::span<const T> center) {
  require(!student_logits.empty(), "student_logits", "must be non-empty");
  const auto pt = teacher_distribution<T>(teacher_logits, center, tau_t);
  LossGrad<T> out;
  const T inv_n = T(1) / static_cast<T>(student_logits.size());
  for (const auto& zs : student_logits) {
    require(zs.size() == pt.size(), "student_logits", "every logit vector must have length K");
    T mx = zs[0];
    for (T v : zs) mx = std::max(mx, v);
    T sum = 0;
    for (T v : zs) sum += std::exp((v - mx) / tau_s);
    const T log_sum = std::log(sum);
    std::vector<T> g(zs.size());
    T ce = 0;
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const T log_ps = (zs[i] - mx) / tau_s - log_sum;
      ce -= pt[i] * log_ps;
      g[i] = (std::exp(log_ps) - pt[i]) / tau_s * inv_n;
    }
    out.loss += ce * inv_n;
    out.grads.push_back(std::move(g));
  }
  return out;
}

/// Coordinate-mean squared error; gradient w.r.t. `student` only.
template <std::floating_point T>
LossGrad<T> mse_loss(std::span<const T> target, std::span<const T> student) {
  require(target.size() == student.size() && !target.empty(), "embeddings", "lengths must match and be non-zero");
  LossGrad<T> out;
  std::vector<T> g(student.size());
  const T inv = T(1) / static_cast<T>(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    const T diff = student[i] - target[i];
    out.loss += diff * diff * inv;
    g[i] = T(2) * diff * inv;
  }
  out.grads.push_back(std::move(g));
  return out;
}

/// MSE between the teacher's whole embedding and the composed parts embedding.
template <std::floating_point T>
LossGrad<T> composability_loss(std::span<const T> whole_teacher, std::span<const T> composed_student) {
  return mse_loss<T>(whole_teacher, composed_student);
}

/// (1/|P|) sum_i MSE(teacher part i, decomposed student part i).
template <std::floating_point T>
LossGrad<T> decomposability_loss(const std::vector<std::vector<T>>& teacher_parts,
                                 const std::vector<std::vector<T>>& decomposed_student) {
  require(!teacher_parts.empty(), "parts", "must be non-empty");
  require(teacher_parts.size() == decomposed_student.size(), "parts",
          "teacher has " + std::to_string(teacher_parts.size()) + " parts, student " +
              std::to_string(decomposed_student.size()));
  LossGrad<T> out;
  const T inv_n = T(1) / static_cast<T>(teacher_parts.size());
  for (std::size_t i = 0; i < teacher_parts.size(); ++i) {
    auto term = mse_loss<T>(teacher_parts[i], decomposed_student[i]);
    out.loss += term.loss * inv_n;
    for (auto& g : term.grads[0]) g *= inv_n;
    out.grads.push_back(std::move(term.grads[0]));
  }
  return out;
}

template <std::floating_point T>
T total_loss(T loc, T comp, T decomp, const LossWeights& w) {
  require(std::isfinite(loc) && std::isfinite(comp) && std::isfinite(decomp), "losses", "must be finite");
  return static_cast<T>(w.localizability * loc + w.composability * comp + w.decomposability * decomp);
}

}  // namespace partwhole
