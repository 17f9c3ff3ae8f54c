#include "partwhole/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "partwhole/error.hpp"

namespace partwhole {

nlohmann::json Summary::to_json() const {
  return {{"count", count}, {"mean", mean}, {"stddev", stddev}, {"min", min}, {"q1", q1},
          {"median", median}, {"q3", q3}, {"max", max}};
}

double quantile(std::vector<double> values, double q) {
  require(!values.empty(), "values", "must be non-empty");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(values.size() - 1, lo + 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double mean(std::span<const double> values) {
  require(!values.empty(), "values", "must be non-empty");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_stddev(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

Summary summarize(std::span<const double> values) {
  require(!values.empty(), "values", "must be non-empty");
  std::vector<double> v(values.begin(), values.end());
  Summary s;
  s.count = v.size();
  s.mean = mean(v);
  s.stddev = sample_stddev(v);
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  return s;
}

double euclidean(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), "vectors", "length mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), "vectors", "length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

SilhouetteResult silhouette(const std::vector<std::vector<float>>& points, const std::vector<int>& labels) {
  require(points.size() == labels.size(), "labels", "one label per point");
  require(points.size() >= 2, "points", "need at least two points");
  const std::size_t n = points.size();
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  require(classes.size() >= 2, "labels", "silhouette needs at least two classes");
  std::vector<std::size_t> label_index(n);
  for (std::size_t i = 0; i < n; ++i)
    label_index[i] = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin());
  std::vector<std::size_t> sizes(classes.size(), 0);
  for (auto li : label_index) ++sizes[li];

  std::vector<double> dist(n * n, 0.0);
  bool any_nonzero = false;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = euclidean(points[i], points[j]);
      dist[i * n + j] = dist[j * n + i] = d;
      any_nonzero = any_nonzero || d > 0.0;
    }
  SilhouetteResult r;
  if (!any_nonzero) {
    r.degenerate = true;
    return r;
  }
  double total = 0.0;
  std::vector<double> sums(classes.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) sums[label_index[j]] += dist[i * n + j];
    const std::size_t own = label_index[i];
    if (sizes[own] < 2) continue;
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes.size(); ++k)
      if (k != own) b = std::min(b, sums[k] / static_cast<double>(sizes[k]));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  r.score = total / static_cast<double>(n);
  return r;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "labels", "one label per score");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Average ranks over ties.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    } else {
      neg += 1.0;
    }
  }
  require(pos > 0.0 && neg > 0.0, "labels", "AUC needs both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double dice(std::span<const float> prediction, std::span<const float> truth, float threshold) {
  require(prediction.size() == truth.size(), "mask", "size mismatch");
  double inter = 0.0, a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = prediction[i] >= threshold;
    const bool t = truth[i] >= threshold;
    inter += (p && t) ? 1.0 : 0.0;
    a += p ? 1.0 : 0.0;
    b += t ? 1.0 : 0.0;
  }
  if (a + b == 0.0) return 1.0;
  return 2.0 * inter / (a + b);
}

TTestResult two_sample_ttest(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, "samples", "each group needs at least two values");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = std::pow(sample_stddev(a), 2);
  const double vb = std::pow(sample_stddev(b), 2);
  TTestResult r;
  r.dof = na + nb - 2.0;
  const double pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / r.dof;
  const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  const double diff = mean(a) - mean(b);
  if (se == 0.0) {
    r.t = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = diff / se;
  const boost::math::students_t dist(r.dof);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

std::vector<std::pair<double, double>> pca_2d(const std::vector<std::vector<float>>& rows) {
  require(!rows.empty(), "rows", "must be non-empty");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x / std::max<double>(1.0, static_cast<double>(n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::MatrixXd basis = es.eigenvectors().rightCols(std::min<Eigen::Index>(2, d));
  const Eigen::MatrixXd proj = x * basis;
  std::vector<std::pair<double, double>> out;
  for (Eigen::Index i = 0; i < n; ++i)
    out.emplace_back(proj(i, proj.cols() - 1), proj.cols() > 1 ? proj(i, 0) : 0.0);
  return out;
}

}  // namespace partwhole
