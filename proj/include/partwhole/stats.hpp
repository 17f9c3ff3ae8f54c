#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace partwhole {

/// Five-number summary plus mean; quantiles use linear interpolation between
/// order statistics.
struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;

  nlohmann::json to_json() const;
};

double quantile(std::vector<double> values, double q);
double mean(std::span<const double> values);
double sample_stddev(std::span<const double> values);
Summary summarize(std::span<const double> values);

double euclidean(std::span<const float> a, std::span<const float> b);
/// dot / sqrt(|a|^2 |b|^2) in double precision; 0 when either norm is 0.
double cosine(std::span<const float> a, std::span<const float> b);

struct SilhouetteResult {
  double score = 0.0;
  bool degenerate = false;  // every pairwise distance is zero
};

/// Mean silhouette over all points. Points in singleton clusters score 0.
SilhouetteResult silhouette(const std::vector<std::vector<float>>& points, const std::vector<int>& labels);

/// Area under the ROC curve via the Mann-Whitney statistic (ties count 1/2).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// 2|A n B| / (|A| + |B|) for binary masks; 1 when both are empty.
double dice(std::span<const float> prediction, std::span<const float> truth, float threshold = 0.5f);

struct TTestResult {
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;  // two-sided
};

/// Independent two-sample Student t-test with pooled variance.
TTestResult two_sample_ttest(std::span<const double> a, std::span<const double> b);

/// Projects rows onto their top two principal components.
std::vector<std::pair<double, double>> pca_2d(const std::vector<std::vector<float>>& rows);

}  // namespace partwhole
