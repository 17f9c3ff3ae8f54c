#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "partwhole/error.hpp"
#include "partwhole/rng.hpp"
#include "partwhole/stats.hpp"

using namespace partwhole;

TEST(Stats, QuantileLinear) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({5}, 0.9), 5.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3}, 1.0), 3.0);
}

TEST(Stats, Summary) {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  const auto s = summarize(v);
  EXPECT_EQ(s.count, 8u);
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_NEAR(s.stddev, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(s.min, 2.0);
  EXPECT_EQ(s.max, 9.0);
  EXPECT_DOUBLE_EQ(s.median, 4.5);
  EXPECT_EQ(s.to_json()["count"], 8);
}

TEST(Stats, Cosine) {
  const std::vector<float> a{1, 0}, b{0, 2}, c{3, 0}, z{0, 0};
  EXPECT_EQ(cosine(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine(a, c), 1.0);
  EXPECT_EQ(cosine(a, z), 0.0);
  EXPECT_DOUBLE_EQ(euclidean(a, b), std::sqrt(5.0));
}

TEST(Silhouette, TightClustersScoreOne) {
  const std::vector<std::vector<float>> p{{0, 0}, {0, 0}, {5, 5}, {5, 5}};
  const auto r = silhouette(p, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(r.score, 1.0);
  EXPECT_FALSE(r.degenerate);
}

TEST(Silhouette, MatchesReferenceValue) {
  // Reference from an independent implementation on the same five points.
  const std::vector<std::vector<float>> p{{0, 0}, {0, 1}, {10, 0}, {10, 1}, {5, 5}};
  EXPECT_NEAR(silhouette(p, {0, 0, 1, 1, 1}).score, 0.6008381502966926, 1e-6);
}

TEST(Silhouette, IdenticalPointsAreDegenerate) {
  const std::vector<std::vector<float>> p(4, std::vector<float>{1, 2, 3});
  EXPECT_TRUE(silhouette(p, {0, 0, 1, 1}).degenerate);
}

TEST(Auc, HandInstance) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
  const std::vector<double> tied{0.5, 0.5};
  EXPECT_DOUBLE_EQ(roc_auc(tied, std::vector<int>{0, 1}), 0.5);
}

TEST(Auc, RandomScoresNearHalf) {
  Rng rng(3);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 2000; ++i) {
    s.push_back(rng.uniform());
    y.push_back(i % 2);
  }
  EXPECT_NEAR(roc_auc(s, y), 0.5, 0.05);
}

TEST(Dice, HandInstance) {
  const std::vector<float> p{1, 1, 0, 0}, t{1, 0, 1, 0}, empty{0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(dice(p, t), 0.5);
  EXPECT_DOUBLE_EQ(dice(p, p), 1.0);
  EXPECT_DOUBLE_EQ(dice(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(dice(empty, t), 0.0);
}

TEST(TTest, ReferenceValues) {
  const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4, 6, 8, 10};
  const auto r = two_sample_ttest(a, b);
  EXPECT_NEAR(r.t, -1.8973665961010275, 1e-9);
  EXPECT_DOUBLE_EQ(r.dof, 8.0);
  EXPECT_NEAR(r.p_value, 0.09434977284243756, 1e-6);
}

TEST(Pca, CollinearRowsHaveNoSecondComponent) {
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 6; ++i) rows.push_back({float(i), float(2 * i), float(-i)});
  const auto proj = pca_2d(rows);
  ASSERT_EQ(proj.size(), rows.size());
  for (const auto& [u, v] : proj) EXPECT_NEAR(v, 0.0, 1e-4);
  EXPECT_NEAR(std::abs(proj[5].first - proj[0].first), 5.0 * std::sqrt(6.0), 1e-4);
}
