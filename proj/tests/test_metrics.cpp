#include <gxattack/attack.hpp>
#include <gxattack/metrics.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace gxa;

namespace {

Mat mask(int n, const std::vector<Edge>& e) { return adjacency_from_edges(n, e); }

}  // namespace

TEST(Gea, Identity) {
  Mat m = mask(5, {{0, 1}, {2, 3}});
  EXPECT_DOUBLE_EQ(gea(m, m), 1.0);
}

TEST(Gea, HalfOverlap) {
  // gt {e1,e2,e3}, pred {e2,e3,e4}: TP 2, FP 1, FN 1
  Mat gt = mask(6, {{0, 1}, {1, 2}, {2, 3}});
  Mat pr = mask(6, {{1, 2}, {2, 3}, {3, 4}});
  EXPECT_DOUBLE_EQ(gea(gt, pr), 0.5);
}

TEST(Gea, DisjointAndEmpty) {
  EXPECT_DOUBLE_EQ(gea(mask(4, {{0, 1}}), mask(4, {{2, 3}})), 0.0);
  EXPECT_DOUBLE_EQ(gea(Mat::Zero(4, 4), Mat::Zero(4, 4)), 1.0);
  auto j = jaccard_sets({}, {});
  EXPECT_TRUE(j.both_empty);
  EXPECT_DOUBLE_EQ(j.value, 1.0);
  EXPECT_THROW(gea(Mat::Zero(3, 3), Mat::Zero(4, 4)), std::invalid_argument);
}

TEST(Gea, SymmetricAndBounded) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Edge> a, b;
    for (int i = 0; i < 8; ++i)
      for (int j = i + 1; j < 8; ++j) {
        if (uniform01(rng) < 0.3) a.emplace_back(i, j);
        if (uniform01(rng) < 0.3) b.emplace_back(i, j);
      }
    double x = gea(mask(8, a), mask(8, b));
    EXPECT_DOUBLE_EQ(x, gea(mask(8, b), mask(8, a)));
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    EXPECT_DOUBLE_EQ(x, jaccard_sets(a, b).value);
  }
}

TEST(Gea, PipelineMatchesSetOracle) {
  // eight present edges with hand-picked scores; top 25% keeps two of them
  const int n = 8;
  std::vector<Edge> cands = {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 7}};
  double scores[] = {0.2, 0.9, 0.4, 0.9, 0.1, 0.7, 0.3, 0.05};
  Mat s = Mat::Zero(n, n);
  for (int e = 0; e < 8; ++e) s(cands[e].first, cands[e].second) = s(cands[e].second, cands[e].first) = scores[e];
  std::vector<Edge> gt = {{0, 2}, {4, 5}, {5, 6}};
  std::vector<std::pair<double, Edge>> ranked;
  for (int e = 0; e < 8; ++e) ranked.push_back({-scores[e], cands[e]});
  std::sort(ranked.begin(), ranked.end());
  std::set<Edge> pred = {ranked[0].second, ranked[1].second};
  std::set<Edge> g(gt.begin(), gt.end()), uni = g;
  uni.insert(pred.begin(), pred.end());
  int inter = 0;
  for (auto& e : pred) inter += g.count(e);
  double oracle = static_cast<double>(inter) / static_cast<double>(uni.size());
  EXPECT_DOUBLE_EQ(gea(mask(n, gt), topk_binarize(s, cands, 0.25)), oracle);
  EXPECT_DOUBLE_EQ(oracle, 0.25);
}

TEST(DeltaGea, Arithmetic) {
  EXPECT_NEAR(delta_gea(0.641, 0.375), 0.266, 1e-12);
  EXPECT_DOUBLE_EQ(delta_gea(0.3, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(delta_gea(0.0, 1.0), -1.0);
}

TEST(Cosine, Examples) {
  Mat m = mask(4, {{0, 1}, {1, 2}}) * 0.7;
  EXPECT_NEAR(cosine_similarity(m, m), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(m, 3.5 * m), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_similarity(m, mask(4, {{2, 3}})), 0.0);
  EXPECT_NEAR(cosine_similarity(m, -m), -1.0, 1e-15);
  auto z = cosine_checked(m, Mat::Zero(4, 4));
  EXPECT_TRUE(z.zero_norm);
  EXPECT_DOUBLE_EQ(z.value, 0.0);
}

TEST(Cosine, ScaleInvariantAndConsistentWithLossTerm) {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    Mat a = Mat::Random(6, 6).cwiseAbs();
    double c = 0.01 + 10 * uniform01(rng);
    EXPECT_NEAR(cosine_similarity(a, c * a), 1.0, 1e-12);
    Mat b = Mat::Random(6, 6);
    EXPECT_NEAR(loss_term_expl(a, b).value + cosine_similarity(a, b), 1.0, 1e-12);
  }
  Mat a = Mat::Random(5, 5);
  EXPECT_NEAR(loss_term_expl(a, a).value, 0.0, 1e-12);
}

TEST(DeltaProb, Examples) {
  Vec a(3), b(3);
  a << 0.9, 0.8, 0.6;
  EXPECT_DOUBLE_EQ(delta_prob(a, a), 0.0);
  Vec x(1), y(1);
  x << 0.9;
  y << 0.7;
  EXPECT_NEAR(delta_prob(x, y), 0.2, 1e-15);
  b << 0.5, 0.8, 0.7;
  EXPECT_NEAR(delta_prob(a, b), 0.5 / 3.0, 1e-15);
  EXPECT_THROW(delta_prob(a, x), std::invalid_argument);
}

TEST(DeltaLabel, Examples) {
  std::vector<int> a(50, 0), b(50, 0), c(50, 1);
  EXPECT_DOUBLE_EQ(delta_label(a, b), 0.0);
  EXPECT_DOUBLE_EQ(delta_label(a, c), 1.0);
  b[17] = 1;
  EXPECT_DOUBLE_EQ(delta_label(a, b), 0.02);
  EXPECT_THROW(delta_label(a, std::vector<int>(3)), std::invalid_argument);
}

TEST(ConfidenceBin, Edges) {
  EXPECT_EQ(confidence_bin(0.5), 5);
  EXPECT_EQ(confidence_bin(0.599), 5);
  EXPECT_EQ(confidence_bin(0.6), 6);
  EXPECT_EQ(confidence_bin(0.95), 9);
  EXPECT_EQ(confidence_bin(1.0), 9);
}
