#include <gxattack/datagen.hpp>
#include <gxattack/explainers.hpp>

#include <gtest/gtest.h>

#include <set>

using namespace gxa;

namespace {

GcnParams random_params(int d, int h, int c, std::uint64_t seed) {
  Rng rng(seed);
  return {glorot(d, h, rng) * 2.0, glorot(h, c, rng) * 2.0};
}

PgxParams random_pgx(int h, std::uint64_t seed) {
  PgxConfig pc;
  pc.hidden_e = 16;
  pc.seed = seed;
  auto p = pgx_init(h, pc);
  Rng rng(seed + 1);
  for (int i = 0; i < p.b1.cols(); ++i) p.b1(0, i) = uniform01(rng) - 0.5;
  p.b2(0, 0) = 0.3;
  return p;
}

void expect_zero_outside(const ExplainerOutput& e) {
  std::set<Edge> c(e.candidates.begin(), e.candidates.end());
  for (int i = 0; i < e.importance.rows(); ++i)
    for (int j = 0; j < e.importance.cols(); ++j)
      if (i == j || !c.count(make_edge(i, j))) {
        EXPECT_EQ(e.importance(i, j), 0.0) << i << "," << j;
      }
}

struct Trained {
  GeneratedDataset ds;
  TrainResult model;
};

const Trained& syn1() {
  static Trained t = [] {
    Trained r;
    r.ds = generate_dataset(builtin_config("Syn1"));
    r.model = train(r.ds.graph, TrainConfig{});
    return r;
  }();
  return t;
}

}  // namespace

TEST(LocalView, ReproducesCenterOutput) {
  const auto& t = syn1();
  auto full = gcn_forward_cache(t.model.params, t.ds.graph.adj, t.ds.graph.x);
  for (int v = 0; v < t.ds.graph.n(); v += 5) {
    LocalView lv(t.ds.graph.adj, t.ds.graph.x, v, 3);
    auto loc = gcn_forward_cache(t.model.params, lv.adj, lv.x, &lv.extra_degree);
    EXPECT_TRUE(loc.probs.row(lv.center).isApprox(full.probs.row(v), 1e-12));
    EXPECT_TRUE(loc.h1.row(lv.center).isApprox(full.h1.row(v), 1e-12));
  }
}

TEST(Pgx, ZeroEpochsReturnsInit) {
  const auto& t = syn1();
  PgxConfig pc;
  pc.epochs = 0;
  pc.seed = 4;
  auto r = pgx_train(t.model.params, t.ds.graph, pc);
  auto init = pgx_init(static_cast<int>(t.model.params.w1.cols()), pc);
  EXPECT_EQ(r.params.w1, init.w1);
  EXPECT_EQ(r.params.w2, init.w2);
}

TEST(Pgx, SingleCandidateEdge) {
  Mat a = adjacency_from_edges(3, {{0, 1}});
  Mat x = Mat::Random(3, 3);
  auto f = random_params(3, 4, 2, 1);
  auto e = pgx_explain(random_pgx(4, 2), f, a, x, 0);
  ASSERT_EQ(e.candidates.size(), 1u);
  EXPECT_GT(e.importance(0, 1), 0.0);
  EXPECT_EQ(e.importance(0, 1), e.importance(1, 0));
  EXPECT_EQ((e.importance.array() != 0.0).count(), 2);
}

TEST(Pgx, TwinEdgesScoreEqually) {
  // leaves 1 and 2 are interchangeable
  Mat a = adjacency_from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  Mat x(4, 3);
  x << 0.1, 0.5, -0.2, 1.0, 0.0, 0.3, 1.0, 0.0, 0.3, -0.4, 0.2, 0.9;
  auto e = pgx_explain(random_pgx(4, 3), random_params(3, 4, 2, 3), a, x, 0);
  EXPECT_DOUBLE_EQ(e.importance(0, 1), e.importance(0, 2));
}

TEST(Pgx, RepeatedCallsIdentical) {
  const auto& t = syn1();
  auto lam = random_pgx(static_cast<int>(t.model.params.w1.cols()), 5);
  auto a = pgx_explain(lam, t.model.params, t.ds.graph.adj, t.ds.graph.x, 7);
  auto b = pgx_explain(lam, t.model.params, t.ds.graph.adj, t.ds.graph.x, 7);
  EXPECT_EQ(a.importance, b.importance);
  EXPECT_EQ(topk_edges(a.importance, a.candidates, 0.25), topk_edges(b.importance, b.candidates, 0.25));
}

TEST(Pgx, RelaxedScoresAreDifferentiable) {
  // total derivative of sum_e w_e * relaxed_e through both the gate and the embeddings
  Rng rng(6);
  const int n = 6;
  auto f = random_params(3, 5, 2, 6);
  auto lam = random_pgx(5, 7);
  Mat x = Mat::Random(n, 3);
  Mat a = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) a(i, j) = a(j, i) = uniform01(rng) < 0.5 ? 1.0 : uniform01(rng) * 0.6;
  std::vector<Edge> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  Vec w(static_cast<int>(pairs.size()));
  for (int e = 0; e < w.size(); ++e) w(e) = uniform01(rng) - 0.5;
  auto value = [&](const Mat& aw) {
    auto c = gcn_forward_cache(f, aw, x);
    return pgx_relaxed(lam, c.h1, aw, 0, pairs).value.dot(w);
  };
  auto c = gcn_forward_cache(f, a, x);
  auto rel = pgx_relaxed(lam, c.h1, a, 0, pairs);
  Mat pair = Mat::Zero(n, n);
  Mat dz = pgx_relaxed_backward(lam, rel, w, n, pair);
  pair += gcn_backward(f, x, c, Mat::Zero(n, 2), &dz).adj;
  for (auto [i, j] : pairs) {
    const double h = 1e-4;
    Mat ap = a, am = a;
    ap(i, j) = ap(j, i) = a(i, j) + h;
    am(i, j) = am(j, i) = a(i, j) - h;
    double fd = (value(ap) - value(am)) / (2 * h);
    EXPECT_LE(std::abs(pair(i, j) - fd), 1e-3 * std::max(std::abs(fd), std::abs(pair(i, j))) + 1e-8)
        << i << "," << j << " " << pair(i, j) << " vs " << fd;
  }
}

TEST(Pgx, JsonRoundTrip) {
  auto p = random_pgx(6, 9);
  auto back = pgx_from_json(nlohmann::json::parse(pgx_to_json(p).dump()));
  EXPECT_EQ(back.w1, p.w1);
  EXPECT_EQ(back.b1, p.b1);
  EXPECT_EQ(back.w2, p.w2);
  EXPECT_EQ(back.b2, p.b2);
}

// training objective averaged over a fixed set of concrete draws; single epochs are too noisy to compare
double expected_objective(const PgxParams& p, const GcnParams& f, const Graph& g, const PgxConfig& pc, int draws) {
  auto cache = gcn_forward_cache(f, g.adj, g.x);
  auto pred = predict_from_probs(cache.probs);
  Rng rng(77);
  double total = 0.0;
  for (int v = 0; v < g.n(); ++v) {
    auto cands = computation_subgraph(g.adj, v, pc.hops).edges;
    if (cands.empty()) continue;
    LocalView lv(g.adj, g.x, v, pc.hops + 1);
    auto sc = pgx_logits(p, cache.h1, v, cands);
    const int m = static_cast<int>(cands.size());
    for (int d = 0; d < draws; ++d) {
      Vec mask(m), sig(m), chain = Vec::Zero(m);
      for (int e = 0; e < m; ++e) {
        double u = std::clamp(uniform01(rng), 1e-6, 1.0 - 1e-6);
        mask(e) = sigmoid((std::log(u) - std::log(1.0 - u) + sc.logit(e)) / pc.t_end);
        sig(e) = sigmoid(sc.logit(e));
      }
      total += masked_graph_loss(f, lv, cands, mask, sig, chain, pred.labels[v], pc.size_coef, pc.entropy_coef).value;
    }
  }
  return total / (g.n() * draws);
}

TEST(Pgx, TrainingLowersLossOnToyGraph) {
  const auto& t = syn1();
  PgxConfig pc;
  pc.epochs = 10;
  pc.t_start = pc.t_end = 2.0;
  auto r = pgx_train(t.model.params, t.ds.graph, pc);
  ASSERT_EQ(r.epoch_loss.size(), 10u);
  for (double l : r.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  auto init = pgx_init(static_cast<int>(t.model.params.w1.cols()), pc);
  EXPECT_LT(expected_objective(r.params, t.model.params, t.ds.graph, pc, 20),
            expected_objective(init, t.model.params, t.ds.graph, pc, 20));
}

TEST(AllExplainers, ZeroOutsideComputationGraph) {
  const auto& t = syn1();
  const auto& g = t.ds.graph;
  auto lam = random_pgx(static_cast<int>(t.model.params.w1.cols()), 10);
  for (int v : {0, 13, 42}) {
    expect_zero_outside(pgx_explain(lam, t.model.params, g.adj, g.x, v));
    expect_zero_outside(gradcam_explain(t.model.params, g.adj, g.x, v));
    GnnExplainerConfig gc;
    gc.steps = 5;
    expect_zero_outside(gnnexplainer_explain(t.model.params, g.adj, g.x, v, gc).out);
    expect_zero_outside(random_explain(g.adj, v, 3));
  }
}

TEST(GradCam, ZeroModelAndSign) {
  const auto& t = syn1();
  const auto& g = t.ds.graph;
  GcnParams zero{Mat::Zero(g.d(), 8), Mat::Zero(8, 2)};
  EXPECT_EQ(gradcam_explain(zero, g.adj, g.x, 3).importance.cwiseAbs().maxCoeff(), 0.0);
  auto e = gradcam_explain(t.model.params, g.adj, g.x, 3);
  EXPECT_TRUE((e.importance.array() >= 0.0).all());
  EXPECT_GT(e.importance.maxCoeff(), 0.0);
}

TEST(GradCam, MatchesFullGraphGradient) {
  const auto& t = syn1();
  const auto& g = t.ds.graph;
  const int v = 10;
  auto c = gcn_forward_cache(t.model.params, g.adj, g.x);
  Mat up = Mat::Zero(g.n(), 2);
  up(v, argmax_row(c.probs, v)) = 1.0;
  Mat full = grad_wrt_adjacency(t.model.params, g.adj, g.x, up).cwiseAbs();
  auto e = gradcam_explain(t.model.params, g.adj, g.x, v);
  for (auto [i, j] : e.candidates) EXPECT_NEAR(e.importance(i, j), full(i, j), 1e-12);
}

TEST(GnnExplainer, ZeroStepsIsHalf) {
  const auto& t = syn1();
  GnnExplainerConfig gc;
  gc.steps = 0;
  auto r = gnnexplainer_explain(t.model.params, t.ds.graph.adj, t.ds.graph.x, 4, gc);
  for (auto [i, j] : r.out.candidates) EXPECT_DOUBLE_EQ(r.out.importance(i, j), 0.5);
}

TEST(GnnExplainer, Descends) {
  const auto& t = syn1();
  for (int v : {1, 8, 30, 55}) {
    auto r = gnnexplainer_explain(t.model.params, t.ds.graph.adj, t.ds.graph.x, v);
    EXPECT_LE(r.final_loss, r.initial_loss + 1e-6) << v;
  }
}

TEST(RandomExplainer, SeededAndSingleEdge) {
  const auto& t = syn1();
  auto a = random_explain(t.ds.graph.adj, 5, 11), b = random_explain(t.ds.graph.adj, 5, 11);
  EXPECT_EQ(a.importance, b.importance);
  EXPECT_NE(random_explain(t.ds.graph.adj, 5, 12).importance, a.importance);
  Mat one = adjacency_from_edges(3, {{1, 2}});
  auto e = random_explain(one, 1, 0);
  EXPECT_EQ(topk_edges(e.importance, e.candidates, 0.25), (std::vector<Edge>{{1, 2}}));
}

TEST(ExplanationJson, ListsCandidates) {
  Mat a = adjacency_from_edges(3, {{0, 1}, {1, 2}});
  auto e = random_explain(a, 0, 1);
  auto j = explanation_to_json(e);
  EXPECT_EQ(j["target"], 0);
  EXPECT_EQ(j["edges"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["edges"][0][2].get<double>(), e.importance(0, 1));
}
