#include <gxattack/datagen.hpp>
#include <gxattack/gcn.hpp>

#include <gtest/gtest.h>

#include <set>

using namespace gxa;

namespace {

int undirected(const Mat& a) { return static_cast<int>(a.sum() / 2.0 + 0.5); }

bool connected_edge_set(const std::vector<Edge>& edges) {
  if (edges.empty()) return true;
  std::set<int> seen = {edges[0].first};
  bool grew = true;
  while (grew) {
    grew = false;
    for (auto [i, j] : edges)
      if (seen.count(i) != seen.count(j)) {
        seen.insert(i);
        seen.insert(j);
        grew = true;
      }
  }
  for (auto [i, j] : edges)
    if (!seen.count(i)) return false;
  return true;
}

}  // namespace

TEST(Builtins, MatchDatasetTable) {
  auto all = builtin_configs();
  ASSERT_EQ(all.size(), 7u);
  int subgraphs[] = {10, 50, 50, 50, 50, 50, 100};
  int sizes[] = {6, 6, 10, 10, 10, 10, 10};
  double probs[] = {0.3, 0.06, 0.06, 0.06, 0.12, 0.20, 0.06};
  int budgets[] = {10, 15, 15, 15, 15, 15, 15};
  for (int k = 0; k < 7; ++k) {
    auto c = all.at("Syn" + std::to_string(k + 1));
    EXPECT_EQ(c.num_subgraphs, subgraphs[k]);
    EXPECT_EQ(c.subgraph_size, sizes[k]);
    EXPECT_DOUBLE_EQ(c.p_connection, probs[k]);
    EXPECT_EQ(c.max_budget, budgets[k]);
    EXPECT_EQ(c.num_classes, 2);
    EXPECT_EQ(c.shape, k == 3 ? Shape::Circle : Shape::House);
  }
}

TEST(Builtins, Lookup) {
  EXPECT_EQ(builtin_config("Syn4").shape, Shape::Circle);
  EXPECT_DOUBLE_EQ(builtin_config("Syn6").p_connection, 0.20);
  EXPECT_THROW(builtin_config("Syn9"), std::out_of_range);
}

TEST(Motifs, Shapes) {
  auto h = motif_for(Shape::House);
  EXPECT_EQ(h.size, 5);
  EXPECT_EQ(h.edges.size(), 6u);
  auto c = motif_for(Shape::Circle);
  EXPECT_EQ(c.size, 6);
  EXPECT_EQ(c.edges.size(), 6u);
}

TEST(Generate, Syn1Magnitudes) {
  // 59 nodes and about 164 directed edges (82 undirected) in the reference table
  double total = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto c = builtin_config("Syn1");
    c.seed = s;
    auto ds = generate_dataset(c);
    EXPECT_EQ(ds.graph.n(), 60);
    total += 2 * undirected(ds.graph.adj);
  }
  double mean = total / 10.0;
  EXPECT_GT(mean, 164 * 0.8);
  EXPECT_LT(mean, 164 * 1.2);
}

TEST(Generate, Syn2Magnitudes) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto c = builtin_config("Syn2");
    c.seed = s;
    auto ds = generate_dataset(c);
    EXPECT_EQ(ds.graph.n(), 300);
    double avg_deg = ds.graph.adj.sum() / ds.graph.n();
    EXPECT_GE(avg_deg, 2.5) << s;
    EXPECT_LE(avg_deg, 4.0) << s;
    int directed = 2 * undirected(ds.graph.adj);
    EXPECT_GT(directed, 970 * 0.8);
    EXPECT_LT(directed, 970 * 1.2);
  }
}

TEST(Generate, GroundTruthInvariants) {
  for (auto name : {"Syn1", "Syn2", "Syn4", "Syn6"}) {
    auto c = builtin_config(name);
    c.seed = 3;
    auto ds = generate_dataset(c);
    const Mat& gt = ds.ground_truth;
    EXPECT_EQ(gt, gt.transpose());
    EXPECT_TRUE((gt.array() <= ds.graph.adj.array()).all()) << name;
    const int size = c.subgraph_size;
    for (int s = 0; s < c.num_subgraphs; ++s) {
      std::vector<Edge> edges;
      for (int i = s * size; i < (s + 1) * size; ++i)
        for (int j = i + 1; j < (s + 1) * size; ++j)
          if (gt(i, j) != 0.0) edges.emplace_back(i, j);
      EXPECT_EQ(edges.size(), motif_for(c.shape).edges.size());
      EXPECT_TRUE(connected_edge_set(edges));
    }
    EXPECT_EQ(undirected(gt), static_cast<int>(c.num_subgraphs * motif_for(c.shape).edges.size()));
  }
}

TEST(Generate, SingleSubgraphIsolated) {
  SynConfig c;
  c.num_subgraphs = 1;
  c.subgraph_size = 8;
  c.p_connection = 1e-9;
  auto ds = generate_dataset(c);
  EXPECT_EQ(ds.graph.n(), 8);
  EXPECT_EQ(undirected(ds.ground_truth), 6);
  for (auto [i, j] : motif_for(Shape::House).edges) EXPECT_EQ(ds.ground_truth(i, j), 1.0);
}

TEST(Generate, Deterministic) {
  auto c = builtin_config("Syn2");
  c.seed = 42;
  auto a = generate_dataset(c), b = generate_dataset(c);
  EXPECT_EQ(a.graph.adj, b.graph.adj);
  EXPECT_EQ(a.graph.x, b.graph.x);
  EXPECT_EQ(a.graph.y, b.graph.y);
  c.seed = 43;
  EXPECT_NE(generate_dataset(c).graph.adj, a.graph.adj);
}

TEST(Generate, RejectsInfeasible) {
  SynConfig c;
  c.subgraph_size = 4;
  EXPECT_THROW(generate_dataset(c), std::invalid_argument);
  c = SynConfig{};
  c.shape = Shape::Circle;
  c.subgraph_size = 5;
  EXPECT_THROW(generate_dataset(c), std::invalid_argument);
}

TEST(Generate, LabelsLearnable) {
  for (auto name : {"Syn1", "Syn2"}) {
    auto c = builtin_config(name);
    c.seed = 1;
    auto ds = generate_dataset(c);
    auto r = train(ds.graph, TrainConfig{});
    EXPECT_GE(r.accuracy, 0.85) << name;
  }
}

TEST(Generate, NodeGroundTruthStaysInBall) {
  auto c = builtin_config("Syn2");
  auto ds = generate_dataset(c);
  for (int v = 0; v < 30; ++v) {
    auto sg = computation_subgraph(ds.graph.adj, v, 2);
    std::set<Edge> ball(sg.edges.begin(), sg.edges.end());
    for (auto e : node_ground_truth(ds.graph.adj, ds.ground_truth, v)) {
      EXPECT_TRUE(ball.count(e));
      EXPECT_EQ(ds.ground_truth(e.first, e.second), 1.0);
    }
  }
}

TEST(DatasetJson, RoundTrip) {
  auto c = builtin_config("Syn1");
  auto ds = generate_dataset(c);
  auto back = dataset_from_json(nlohmann::json::parse(dataset_to_json(ds).dump()));
  EXPECT_EQ(back.graph.adj, ds.graph.adj);
  EXPECT_EQ(back.graph.x, ds.graph.x);
  EXPECT_EQ(back.ground_truth, ds.ground_truth);
  EXPECT_EQ(back.motif_id, ds.motif_id);
  EXPECT_EQ(back.config.seed, ds.config.seed);
}
