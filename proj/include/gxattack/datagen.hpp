#pragma once

#include "graph.hpp"
#include "rng.hpp"

#include <map>
#include <random>
#include <stdexcept>
#include <string>

namespace gxa {

enum class Shape { House, Circle };

inline std::string shape_name(Shape s) { return s == Shape::House ? "house" : "circle"; }

inline Shape shape_from_name(const std::string& s) {
  if (s == "house" || s == "House") return Shape::House;
  if (s == "circle" || s == "Circle") return Shape::Circle;
  throw std::invalid_argument("unknown shape: " + s);
}

struct SynConfig {
  Shape shape = Shape::House;
  int num_subgraphs = 50;
  int subgraph_size = 6;
  double p_connection = 0.06;
  int num_classes = 2;
  std::uint64_t seed = 0;
  int max_budget = 15;
  // generator knobs shared by all builtin configs
  int feature_dim = 10;
  double feature_sigma = 0.1;
  double class_shift = 1.0;
  double fill_p = 0.1;
  bool signal_all_motif = false;
};

struct Motif {
  int size;
  int anchor;  // node that carries the class signal
  std::vector<Edge> edges;
};

inline Motif motif_for(Shape s) {
  if (s == Shape::House) return {5, 4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}}};
  return {6, 0, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}}};
}

struct GeneratedDataset {
  Graph graph;
  Mat ground_truth;
  std::vector<int> motif_id;  // -1 for fill nodes
  SynConfig config;
};

inline std::map<std::string, SynConfig> builtin_configs() {
  auto mk = [](Shape s, int k, int size, double p, int budget) {
    SynConfig c;
    c.shape = s;
    c.num_subgraphs = k;
    c.subgraph_size = size;
    c.p_connection = p;
    c.max_budget = budget;
    return c;
  };
  return {
      {"Syn1", mk(Shape::House, 10, 6, 0.30, 10)},  {"Syn2", mk(Shape::House, 50, 6, 0.06, 15)},
      {"Syn3", mk(Shape::House, 50, 10, 0.06, 15)}, {"Syn4", mk(Shape::Circle, 50, 10, 0.06, 15)},
      {"Syn5", mk(Shape::House, 50, 10, 0.12, 15)}, {"Syn6", mk(Shape::House, 50, 10, 0.20, 15)},
      {"Syn7", mk(Shape::House, 100, 10, 0.06, 15)},
  };
}

inline SynConfig builtin_config(const std::string& name) {
  auto all = builtin_configs();
  auto it = all.find(name);
  if (it == all.end()) throw std::out_of_range("unknown dataset: " + name);
  return it->second;
}

// Every subgraph draws one class shared by all of its nodes. Only the motif
// anchor sees the class in its features, so the model has to route that
// signal over motif edges to label the rest of the subgraph.
inline GeneratedDataset generate_dataset(const SynConfig& cfg) {
  const Motif motif = motif_for(cfg.shape);
  if (cfg.subgraph_size < motif.size) throw std::invalid_argument("motif larger than subgraph");
  if (cfg.num_subgraphs < 1 || cfg.num_classes < 2) throw std::invalid_argument("invalid config");
  if (cfg.num_classes > cfg.feature_dim) throw std::invalid_argument("more classes than feature dims");

  Rng rng(derive_seed({cfg.seed, 0x5e9ULL}));
  const int size = cfg.subgraph_size;
  const int n = cfg.num_subgraphs * size;

  GeneratedDataset ds;
  ds.config = cfg;
  Mat adj = Mat::Zero(n, n);
  ds.ground_truth = Mat::Zero(n, n);
  ds.motif_id.assign(n, -1);

  for (int s = 0; s < cfg.num_subgraphs; ++s) {
    const int base = s * size;
    for (auto [i, j] : motif.edges) {
      adj(base + i, base + j) = adj(base + j, base + i) = 1.0;
      ds.ground_truth(base + i, base + j) = ds.ground_truth(base + j, base + i) = 1.0;
    }
    for (int i = 0; i < motif.size; ++i) ds.motif_id[base + i] = s;
    for (int f = motif.size; f < size; ++f) {
      int t = uniform_int(rng, 0, f - 1);
      adj(base + f, base + t) = adj(base + t, base + f) = 1.0;
      for (int t2 = motif.size; t2 < f; ++t2)
        if (adj(base + f, base + t2) == 0.0 && uniform01(rng) < cfg.fill_p)
          adj(base + f, base + t2) = adj(base + t2, base + f) = 1.0;
    }
  }
  for (int s = 0; s < cfg.num_subgraphs; ++s)
    for (int t = 0; t < cfg.num_subgraphs; ++t) {
      if (s == t || uniform01(rng) >= cfg.p_connection) continue;
      int i = s * size + uniform_int(rng, 0, size - 1);
      int j = t * size + uniform_int(rng, 0, size - 1);
      adj(i, j) = adj(j, i) = 1.0;
    }

  Graph& g = ds.graph;
  g.adj = adj;
  g.num_classes = cfg.num_classes;
  g.y.assign(n, 0);
  g.x = Mat::Zero(n, cfg.feature_dim);
  std::normal_distribution<double> noise(0.0, cfg.feature_sigma);
  for (int s = 0; s < cfg.num_subgraphs; ++s) {
    int c = uniform_int(rng, 0, cfg.num_classes - 1);
    for (int i = 0; i < size; ++i) g.y[s * size + i] = c;
  }
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < cfg.feature_dim; ++k) g.x(i, k) = noise(rng);
  for (int s = 0; s < cfg.num_subgraphs; ++s) {
    for (int i = 0; i < motif.size; ++i) {
      if (!cfg.signal_all_motif && i != motif.anchor) continue;
      int a = s * size + i;
      g.x(a, g.y[a]) += cfg.class_shift;
    }
  }
  g.validate();
  return ds;
}

// Motif edges inside v's computation subgraph: the per-node explanation target.
inline std::vector<Edge> node_ground_truth(const Mat& adj, const Mat& gt, int v, int hops = 2) {
  std::vector<Edge> out;
  for (auto e : computation_subgraph(adj, v, hops).edges)
    if (gt(e.first, e.second) != 0.0) out.push_back(e);
  return out;
}

inline nlohmann::json config_to_json(const SynConfig& c) {
  return {{"shape", shape_name(c.shape)},   {"num_subgraphs", c.num_subgraphs},
          {"subgraph_size", c.subgraph_size}, {"p_connection", c.p_connection},
          {"num_classes", c.num_classes},     {"seed", c.seed},
          {"max_budget", c.max_budget},       {"feature_dim", c.feature_dim},
          {"feature_sigma", c.feature_sigma}, {"class_shift", c.class_shift},
          {"fill_p", c.fill_p}};
}

inline nlohmann::json dataset_to_json(const GeneratedDataset& ds) {
  nlohmann::json j = graph_to_json(ds.graph);
  auto gt = nlohmann::json::array();
  for (int i = 0; i < ds.ground_truth.rows(); ++i)
    for (int k = i + 1; k < ds.ground_truth.cols(); ++k)
      if (ds.ground_truth(i, k) != 0.0) gt.push_back({i, k});
  j["ground_truth"] = gt;
  j["motif_id"] = ds.motif_id;
  j["config"] = config_to_json(ds.config);
  return j;
}

inline GeneratedDataset dataset_from_json(const nlohmann::json& j) {
  GeneratedDataset ds;
  ds.graph = graph_from_json(j);
  std::vector<Edge> gt;
  for (auto& e : j.at("ground_truth")) gt.push_back(make_edge(e.at(0).get<int>(), e.at(1).get<int>()));
  ds.ground_truth = adjacency_from_edges(ds.graph.n(), gt);
  ds.motif_id = j.at("motif_id").get<std::vector<int>>();
  if (j.contains("config")) {
    const auto& c = j["config"];
    ds.config.shape = shape_from_name(c.at("shape").get<std::string>());
    ds.config.num_subgraphs = c.at("num_subgraphs");
    ds.config.subgraph_size = c.at("subgraph_size");
    ds.config.p_connection = c.at("p_connection");
    ds.config.num_classes = c.at("num_classes");
    ds.config.seed = c.at("seed");
    ds.config.max_budget = c.at("max_budget");
    ds.config.feature_dim = c.at("feature_dim");
    ds.config.feature_sigma = c.at("feature_sigma");
    ds.config.class_shift = c.at("class_shift");
    ds.config.fill_p = c.at("fill_p");
  }
  return ds;
}

}  // namespace gxa
