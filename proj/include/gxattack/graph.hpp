#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

namespace gxa {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// undirected edge, always stored with first < second
using Edge = std::pair<int, int>;

inline Edge make_edge(int i, int j) { return i < j ? Edge{i, j} : Edge{j, i}; }

struct Graph {
  Mat adj;
  Mat x;
  std::vector<int> y;
  int num_classes = 2;

  int n() const { return static_cast<int>(adj.rows()); }
  int d() const { return static_cast<int>(x.cols()); }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (int i = 0; i < n(); ++i)
      for (int j = i + 1; j < n(); ++j)
        if (adj(i, j) != 0.0) out.emplace_back(i, j);
    return out;
  }

  int degree(int v) const {
    int k = 0;
    for (int j = 0; j < n(); ++j) k += adj(v, j) != 0.0;
    return k;
  }

  void validate() const {
    if (adj.rows() != adj.cols()) throw std::invalid_argument("adjacency not square");
    if (x.rows() != adj.rows()) throw std::invalid_argument("feature rows != n");
    if (static_cast<int>(y.size()) != n()) throw std::invalid_argument("label count != n");
    for (int i = 0; i < n(); ++i) {
      if (adj(i, i) != 0.0) throw std::invalid_argument("nonzero diagonal");
      for (int j = i + 1; j < n(); ++j) {
        if (adj(i, j) != adj(j, i)) throw std::invalid_argument("asymmetric adjacency");
        if (adj(i, j) != 0.0 && adj(i, j) != 1.0) throw std::invalid_argument("non-binary adjacency");
      }
    }
    for (int c : y)
      if (c < 0 || c >= num_classes) throw std::invalid_argument("label out of range");
  }
};

inline Mat adjacency_from_edges(int n, const std::vector<Edge>& edges) {
  Mat a = Mat::Zero(n, n);
  for (auto [i, j] : edges) {
    if (i == j) throw std::invalid_argument("self loop");
    a(i, j) = a(j, i) = 1.0;
  }
  return a;
}

// Normalization of a (possibly fractional) adjacency with self loops.
// `extra_degree` lets a local view carry degree mass from edges it does not store.
struct Normalized {
  Mat a_hat;    // aw + I
  Vec s;        // d^{-1/2}
  Mat a_tilde;
};

inline Normalized normalize_full(const Mat& aw, const Vec* extra_degree = nullptr) {
  Normalized r;
  r.a_hat = aw;
  r.a_hat.diagonal().array() += 1.0;
  Vec deg = r.a_hat.rowwise().sum();
  if (extra_degree) deg += *extra_degree;
  r.s = deg.array().rsqrt();
  r.a_tilde = r.s.asDiagonal() * r.a_hat * r.s.asDiagonal();
  return r;
}

inline Mat normalize_adjacency(const Mat& a) { return normalize_full(a).a_tilde; }

// Given dL/dA_tilde, return dL/dw for the symmetric pair variable w = aw(i,j) = aw(j,i).
// The result is symmetric with zero diagonal.
inline Mat normalize_backward(const Normalized& nz, const Mat& g_tilde) {
  const Vec& s = nz.s;
  const Eigen::Index n = s.size();
  // ds_i = sum_j (G_ij + G_ji) Ahat_ij s_j, Ahat symmetric
  Mat gs = g_tilde + g_tilde.transpose();
  Vec ds = Vec::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      double a = nz.a_hat(i, j);
      if (a == 0.0) continue;
      ds(i) += gs(i, j) * a * s(j);
    }
  Vec dd = -0.5 * ds.cwiseProduct(s.cwiseProduct(s).cwiseProduct(s));
  // d_i = sum_j Ahat_ij, so dAhat_ij picks up dd_i
  Mat pair(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) pair(i, j) = s(i) * s(j) * gs(i, j) + dd(i) + dd(j);
  pair.diagonal().setZero();
  return pair;
}

inline Mat apply_perturbation_relaxed(const Mat& a, const Mat& p) {
  if (a.rows() != p.rows() || a.cols() != p.cols()) throw std::invalid_argument("shape mismatch");
  return a + p.cwiseProduct((1.0 - 2.0 * a.array()).matrix());
}

inline Mat apply_perturbation_discrete(const Mat& a, const Mat& p) {
  if (a.rows() != p.rows() || a.cols() != p.cols()) throw std::invalid_argument("shape mismatch");
  for (int i = 0; i < p.rows(); ++i) {
    if (p(i, i) != 0.0) throw std::invalid_argument("perturbation touches diagonal");
    for (int j = i + 1; j < p.cols(); ++j)
      if (p(i, j) != p(j, i)) throw std::invalid_argument("asymmetric perturbation");
  }
  return a + p.cwiseProduct((1.0 - 2.0 * a.array()).matrix());
}

inline Mat flip_edges(const Mat& a, const std::vector<Edge>& flips) {
  Mat out = a;
  for (auto [i, j] : flips) out(i, j) = out(j, i) = 1.0 - out(i, j);
  return out;
}

struct Subgraph {
  std::vector<int> nodes;   // sorted
  std::vector<Edge> edges;  // lexicographic
};

inline std::vector<int> khop_nodes(const Mat& adj, int v, int hops) {
  const int n = static_cast<int>(adj.rows());
  std::vector<int> dist(n, -1);
  std::queue<int> q;
  dist[v] = 0;
  q.push(v);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    if (dist[u] == hops) continue;
    for (int w = 0; w < n; ++w)
      if (adj(u, w) != 0.0 && dist[w] < 0) {
        dist[w] = dist[u] + 1;
        q.push(w);
      }
  }
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (dist[i] >= 0) out.push_back(i);
  return out;
}

inline Subgraph computation_subgraph(const Mat& adj, int v, int hops = 2) {
  if (v < 0 || v >= adj.rows()) throw std::out_of_range("node id");
  Subgraph sg;
  sg.nodes = khop_nodes(adj, v, hops);
  for (size_t a = 0; a < sg.nodes.size(); ++a)
    for (size_t b = a + 1; b < sg.nodes.size(); ++b)
      if (adj(sg.nodes[a], sg.nodes[b]) != 0.0) sg.edges.emplace_back(sg.nodes[a], sg.nodes[b]);
  return sg;
}

// Highest-scoring ceil(k * |candidates|) edges; ties resolved by (i, j) order.
inline std::vector<Edge> topk_edges(const Mat& scores, std::vector<Edge> candidates, double k_fraction) {
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw std::invalid_argument("k_fraction must be in (0,1]");
  if (candidates.empty()) return {};
  std::sort(candidates.begin(), candidates.end());
  auto count = static_cast<size_t>(std::ceil(k_fraction * static_cast<double>(candidates.size()) - 1e-12));
  count = std::min(count, candidates.size());
  std::stable_sort(candidates.begin(), candidates.end(), [&](const Edge& a, const Edge& b) {
    return scores(a.first, a.second) > scores(b.first, b.second);
  });
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

inline Mat topk_binarize(const Mat& scores, const std::vector<Edge>& candidates, double k_fraction) {
  Mat out = Mat::Zero(scores.rows(), scores.cols());
  for (auto [i, j] : topk_edges(scores, candidates, k_fraction)) out(i, j) = out(j, i) = 1.0;
  return out;
}

inline nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["n"] = g.n();
  j["d"] = g.d();
  j["C"] = g.num_classes;
  auto edges = nlohmann::json::array();
  for (auto [a, b] : g.edges()) edges.push_back({a, b});
  j["edges"] = edges;
  auto feats = nlohmann::json::array();
  for (int i = 0; i < g.x.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (int k = 0; k < g.x.cols(); ++k) row.push_back(g.x(i, k));
    feats.push_back(row);
  }
  j["features"] = feats;
  j["labels"] = g.y;
  return j;
}

inline Graph graph_from_json(const nlohmann::json& j) {
  Graph g;
  int n = j.at("n").get<int>();
  int d = j.at("d").get<int>();
  g.num_classes = j.at("C").get<int>();
  std::vector<Edge> edges;
  for (auto& e : j.at("edges")) edges.push_back(make_edge(e.at(0).get<int>(), e.at(1).get<int>()));
  g.adj = adjacency_from_edges(n, edges);
  g.x = Mat::Zero(n, d);
  const auto& f = j.at("features");
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) g.x(i, k) = f.at(i).at(k).get<double>();
  g.y = j.at("labels").get<std::vector<int>>();
  g.validate();
  return g;
}

}  // namespace gxa
