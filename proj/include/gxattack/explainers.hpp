#pragma once

#include "gcn.hpp"
#include "graph.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace gxa {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ExplainerOutput {
  Mat importance;
  int target = -1;
  std::vector<Edge> candidates;
};

inline ExplainerOutput make_output(int n, int v, const std::vector<Edge>& cands, const Vec& scores) {
  ExplainerOutput out;
  out.importance = Mat::Zero(n, n);
  out.target = v;
  out.candidates = cands;
  for (size_t e = 0; e < cands.size(); ++e) {
    auto [i, j] = cands[e];
    out.importance(i, j) = out.importance(j, i) = scores(static_cast<int>(e));
  }
  return out;
}

// Induced ball around a node plus the degree mass it cannot see. With one hop
// more than the model depth, the center's output is reproduced exactly.
struct LocalView {
  std::vector<int> nodes;
  std::vector<int> local;  // global -> local index, -1 outside
  Mat adj;
  Mat x;
  Vec extra_degree;
  int center = 0;

  LocalView(const Mat& full_adj, const Mat& full_x, int v, int hops) {
    const int n = static_cast<int>(full_adj.rows());
    nodes = khop_nodes(full_adj, v, hops);
    local.assign(n, -1);
    for (size_t a = 0; a < nodes.size(); ++a) local[nodes[a]] = static_cast<int>(a);
    const int m = static_cast<int>(nodes.size());
    adj.resize(m, m);
    x.resize(m, full_x.cols());
    extra_degree.resize(m);
    for (int a = 0; a < m; ++a) {
      x.row(a) = full_x.row(nodes[a]);
      for (int b = 0; b < m; ++b) adj(a, b) = full_adj(nodes[a], nodes[b]);
      extra_degree(a) = full_adj.row(nodes[a]).sum() - adj.row(a).sum();
    }
    center = local[v];
  }
};

struct PgxConfig {
  int hidden_e = 64;
  int epochs = 10;
  double learning_rate = 0.003;
  double t_start = 5.0;
  double t_end = 2.0;
  double size_coef = 0.05;
  double entropy_coef = 0.1;
  int hops = 2;
  std::uint64_t seed = 0;
};

struct PgxParams {
  Mat w1;  // 3h x he
  Mat b1;  // 1 x he
  Mat w2;  // he x 1
  Mat b2;  // 1 x 1
  double t_start = 5.0, t_end = 2.0;
};

inline PgxParams pgx_init(int h, const PgxConfig& cfg) {
  Rng rng(derive_seed({cfg.seed, 0x7a1ULL}));
  PgxParams p;
  p.w1 = glorot(3 * h, cfg.hidden_e, rng);
  p.b1 = Mat::Zero(1, cfg.hidden_e);
  p.w2 = glorot(cfg.hidden_e, 1, rng);
  p.b2 = Mat::Zero(1, 1);
  p.t_start = cfg.t_start;
  p.t_end = cfg.t_end;
  return p;
}

// Edge logits l_e = (l(i,j) + l(j,i)) / 2 with l(a,b) = MLP([z_a, z_b, z_v]).
struct PgxScores {
  std::vector<Edge> pairs;
  int v = 0;
  Mat zi, zj, pre_ij, pre_ji;
  Eigen::RowVectorXd zv;
  Vec logit;
};

inline PgxScores pgx_logits(const PgxParams& p, const Mat& z, int v, const std::vector<Edge>& pairs) {
  const int h = static_cast<int>(z.cols());
  const int m = static_cast<int>(pairs.size());
  PgxScores s;
  s.pairs = pairs;
  s.v = v;
  s.zv = z.row(v);
  s.zi.resize(m, h);
  s.zj.resize(m, h);
  for (int e = 0; e < m; ++e) {
    s.zi.row(e) = z.row(pairs[e].first);
    s.zj.row(e) = z.row(pairs[e].second);
  }
  auto wa = p.w1.topRows(h), wb = p.w1.middleRows(h, h), wc = p.w1.bottomRows(h);
  Eigen::RowVectorXd bias = z.row(v) * wc + p.b1;
  s.pre_ij = (s.zi * wa + s.zj * wb).rowwise() + bias;
  s.pre_ji = (s.zj * wa + s.zi * wb).rowwise() + bias;
  Vec lij = s.pre_ij.cwiseMax(0.0) * p.w2;
  Vec lji = s.pre_ji.cwiseMax(0.0) * p.w2;
  s.logit = 0.5 * (lij + lji).array() + p.b2(0, 0);
  return s;
}

struct PgxBack {
  Mat dz;  // rows of the embedding matrix
  Mat dw1, db1, dw2, db2;
};

inline PgxBack pgx_logits_backward(const PgxParams& p, const PgxScores& s, const Vec& d_logit, int n,
                                   bool want_params) {
  const int h = static_cast<int>(s.zi.cols());
  auto wa = p.w1.topRows(h), wb = p.w1.middleRows(h, h), wc = p.w1.bottomRows(h);
  Vec dl = 0.5 * d_logit;
  Mat mij = (s.pre_ij.array() > 0.0).cast<double>().matrix();
  Mat mji = (s.pre_ji.array() > 0.0).cast<double>().matrix();
  Mat dhij = (dl * p.w2.transpose()).cwiseProduct(mij);
  Mat dhji = (dl * p.w2.transpose()).cwiseProduct(mji);
  Eigen::RowVectorXd dbias = (dhij + dhji).colwise().sum();
  PgxBack b;
  b.dz = Mat::Zero(n, h);
  Mat dzi = dhij * wa.transpose() + dhji * wb.transpose();
  Mat dzj = dhij * wb.transpose() + dhji * wa.transpose();
  for (size_t e = 0; e < s.pairs.size(); ++e) {
    b.dz.row(s.pairs[e].first) += dzi.row(static_cast<int>(e));
    b.dz.row(s.pairs[e].second) += dzj.row(static_cast<int>(e));
  }
  b.dz.row(s.v) += dbias * wc.transpose();
  if (want_params) {
    b.dw1.resize(3 * h, p.w1.cols());
    b.dw1.topRows(h) = s.zi.transpose() * dhij + s.zj.transpose() * dhji;
    b.dw1.middleRows(h, h) = s.zj.transpose() * dhij + s.zi.transpose() * dhji;
    b.db1 = dbias;
    b.dw2 = s.pre_ij.cwiseMax(0.0).transpose() * dl + s.pre_ji.cwiseMax(0.0).transpose() * dl;
    b.dw1.bottomRows(h) = s.zv.transpose() * dbias;
    b.db2 = Mat::Constant(1, 1, 2.0 * dl.sum());
  }
  return b;
}

inline double binary_entropy(double q) {
  q = std::clamp(q, 1e-12, 1.0 - 1e-12);
  return -(q * std::log(q) + (1.0 - q) * std::log(1.0 - q));
}

struct MaskedLoss {
  double value = 0.0;
  double ce = 0.0;
  Vec d_logit;
};

// Cross-entropy of the center's prediction on the mask-weighted local graph
// against class c, plus mean-mask size and mask entropy terms. `mask` holds
// edge weights; `sig` the deterministic sigmoid used by the regularizers and
// `dmask_dlogit` the chain factor from mask back to the edge logit.
inline MaskedLoss masked_graph_loss(const GcnParams& f, const LocalView& lv, const std::vector<Edge>& cands,
                                    const Vec& mask, const Vec& sig, const Vec& dmask_dlogit, int c,
                                    double size_coef, double ent_coef) {
  Mat aw = lv.adj;
  for (size_t e = 0; e < cands.size(); ++e) {
    int a = lv.local[cands[e].first], b = lv.local[cands[e].second];
    aw(a, b) = aw(b, a) = mask(static_cast<int>(e));
  }
  auto cache = gcn_forward_cache(f, aw, lv.x, &lv.extra_degree);
  const int m = static_cast<int>(cands.size());
  MaskedLoss out;
  out.ce = -std::log(std::max(cache.probs(lv.center, c), 1e-12));
  double size = sig.mean();
  double ent = 0.0;
  for (int e = 0; e < m; ++e) ent += binary_entropy(sig(e));
  ent /= m;
  out.value = out.ce + size_coef * size + ent_coef * ent;

  Mat d_logits = Mat::Zero(aw.rows(), cache.probs.cols());
  d_logits.row(lv.center) = cache.probs.row(lv.center);
  d_logits(lv.center, c) -= 1.0;
  if (cache.probs(lv.center, c) < 1e-12) d_logits.setZero();
  Mat g = gcn_backward(f, lv.x, cache, d_logits).adj;
  out.d_logit.resize(m);
  for (int e = 0; e < m; ++e) {
    int a = lv.local[cands[e].first], b = lv.local[cands[e].second];
    double q = std::clamp(sig(e), 1e-12, 1.0 - 1e-12);
    double dsig = q * (1.0 - q);
    out.d_logit(e) = g(a, b) * dmask_dlogit(e) + size_coef / m * dsig +
                     ent_coef / m * std::log((1.0 - q) / q) * dsig;
  }
  return out;
}

struct PgxTrainResult {
  PgxParams params;
  std::vector<double> epoch_loss;
};

inline PgxTrainResult pgx_train(const GcnParams& f, const Graph& g, const PgxConfig& cfg) {
  auto cache = gcn_forward_cache(f, g.adj, g.x);
  const Mat& z = cache.h1;
  auto pred = predict_from_probs(cache.probs);
  PgxTrainResult r;
  r.params = pgx_init(static_cast<int>(z.cols()), cfg);
  PgxParams& p = r.params;
  Adam opt(cfg.learning_rate);
  Rng rng(derive_seed({cfg.seed, 0x7a2ULL}));
  std::vector<int> order(g.n());
  std::iota(order.begin(), order.end(), 0);

  for (int ep = 0; ep < cfg.epochs; ++ep) {
    double frac = cfg.epochs > 1 ? static_cast<double>(ep) / (cfg.epochs - 1) : 0.0;
    double temp = cfg.t_start * std::pow(cfg.t_end / cfg.t_start, frac);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (int v : order) {
      auto cands = computation_subgraph(g.adj, v, cfg.hops).edges;
      if (cands.empty()) continue;
      LocalView lv(g.adj, g.x, v, cfg.hops + 1);
      auto sc = pgx_logits(p, z, v, cands);
      const int m = static_cast<int>(cands.size());
      Vec mask(m), sig(m), chain(m);
      for (int e = 0; e < m; ++e) {
        double u = std::clamp(uniform01(rng), 1e-6, 1.0 - 1e-6);
        mask(e) = sigmoid((std::log(u) - std::log(1.0 - u) + sc.logit(e)) / temp);
        chain(e) = mask(e) * (1.0 - mask(e)) / temp;
        sig(e) = sigmoid(sc.logit(e));
      }
      auto ml = masked_graph_loss(f, lv, cands, mask, sig, chain, pred.labels[v], cfg.size_coef, cfg.entropy_coef);
      if (!std::isfinite(ml.value)) throw std::runtime_error("non-finite explainer loss");
      total += ml.value;
      auto b = pgx_logits_backward(p, sc, ml.d_logit, g.n(), true);
      opt.step({&p.w1, &p.b1, &p.w2, &p.b2}, {b.dw1, b.db1, b.dw2, b.db2});
    }
    r.epoch_loss.push_back(total / g.n());
  }
  return r;
}

inline ExplainerOutput pgx_explain_with_embeddings(const PgxParams& p, const Mat& adj, const Mat& z, int v,
                                                   int hops = 2) {
  auto cands = computation_subgraph(adj, v, hops).edges;
  Vec scores(static_cast<int>(cands.size()));
  if (!cands.empty()) {
    auto sc = pgx_logits(p, z, v, cands);
    for (int e = 0; e < scores.size(); ++e) scores(e) = sigmoid(sc.logit(e));
  }
  return make_output(static_cast<int>(adj.rows()), v, cands, scores);
}

inline ExplainerOutput pgx_explain(const PgxParams& p, const GcnParams& f, const Mat& adj, const Mat& x, int v,
                                   int hops = 2) {
  if (v < 0 || v >= adj.rows()) throw std::out_of_range("node id");
  auto cache = gcn_forward_cache(f, adj, x);
  return pgx_explain_with_embeddings(p, adj, cache.h1, v, hops);
}

// Importance over a fixed pair set on a relaxed graph: M_e = aw_e * sigmoid(l_e),
// so pairs with zero weight contribute nothing and the unperturbed graph gives
// back the ordinary explanation.
struct PgxRelaxed {
  PgxScores scores;
  Vec weight;
  Vec sig;
  Vec value;
};

inline PgxRelaxed pgx_relaxed(const PgxParams& p, const Mat& z, const Mat& aw, int v, const std::vector<Edge>& pairs) {
  PgxRelaxed r;
  r.scores = pgx_logits(p, z, v, pairs);
  const int m = static_cast<int>(pairs.size());
  r.weight.resize(m);
  r.sig.resize(m);
  r.value.resize(m);
  for (int e = 0; e < m; ++e) {
    r.weight(e) = aw(pairs[e].first, pairs[e].second);
    r.sig(e) = sigmoid(r.scores.logit(e));
    r.value(e) = r.weight(e) * r.sig(e);
  }
  return r;
}

// Returns dL/dz; direct pair contributions are added into `pair_grad`.
inline Mat pgx_relaxed_backward(const PgxParams& p, const PgxRelaxed& r, const Vec& d_value, int n, Mat& pair_grad) {
  const int m = static_cast<int>(r.value.size());
  Vec d_logit(m);
  for (int e = 0; e < m; ++e) {
    auto [i, j] = r.scores.pairs[e];
    pair_grad(i, j) += d_value(e) * r.sig(e);
    pair_grad(j, i) += d_value(e) * r.sig(e);
    d_logit(e) = d_value(e) * r.weight(e) * r.sig(e) * (1.0 - r.sig(e));
  }
  return pgx_logits_backward(p, r.scores, d_logit, n, false).dz;
}

struct GnnExplainerConfig {
  int steps = 100;
  double learning_rate = 0.01;
  double size_coef = 0.05;
  double entropy_coef = 0.1;
  int hops = 2;
};

struct GnnExplainerOutput {
  ExplainerOutput out;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

inline GnnExplainerOutput gnnexplainer_explain(const GcnParams& f, const Mat& adj, const Mat& x, int v,
                                               const GnnExplainerConfig& cfg = {}) {
  auto cands = computation_subgraph(adj, v, cfg.hops).edges;
  const int m = static_cast<int>(cands.size());
  GnnExplainerOutput res;
  Mat w = Mat::Zero(m, 1);
  if (m == 0) {
    res.out = make_output(static_cast<int>(adj.rows()), v, cands, Vec());
    return res;
  }
  LocalView lv(adj, x, v, cfg.hops + 1);
  auto base = gcn_forward_cache(f, lv.adj, lv.x, &lv.extra_degree);
  int c = argmax_row(base.probs, lv.center);
  Adam opt(cfg.learning_rate);
  auto eval = [&](const Mat& wl) {
    Vec sig(m), chain(m);
    for (int e = 0; e < m; ++e) {
      sig(e) = sigmoid(wl(e, 0));
      chain(e) = sig(e) * (1.0 - sig(e));
    }
    return masked_graph_loss(f, lv, cands, sig, sig, chain, c, cfg.size_coef, cfg.entropy_coef);
  };
  for (int s = 0; s < cfg.steps; ++s) {
    auto ml = eval(w);
    if (s == 0) res.initial_loss = ml.value;
    opt.step({&w}, {Mat(ml.d_logit)});
  }
  auto last = eval(w);
  if (cfg.steps == 0) res.initial_loss = last.value;
  res.final_loss = last.value;
  Vec scores(m);
  for (int e = 0; e < m; ++e) scores(e) = sigmoid(w(e, 0));
  res.out = make_output(static_cast<int>(adj.rows()), v, cands, scores);
  return res;
}

// |d logit_c(v) / d a_ij| on the input graph, c the predicted class.
inline ExplainerOutput gradcam_explain(const GcnParams& f, const Mat& adj, const Mat& x, int v, int hops = 2) {
  auto cands = computation_subgraph(adj, v, hops).edges;
  LocalView lv(adj, x, v, hops + 1);
  auto cache = gcn_forward_cache(f, lv.adj, lv.x, &lv.extra_degree);
  int c = argmax_row(cache.probs, lv.center);
  Mat d_logits = Mat::Zero(lv.adj.rows(), cache.probs.cols());
  d_logits(lv.center, c) = 1.0;
  Mat g = gcn_backward(f, lv.x, cache, d_logits).adj;
  Vec scores(static_cast<int>(cands.size()));
  for (size_t e = 0; e < cands.size(); ++e)
    scores(static_cast<int>(e)) = std::abs(g(lv.local[cands[e].first], lv.local[cands[e].second]));
  return make_output(static_cast<int>(adj.rows()), v, cands, scores);
}

inline ExplainerOutput random_explain(const Mat& adj, int v, std::uint64_t seed, int hops = 2) {
  auto cands = computation_subgraph(adj, v, hops).edges;
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(v), 0x4a3ULL}));
  Vec scores(static_cast<int>(cands.size()));
  for (int e = 0; e < scores.size(); ++e) scores(e) = uniform01(rng);
  return make_output(static_cast<int>(adj.rows()), v, cands, scores);
}

inline nlohmann::json explanation_to_json(const ExplainerOutput& o) {
  auto items = nlohmann::json::array();
  for (auto [i, j] : o.candidates) items.push_back({i, j, o.importance(i, j)});
  return {{"target", o.target}, {"edges", items}};
}

inline nlohmann::json pgx_to_json(const PgxParams& p) {
  return {{"w1", matrix_to_json(p.w1)}, {"b1", matrix_to_json(p.b1)}, {"w2", matrix_to_json(p.w2)},
          {"b2", matrix_to_json(p.b2)}, {"t_start", p.t_start},      {"t_end", p.t_end}};
}

inline PgxParams pgx_from_json(const nlohmann::json& j) {
  PgxParams p;
  p.w1 = matrix_from_json(j.at("w1"));
  p.b1 = matrix_from_json(j.at("b1"));
  p.w2 = matrix_from_json(j.at("w2"));
  p.b2 = matrix_from_json(j.at("b2"));
  p.t_start = j.at("t_start");
  p.t_end = j.at("t_end");
  return p;
}

}  // namespace gxa
