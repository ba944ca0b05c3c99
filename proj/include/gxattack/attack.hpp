#pragma once

#include "explainers.hpp"
#include "gcn.hpp"
#include "graph.hpp"
#include "metrics.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

namespace gxa {

// What the explanation term compares the relaxed explanation against.
// TopKMask uses the binarized explanatory subgraph of the clean graph; Soft
// uses the raw importance matrix. With Soft the objective starts at a
// stationary point (both terms have zero gradient at P = 0).
enum class Reference { TopKMask, Soft };

struct AttackConfig {
  int budget = 15;
  int min_budget = 5;
  int epochs = 100;
  double step_size = 0.1;
  double beta = 0.1;
  int sample_trials = 2000;
  std::uint64_t seed = 0;
  bool restrict_to_ball = false;
  int hops = 2;
  double k_fraction = 0.25;
  Reference reference = Reference::TopKMask;
};

inline double loss_term_pred(const Vec& p_orig, const Vec& q) {
  double s = 0.0;
  for (int c = 0; c < p_orig.size(); ++c) s += p_orig(c) * std::log(std::max(q(c), 1e-12));
  return s;
}

struct ExplTerm {
  double value = 1.0;
  bool zero_norm = false;
};

// cosine distance between two importance matrices (or pair vectors)
inline ExplTerm loss_term_expl(const Mat& m, const Mat& m_hat) {
  auto c = cosine_checked(m, m_hat);
  if (c.zero_norm) return {1.0, true};
  return {1.0 - c.value, false};
}

// Euclidean projection onto {0 <= s <= 1, sum s <= budget}.
inline Vec project_budget(const Vec& p, double budget) {
  auto clipped_sum = [&](double mu) { return (p.array() - mu).cwiseMax(0.0).cwiseMin(1.0).sum(); };
  if (clipped_sum(0.0) <= budget) return p.cwiseMax(0.0).cwiseMin(1.0);
  double lo = 0.0, hi = std::max(p.maxCoeff(), 0.0);
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double s = clipped_sum(mid);
    if (s > budget)
      lo = mid;
    else
      hi = mid;
    if (s <= budget && budget - s <= 1e-8) break;
  }
  if (clipped_sum(hi) > budget) throw std::logic_error("budget bisection failed");
  return (p.array() - hi).cwiseMax(0.0).cwiseMin(1.0);
}

inline Vec upper_values(const Mat& m) {
  const int n = static_cast<int>(m.rows());
  Vec out(static_cast<Eigen::Index>(n) * (n - 1) / 2);
  Eigen::Index k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out(k++) = m(i, j);
  return out;
}

inline Mat from_upper(const Vec& u, int n) {
  Mat m = Mat::Zero(n, n);
  Eigen::Index k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = m(j, i) = u(k++);
  return m;
}

inline Mat project_budget(const Mat& p, double budget) {
  return from_upper(project_budget(upper_values(p), budget), static_cast<int>(p.rows()));
}

struct SampleResult {
  std::vector<int> chosen;  // indices into the probability list
  bool below_min = false;
  int draws = 0;
};

// Draws independent Bernoulli vectors until one has between min_budget and
// budget ones. Otherwise falls back to the best-scoring draw within budget
// (higher score, then more ones, then earliest).
inline SampleResult bernoulli_sample_list(const std::vector<double>& probs, int budget, int min_budget, int trials,
                                          Rng& rng, const std::function<double(const std::vector<int>&)>& score = {}) {
  SampleResult best;
  best.below_min = true;
  double best_score = -INFINITY;
  bool have = false;
  std::map<std::vector<int>, double> seen;
  for (int t = 0; t < trials; ++t) {
    std::vector<int> pick;
    for (size_t k = 0; k < probs.size(); ++k)
      if (probs[k] > 0.0 && uniform01(rng) < probs[k]) pick.push_back(static_cast<int>(k));
    const int c = static_cast<int>(pick.size());
    if (c > budget) continue;
    if (c >= min_budget) return {pick, false, t + 1};
    double s = 0.0;
    if (score) {
      auto it = seen.find(pick);
      s = it != seen.end() ? it->second : (seen[pick] = score(pick));
    }
    if (!have || s > best_score || (s == best_score && c > static_cast<int>(best.chosen.size()))) {
      best.chosen = pick;
      best_score = s;
      have = true;
    }
  }
  best.draws = trials;
  return best;
}

inline std::pair<Mat, bool> bernoulli_sample(const Mat& p, int budget, int min_budget, int trials, std::uint64_t seed) {
  const int n = static_cast<int>(p.rows());
  std::vector<double> probs;
  std::vector<Edge> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (p(i, j) > 0.0) {
        probs.push_back(p(i, j));
        pairs.emplace_back(i, j);
      }
  Rng rng(derive_seed({seed, 0xb3eULL}));
  auto r = bernoulli_sample_list(probs, budget, min_budget, trials, rng);
  Mat out = Mat::Zero(n, n);
  for (int k : r.chosen) out(pairs[k].first, pairs[k].second) = out(pairs[k].second, pairs[k].first) = 1.0;
  return {out, r.below_min};
}

struct LossEval {
  double value = 0.0, term1 = 0.0, term2 = 0.0;
  bool zero_norm = false;
  Mat grad;  // d value / d P, symmetric, zero diagonal
};

// Everything frozen on the clean graph for one target node.
class AttackProblem {
 public:
  AttackProblem(const GcnParams& f, const PgxParams& g, const Mat& adj, const Mat& x, int v, const AttackConfig& cfg)
      : f_(f), g_(g), adj_(adj), x_(x), v_(v), beta_(cfg.beta) {
    if (v < 0 || v >= adj.rows()) throw std::out_of_range("node id");
    clean_ = gcn_forward_cache(f, adj, x);
    p_orig_ = clean_.probs.row(v).transpose();
    explanation_ = pgx_explain_with_embeddings(g, adj, clean_.h1, v, cfg.hops);
    Mat ref = cfg.reference == Reference::Soft
                  ? explanation_.importance
                  : topk_binarize(explanation_.importance, explanation_.candidates, cfg.k_fraction);
    auto nodes = khop_nodes(adj, v, cfg.hops);
    for (size_t a = 0; a < nodes.size(); ++a)
      for (size_t b = a + 1; b < nodes.size(); ++b) pairs_.emplace_back(nodes[a], nodes[b]);
    ref_.resize(static_cast<int>(pairs_.size()));
    for (size_t e = 0; e < pairs_.size(); ++e) ref_(static_cast<int>(e)) = ref(pairs_[e].first, pairs_[e].second);
    if (cfg.restrict_to_ball) {
      allowed_ = Mat::Zero(adj.rows(), adj.cols());
      for (auto [i, j] : pairs_) allowed_(i, j) = allowed_(j, i) = 1.0;
    }
  }

  LossEval evaluate(const Mat& p, bool want_grad) const {
    LossEval r;
    Mat aw = apply_perturbation_relaxed(adj_, p);
    auto cache = gcn_forward_cache(f_, aw, x_);
    Vec q = cache.probs.row(v_).transpose();
    r.term1 = loss_term_pred(p_orig_, q);

    auto rel = pgx_relaxed(g_, cache.h1, aw, v_, pairs_);
    double nr = ref_.norm(), nm = rel.value.norm();
    double cos = 0.0;
    if (nr == 0.0 || nm == 0.0) {
      r.zero_norm = true;
      r.term2 = 1.0;
    } else {
      cos = ref_.dot(rel.value) / (nr * nm);
      r.term2 = 1.0 - cos;
    }
    r.value = r.term1 + beta_ * r.term2;
    if (!want_grad) return r;

    const int n = static_cast<int>(adj_.rows());
    Mat d_logits = Mat::Zero(n, cache.probs.cols());
    for (int c = 0; c < q.size(); ++c) d_logits(v_, c) = p_orig_(c) - q(c) * p_orig_.sum();
    Mat pair = Mat::Zero(n, n);
    Mat dz = Mat::Zero(n, cache.h1.cols());
    if (!r.zero_norm && beta_ != 0.0) {
      Vec d_val = -beta_ * (ref_ / (nr * nm) - cos * rel.value / (nm * nm));
      dz = pgx_relaxed_backward(g_, rel, d_val, n, pair);
    }
    pair += gcn_backward(f_, x_, cache, d_logits, &dz).adj;
    r.grad = pair.cwiseProduct((1.0 - 2.0 * adj_.array()).matrix());
    r.grad.diagonal().setZero();
    if (allowed_.size()) r.grad = r.grad.cwiseProduct(allowed_);
    return r;
  }

  const Vec& p_orig() const { return p_orig_; }
  const GcnCache& clean() const { return clean_; }
  const ExplainerOutput& explanation() const { return explanation_; }
  const std::vector<Edge>& pairs() const { return pairs_; }

 private:
  const GcnParams& f_;
  const PgxParams& g_;
  const Mat& adj_;
  const Mat& x_;
  int v_;
  double beta_;
  GcnCache clean_;
  Vec p_orig_;
  ExplainerOutput explanation_;
  std::vector<Edge> pairs_;
  Vec ref_;
  Mat allowed_;
};

struct TracePoint {
  double term1 = 0.0, term2 = 0.0, total = 0.0;
};

struct AttackResult {
  int target = -1;
  std::vector<Edge> flips;
  Mat perturbed_adj;
  int num_flips = 0;
  bool below_min = false;
  int rewires = 0;
  std::vector<TracePoint> trace;
  int nonfinite_epochs = 0;
  double relaxed_mass = 0.0;
  Vec orig_row, pert_row;
  std::vector<int> pert_labels;  // every node, on the perturbed graph
  ExplainerOutput orig_expl, pert_expl;
};

inline void finish_result(AttackResult& r, const GcnParams& f, const PgxParams& g, const Mat& adj, const Mat& x, int v,
                          int hops) {
  r.target = v;
  if (r.rewires == 0) r.num_flips = static_cast<int>(r.flips.size());
  r.perturbed_adj = flip_edges(adj, r.flips);
  auto clean = gcn_forward_cache(f, adj, x);
  auto pert = gcn_forward_cache(f, r.perturbed_adj, x);
  r.orig_row = clean.probs.row(v).transpose();
  r.pert_row = pert.probs.row(v).transpose();
  r.pert_labels = predict_from_probs(pert.probs).labels;
  r.orig_expl = pgx_explain_with_embeddings(g, adj, clean.h1, v, hops);
  r.pert_expl = pgx_explain_with_embeddings(g, r.perturbed_adj, pert.h1, v, hops);
}

inline AttackResult gxattack(const GcnParams& f, const PgxParams& g, const Mat& adj, const Mat& x, int v,
                             const AttackConfig& cfg) {
  if (cfg.min_budget > cfg.budget) throw std::invalid_argument("min_budget exceeds budget");
  const int n = static_cast<int>(adj.rows());
  AttackProblem prob(f, g, adj, x, v, cfg);
  AttackResult res;
  Mat p = Mat::Zero(n, n);
  Mat prev = p, prev_grad = Mat::Zero(n, n);
  for (int t = 0; t < cfg.epochs && cfg.budget > 0; ++t) {
    auto ev = prob.evaluate(p, true);
    bool finite = std::isfinite(ev.value) && ev.grad.allFinite();
    if (!finite && t > 0) {
      ++res.nonfinite_epochs;
      p = project_budget(Mat(prev + 0.5 * cfg.step_size * prev_grad), cfg.budget);
      ev = prob.evaluate(p, true);
      if (!(std::isfinite(ev.value) && ev.grad.allFinite())) {
        p = prev;
        continue;
      }
    } else if (!finite) {
      ++res.nonfinite_epochs;
      break;
    }
    res.trace.push_back({ev.term1, ev.term2, ev.value});
    prev = p;
    prev_grad = ev.grad;
    p = project_budget(Mat(p + cfg.step_size * ev.grad), cfg.budget);
  }
  res.relaxed_mass = upper_values(p).sum();

  std::vector<double> probs;
  std::vector<Edge> support;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (p(i, j) > 0.0) {
        probs.push_back(p(i, j));
        support.emplace_back(i, j);
      }
  auto discrete_score = [&](const std::vector<int>& pick) {
    Mat d = Mat::Zero(n, n);
    for (int k : pick) d(support[k].first, support[k].second) = d(support[k].second, support[k].first) = 1.0;
    return prob.evaluate(d, false).value;
  };
  Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(v), 0xa77ULL}));
  auto s = bernoulli_sample_list(probs, cfg.budget, cfg.min_budget, cfg.sample_trials, rng, discrete_score);
  for (int k : s.chosen) res.flips.push_back(support[k]);
  std::sort(res.flips.begin(), res.flips.end());
  res.below_min = s.below_min;
  finish_result(res, f, g, adj, x, v, cfg.hops);
  return res;
}

inline std::vector<Edge> random_flips(int n, int b1, Rng& rng) {
  const long total = static_cast<long>(n) * (n - 1) / 2;
  b1 = static_cast<int>(std::min<long>(b1, total));
  std::set<Edge> chosen;
  while (static_cast<int>(chosen.size()) < b1) {
    int i = uniform_int(rng, 0, n - 1), j = uniform_int(rng, 0, n - 1);
    if (i != j) chosen.insert(make_edge(i, j));
  }
  return {chosen.begin(), chosen.end()};
}

inline AttackResult random_flip_baseline(const GcnParams& f, const PgxParams& g, const Mat& adj, const Mat& x, int v,
                                         int b1, std::uint64_t seed, int hops = 2) {
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(v), 0xf11ULL}));
  AttackResult r;
  r.flips = random_flips(static_cast<int>(adj.rows()), b1, rng);
  finish_result(r, f, g, adj, x, v, hops);
  return r;
}

// Each rewire deletes an edge (i,j) inside v's k-hop ball and adds (i,j') to
// another ball node; it costs two flips.
inline std::vector<Edge> random_rewires(const Mat& adj, int v, int b2, int k, Rng& rng, int* done = nullptr) {
  auto nodes = khop_nodes(adj, v, k);
  Mat a = adj;
  std::set<Edge> flipped;
  int count = 0;
  for (int r = 0; r < b2; ++r) {
    std::vector<std::pair<Edge, std::vector<int>>> options;
    for (size_t x = 0; x < nodes.size(); ++x)
      for (size_t y = x + 1; y < nodes.size(); ++y) {
        int i = nodes[x], j = nodes[y];
        if (a(i, j) == 0.0) continue;
        for (int side = 0; side < 2; ++side) {
          int keep = side ? j : i, drop = side ? i : j;
          std::vector<int> targets;
          for (int w : nodes)
            if (w != keep && w != drop && a(keep, w) == 0.0) targets.push_back(w);
          if (!targets.empty()) options.push_back({{keep, drop}, targets});
        }
      }
    if (options.empty()) break;
    auto& opt = options[uniform_int(rng, 0, static_cast<int>(options.size()) - 1)];
    int keep = opt.first.first, drop = opt.first.second;
    int w = opt.second[uniform_int(rng, 0, static_cast<int>(opt.second.size()) - 1)];
    for (Edge e : {make_edge(keep, drop), make_edge(keep, w)}) {
      a(e.first, e.second) = a(e.second, e.first) = 1.0 - a(e.first, e.second);
      if (!flipped.erase(e)) flipped.insert(e);
    }
    ++count;
  }
  if (done) *done = count;
  return {flipped.begin(), flipped.end()};
}

inline AttackResult random_rewire_baseline(const GcnParams& f, const PgxParams& g, const Mat& adj, const Mat& x, int v,
                                           int b2, int k, std::uint64_t seed, int hops = 2) {
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(v), 0x3e3ULL}));
  AttackResult r;
  r.flips = random_rewires(adj, v, b2, k, rng, &r.rewires);
  r.num_flips = 2 * r.rewires;
  finish_result(r, f, g, adj, x, v, hops);
  return r;
}

inline nlohmann::json attack_to_json(const AttackResult& r) {
  auto flips = nlohmann::json::array();
  for (auto [i, j] : r.flips) flips.push_back({i, j});
  auto t1 = nlohmann::json::array(), t2 = nlohmann::json::array();
  for (auto& tp : r.trace) {
    t1.push_back(tp.term1);
    t2.push_back(tp.term2);
  }
  std::vector<double> o(r.orig_row.data(), r.orig_row.data() + r.orig_row.size());
  std::vector<double> p(r.pert_row.data(), r.pert_row.data() + r.pert_row.size());
  return {{"target", r.target},       {"flips", flips},        {"num_flips", r.num_flips},
          {"rewires", r.rewires},     {"below_min", r.below_min}, {"relaxed_mass", r.relaxed_mass},
          {"loss_term1", t1},         {"loss_term2", t2},      {"orig_probs", o},
          {"pert_probs", p},          {"orig_explanation", explanation_to_json(r.orig_expl)},
          {"pert_explanation", explanation_to_json(r.pert_expl)}};
}

}  // namespace gxa
