#pragma once

#include "graph.hpp"
#include "rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace gxa {

struct GcnParams {
  Mat w1;  // d x h
  Mat w2;  // h x C
};

struct TrainConfig {
  double learning_rate = 1e-2;
  double weight_decay = 1e-5;
  int epochs = 300;
  int hidden = 32;
  std::uint64_t seed = 0;
};

inline Mat glorot(int rows, int cols, Rng& rng) {
  const double r = std::sqrt(6.0 / (rows + cols));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = (2.0 * uniform01(rng) - 1.0) * r;
  return m;
}

inline Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd r = logits.row(i).array() - logits.row(i).maxCoeff();
    r = r.array().exp();
    out.row(i) = r / r.sum();
  }
  return out;
}

inline int argmax_row(const Mat& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best;
}

// Adam with L2 decay folded into the gradient.
struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  std::vector<Mat> m, v;
  int t = 0;

  explicit Adam(double lr_, double wd = 0.0) : lr(lr_), weight_decay(wd) {}

  void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads) {
    if (m.empty())
      for (auto* p : params) {
        m.push_back(Mat::Zero(p->rows(), p->cols()));
        v.push_back(Mat::Zero(p->rows(), p->cols()));
      }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
    for (size_t k = 0; k < params.size(); ++k) {
      Mat g = grads[k];
      if (weight_decay != 0.0) g += weight_decay * *params[k];
      m[k] = beta1 * m[k] + (1.0 - beta1) * g;
      v[k] = beta2 * v[k] + (1.0 - beta2) * g.cwiseProduct(g);
      params[k]->array() -= lr * (m[k].array() / c1) / ((v[k].array() / c2).sqrt() + eps);
    }
  }
};

// Forward intermediates, kept for the backward pass.
struct GcnCache {
  Normalized norm;
  Mat h0;  // X W1
  Mat z1;  // A~ h0
  Mat h1;  // relu(z1), the node embeddings
  Mat hw;  // h1 W2
  Mat logits;
  Mat probs;
};

inline GcnCache gcn_forward_cache(const GcnParams& p, const Mat& aw, const Mat& x,
                                  const Vec* extra_degree = nullptr) {
  if (aw.rows() != x.rows() || x.cols() != p.w1.rows() || p.w1.cols() != p.w2.rows())
    throw std::invalid_argument("shape mismatch in gcn forward");
  GcnCache c;
  c.norm = normalize_full(aw, extra_degree);
  c.h0 = x * p.w1;
  c.z1 = c.norm.a_tilde * c.h0;
  c.h1 = c.z1.cwiseMax(0.0);
  c.hw = c.h1 * p.w2;
  c.logits = c.norm.a_tilde * c.hw;
  c.probs = softmax_rows(c.logits);
  return c;
}

inline Mat forward(const GcnParams& p, const Mat& a_tilde, const Mat& x) {
  Mat h1 = (a_tilde * (x * p.w1)).cwiseMax(0.0);
  return softmax_rows(a_tilde * (h1 * p.w2));
}

struct GcnGrads {
  Mat adj;  // symmetric pair gradient w.r.t. the relaxed adjacency
  Mat w1, w2;
};

// Reverse pass from dL/dlogits (and optionally dL/dh1) down to the relaxed
// adjacency entries. Parameter gradients are filled only when asked for.
inline GcnGrads gcn_backward(const GcnParams& p, const Mat& x, const GcnCache& c, const Mat& d_logits,
                             const Mat* d_h1_extra = nullptr, bool want_adj = true, bool want_params = false) {
  const Mat& at = c.norm.a_tilde;
  GcnGrads g;
  Mat d_hw = at.transpose() * d_logits;
  Mat d_h1 = d_hw * p.w2.transpose();
  if (d_h1_extra) d_h1 += *d_h1_extra;
  Mat d_z1 = d_h1.cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  if (want_params) {
    g.w2 = c.h1.transpose() * d_hw;
    g.w1 = x.transpose() * (at.transpose() * d_z1);
  }
  if (want_adj) {
    // only rows with a nonzero upstream contribute, usually a handful
    const Eigen::Index n = at.rows();
    Mat d_at = Mat::Zero(n, n);
    Mat hw_t = c.hw.transpose(), h0_t = c.h0.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      bool a = !d_logits.row(i).isZero(0.0), b = !d_z1.row(i).isZero(0.0);
      if (a) d_at.row(i).noalias() += d_logits.row(i) * hw_t;
      if (b) d_at.row(i).noalias() += d_z1.row(i) * h0_t;
    }
    g.adj = normalize_backward(c.norm, d_at);
  }
  return g;
}

// upstream is dL/dlogits; the result is the symmetric pair gradient, so a
// finite-difference probe must move (i,j) and (j,i) together.
inline Mat grad_wrt_adjacency(const GcnParams& p, const Mat& a_relaxed, const Mat& x, const Mat& upstream) {
  auto c = gcn_forward_cache(p, a_relaxed, x);
  return gcn_backward(p, x, c, upstream).adj;
}

struct TrainResult {
  GcnParams params;
  std::vector<double> losses;
  double accuracy = 0.0;
};

inline GcnParams init_params(int d, int hidden, int classes, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x9c7ULL}));
  GcnParams p;
  p.w1 = glorot(d, hidden, rng);
  p.w2 = glorot(hidden, classes, rng);
  return p;
}

inline double accuracy_of(const Mat& probs, const std::vector<int>& y) {
  int ok = 0;
  for (int i = 0; i < probs.rows(); ++i) ok += argmax_row(probs, i) == y[i];
  return probs.rows() ? static_cast<double>(ok) / probs.rows() : 0.0;
}

inline TrainResult train(const Graph& g, const TrainConfig& cfg) {
  TrainResult r;
  r.params = init_params(g.d(), cfg.hidden, g.num_classes, cfg.seed);
  Adam opt(cfg.learning_rate, cfg.weight_decay);
  const int n = g.n();
  Mat onehot = Mat::Zero(n, g.num_classes);
  for (int i = 0; i < n; ++i) onehot(i, g.y[i]) = 1.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto c = gcn_forward_cache(r.params, g.adj, g.x);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) loss -= std::log(std::max(c.probs(i, g.y[i]), 1e-300));
    loss /= n;
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite training loss at epoch " + std::to_string(e));
    r.losses.push_back(loss);
    Mat d_logits = (c.probs - onehot) / n;
    auto gr = gcn_backward(r.params, g.x, c, d_logits, nullptr, false, true);
    opt.step({&r.params.w1, &r.params.w2}, {gr.w1, gr.w2});
  }
  r.accuracy = accuracy_of(gcn_forward_cache(r.params, g.adj, g.x).probs, g.y);
  return r;
}

struct Prediction {
  std::vector<int> labels;
  Vec confidence;
  Mat probs;
};

inline Prediction predict_from_probs(const Mat& probs) {
  Prediction out;
  out.probs = probs;
  out.confidence.resize(probs.rows());
  for (int i = 0; i < probs.rows(); ++i) {
    out.labels.push_back(argmax_row(probs, i));
    out.confidence(i) = probs(i, out.labels.back());
  }
  return out;
}

inline Prediction predict(const GcnParams& p, const Graph& g) {
  return predict_from_probs(gcn_forward_cache(p, g.adj, g.x).probs);
}

inline nlohmann::json matrix_to_json(const Mat& m) {
  auto data = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Mat matrix_from_json(const nlohmann::json& j) {
  Mat m(j.at("rows").get<int>(), j.at("cols").get<int>());
  const auto& d = j.at("data");
  for (int i = 0; i < m.rows(); ++i)
    for (int k = 0; k < m.cols(); ++k) m(i, k) = d.at(i * m.cols() + k).get<double>();
  return m;
}

inline nlohmann::json params_to_json(const GcnParams& p) {
  return {{"W1", matrix_to_json(p.w1)}, {"W2", matrix_to_json(p.w2)}};
}

inline GcnParams params_from_json(const nlohmann::json& j) {
  return {matrix_from_json(j.at("W1")), matrix_from_json(j.at("W2"))};
}

}  // namespace gxa
