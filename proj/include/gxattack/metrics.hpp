#pragma once

#include "graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace gxa {

struct JaccardResult {
  double value = 0.0;
  bool both_empty = false;
};

inline JaccardResult jaccard_sets(const std::vector<Edge>& a, const std::vector<Edge>& b) {
  std::set<Edge> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  size_t inter = 0;
  for (auto& e : sa) inter += sb.count(e);
  size_t uni = sa.size() + sb.size() - inter;
  if (uni == 0) return {1.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

// Jaccard over the strict upper triangle of two binary masks.
inline double gea(const Mat& m_gt, const Mat& m_pr) {
  if (m_gt.rows() != m_pr.rows() || m_gt.cols() != m_pr.cols()) throw std::invalid_argument("shape mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (int i = 0; i < m_gt.rows(); ++i)
    for (int j = i + 1; j < m_gt.cols(); ++j) {
      bool g = m_gt(i, j) != 0.0, p = m_pr(i, j) != 0.0;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
  if (tp + fp + fn == 0) return 1.0;
  return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

inline double delta_gea(double o, double p) { return o - p; }

struct CosineResult {
  double value = 0.0;
  bool zero_norm = false;
};

inline CosineResult cosine_checked(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("shape mismatch");
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  return {std::clamp(a.cwiseProduct(b).sum() / (na * nb), -1.0, 1.0), false};
}

inline double cosine_similarity(const Mat& a, const Mat& b) { return cosine_checked(a, b).value; }

inline double delta_prob(const Vec& p_orig, const Vec& p_pert) {
  if (p_orig.size() != p_pert.size()) throw std::invalid_argument("length mismatch");
  if (p_orig.size() == 0) return 0.0;
  return (p_orig - p_pert).cwiseAbs().mean();
}

inline double delta_label(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("length mismatch");
  if (a.empty()) return 0.0;
  size_t changed = 0;
  for (size_t i = 0; i < a.size(); ++i) changed += a[i] != b[i];
  return static_cast<double>(changed) / static_cast<double>(a.size());
}

// G5 covers [0.5, 0.6), ..., G9 covers [0.9, 1.0]
inline int confidence_bin(double conf) {
  int b = static_cast<int>(std::floor(conf * 10.0));
  return std::clamp(b, 5, 9);
}

struct EvalRecord {
  int trial = 0;
  std::string method;
  int node = 0;
  double o_gea = 0.0, p_gea = 0.0, delta_gea = 0.0;
  double cos_sim = 0.0;
  int delta_label = 0;
  double delta_prob = 0.0;
  int num_flips = 0;
  int confidence_bin = 5;
  int degree = 0;
  bool correct = false;
  double delta_label_all = 0.0;  // fraction of all nodes whose label moved
};

inline const char* eval_csv_header() {
  return "trial,method,node,O.GEA,P.GEA,dGEA,Sim_cos,dLabel,dProb,#Pert,conf_bin,degree,correct,dLabel_all";
}

}  // namespace gxa
