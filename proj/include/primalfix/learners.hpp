#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace primalfix {

inline constexpr double kProbClip = 1e-6;
inline constexpr double kRatioFloor = 1e-6;
inline constexpr double kRidgeJitter = 1e-8;

inline double expit(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clip_prob(double p, double lo = kProbClip) {
  return std::min(std::max(p, lo), 1.0 - lo);
}

inline Eigen::VectorXd clip_prob(Eigen::VectorXd p, double lo = kProbClip) {
  for (int i = 0; i < p.size(); ++i) p[i] = clip_prob(p[i], lo);
  return p;
}

enum class Task { regression, probability };

struct FitDiagnostics {
  bool rank_deficient = false;
  bool separation = false;
  bool converged = true;
  int iterations = 0;
};

// A fitted model is a closure over design-matrix rows plus whatever the
// caller wants to know about how the fit went. Regression tasks predict
// conditional means; probability tasks predict values in (0, 1).
struct Fit {
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> predict;
  Eigen::VectorXd coef;
  FitDiagnostics diag;
};

class Learner {
 public:
  virtual ~Learner() = default;
  virtual Fit fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  Task task) const = 0;
};

// ordinary least squares; a rank-deficient design falls back to a ridge
// jitter solve and flags the fit
inline Fit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Fit f;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) {
    f.diag.rank_deficient = true;
    Eigen::MatrixXd gram = X.transpose() * X;
    gram.diagonal().array() += kRidgeJitter;
    f.coef = gram.ldlt().solve(X.transpose() * y);
  } else {
    f.coef = qr.solve(y);
  }
  Eigen::VectorXd beta = f.coef;
  f.predict = [beta](const Eigen::MatrixXd& M) -> Eigen::VectorXd {
    return M * beta;
  };
  return f;
}

// logistic regression by iteratively reweighted least squares; accepts
// fractional responses in [0, 1]. Separation shows up as runaway logits:
// past +-30 outright, or past +-15 when the iteration failed to converge
// (the MLE is drifting to infinity but Newton growth is only linear).
inline Fit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        double tol = 1e-8, int max_iters = 100) {
  Fit f;
  int p = static_cast<int>(X.cols());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  f.diag.converged = false;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd mu(eta.size()), w(eta.size());
    for (int i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
    }
    Eigen::VectorXd grad = X.transpose() * (y - mu);
    Eigen::MatrixXd hess = X.transpose() * w.asDiagonal() * X;
    hess.diagonal().array() += kRidgeJitter;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    beta += step;
    f.diag.iterations = it + 1;
    if (step.cwiseAbs().maxCoeff() < tol) {
      f.diag.converged = true;
      break;
    }
  }
  Eigen::VectorXd eta = X * beta;
  double max_eta = eta.size() > 0 ? eta.cwiseAbs().maxCoeff() : 0.0;
  if (max_eta > 30.0 || (!f.diag.converged && max_eta > 15.0)) f.diag.separation = true;
  f.coef = beta;
  f.predict = [beta](const Eigen::MatrixXd& M) -> Eigen::VectorXd {
    Eigen::VectorXd out = M * beta;
    for (int i = 0; i < out.size(); ++i) out[i] = expit(out[i]);
    return out;
  };
  return f;
}

class GlmLearner : public Learner {
 public:
  Fit fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
          Task task) const override {
    return task == Task::regression ? fit_ols(X, y) : fit_logistic(X, y);
  }
};

namespace detail {

struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  double value = 0.0;
  int left = -1, right = -1;
  bool leaf() const { return feature < 0; }
};

// greedy SSE split over one node's rows using per-feature presorted order
inline bool best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& resid,
                       const std::vector<std::vector<int>>& order,
                       const std::vector<char>& in_node, int n_node,
                       int min_leaf, int& feat, double& thr) {
  double total = 0.0;
  for (int i = 0; i < resid.size(); ++i)
    if (in_node[i]) total += resid[i];
  double best_gain = 1e-12;
  feat = -1;
  for (int j = 0; j < X.cols(); ++j) {
    double sum_l = 0.0;
    int cnt_l = 0;
    const auto& ord = order[j];
    for (std::size_t t = 0; t + 1 < ord.size(); ++t) {
      int row = ord[t];
      if (!in_node[row]) continue;
      sum_l += resid[row];
      ++cnt_l;
      if (cnt_l < min_leaf || n_node - cnt_l < min_leaf) continue;
      int nxt = ord[t + 1];
      std::size_t u = t + 1;
      while (u < ord.size() && !in_node[ord[u]]) ++u;
      if (u == ord.size()) break;
      nxt = ord[u];
      if (X(nxt, j) == X(row, j)) continue;
      double sum_r = total - sum_l;
      int cnt_r = n_node - cnt_l;
      double gain = sum_l * sum_l / cnt_l + sum_r * sum_r / cnt_r -
                    total * total / n_node;
      if (gain > best_gain) {
        best_gain = gain;
        feat = j;
        thr = 0.5 * (X(row, j) + X(nxt, j));
      }
    }
  }
  return feat >= 0;
}

inline int grow_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& resid,
                     const std::vector<std::vector<int>>& order,
                     std::vector<char>& in_node, int n_node, int depth,
                     int min_leaf, std::vector<TreeNode>& nodes) {
  int id = static_cast<int>(nodes.size());
  nodes.emplace_back();
  double mean = 0.0;
  for (int i = 0; i < resid.size(); ++i)
    if (in_node[i]) mean += resid[i];
  mean /= std::max(n_node, 1);
  nodes[id].value = mean;

  int feat;
  double thr;
  if (depth <= 0 || n_node < 2 * min_leaf ||
      !best_split(X, resid, order, in_node, n_node, min_leaf, feat, thr))
    return id;

  std::vector<char> left(in_node.size(), 0), right(in_node.size(), 0);
  int nl = 0, nr = 0;
  for (int i = 0; i < static_cast<int>(in_node.size()); ++i) {
    if (!in_node[i]) continue;
    if (X(i, feat) <= thr) {
      left[i] = 1;
      ++nl;
    } else {
      right[i] = 1;
      ++nr;
    }
  }
  nodes[id].feature = feat;
  nodes[id].threshold = thr;
  int l = grow_tree(X, resid, order, left, nl, depth - 1, min_leaf, nodes);
  int r = grow_tree(X, resid, order, right, nr, depth - 1, min_leaf, nodes);
  nodes[id].left = l;
  nodes[id].right = r;
  return id;
}

inline double tree_value(const std::vector<TreeNode>& nodes, int root,
                         const Eigen::MatrixXd& X, int row) {
  int cur = root;
  while (!nodes[cur].leaf())
    cur = X(row, nodes[cur].feature) <= nodes[cur].threshold ? nodes[cur].left
                                                             : nodes[cur].right;
  return nodes[cur].value;
}

}  // namespace detail

// L2-boosted shallow regression trees: a deliberately rough learner with no
// smoothness to lean on. Probability tasks clip the boosted output into
// (0, 1).
class StumpBoostLearner : public Learner {
 public:
  StumpBoostLearner(int depth = 2, int rounds = 100, double rate = 0.1,
                    int min_leaf = 10)
      : depth_(depth), rounds_(rounds), rate_(rate), min_leaf_(min_leaf) {}

  Fit fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
          Task task) const override {
    int n = static_cast<int>(X.rows());
    std::vector<std::vector<int>> order(X.cols());
    for (int j = 0; j < X.cols(); ++j) {
      order[j].resize(n);
      std::iota(order[j].begin(), order[j].end(), 0);
      std::stable_sort(order[j].begin(), order[j].end(),
                       [&](int a, int b) { return X(a, j) < X(b, j); });
    }

    double base = y.mean();
    Eigen::VectorXd pred = Eigen::VectorXd::Constant(n, base);
    auto forest = std::make_shared<std::vector<std::vector<detail::TreeNode>>>();
    std::vector<char> all(n, 1);
    for (int t = 0; t < rounds_; ++t) {
      Eigen::VectorXd resid = y - pred;
      std::vector<detail::TreeNode> nodes;
      std::vector<char> mask = all;
      detail::grow_tree(X, resid, order, mask, n, depth_, min_leaf_, nodes);
      if (nodes.size() == 1 && std::abs(nodes[0].value) < 1e-14) break;
      for (int i = 0; i < n; ++i)
        pred[i] += rate_ * detail::tree_value(nodes, 0, X, i);
      forest->push_back(std::move(nodes));
    }

    Fit f;
    double rate = rate_;
    bool clip = task == Task::probability;
    f.predict = [forest, base, rate, clip](const Eigen::MatrixXd& M) {
      Eigen::VectorXd out = Eigen::VectorXd::Constant(M.rows(), base);
      for (const auto& nodes : *forest)
        for (int i = 0; i < M.rows(); ++i)
          out[i] += rate * detail::tree_value(nodes, 0, M, i);
      if (clip)
        for (int i = 0; i < out.size(); ++i) out[i] = clip_prob(out[i]);
      return out;
    };
    f.diag.iterations = static_cast<int>(forest->size());
    return f;
  }

 private:
  int depth_, rounds_;
  double rate_;
  int min_leaf_;
};

}  // namespace primalfix
