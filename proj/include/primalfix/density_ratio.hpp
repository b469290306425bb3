#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "primalfix/learners.hpp"
#include "primalfix/rng.hpp"

namespace primalfix {

// Multivariate linear-Gaussian conditional: component means are OLS fits on a
// shared design, the residual covariance is pooled across rows with a small
// diagonal load. Density ratios between two mean vectors share the
// normalizing constant, so only the quadratic forms matter.
struct ConditionalGaussian {
  Eigen::MatrixXd coef;  // design cols x z components
  Eigen::MatrixXd cov;
  Eigen::LDLT<Eigen::MatrixXd> cov_ldlt;
  bool rank_deficient = false;

  Eigen::MatrixXd means(const Eigen::MatrixXd& X) const { return X * coef; }

  // log f(z | mean) up to the shared normalizing constant
  double log_kernel(const Eigen::VectorXd& z, const Eigen::VectorXd& mean) const {
    Eigen::VectorXd d = z - mean;
    return -0.5 * d.dot(cov_ldlt.solve(d));
  }

  double log_density(const Eigen::VectorXd& z, const Eigen::VectorXd& mean) const {
    int d = static_cast<int>(z.size());
    double logdet = 0.0;
    auto D = cov_ldlt.vectorD();
    for (int i = 0; i < d; ++i) logdet += std::log(D[i]);
    return -0.5 * (d * std::log(2.0 * M_PI) + logdet) + log_kernel(z, mean);
  }
};

inline ConditionalGaussian fit_conditional_gaussian(const Eigen::MatrixXd& X,
                                                    const Eigen::MatrixXd& Z) {
  ConditionalGaussian cg;
  int d = static_cast<int>(Z.cols());
  cg.coef.resize(X.cols(), d);
  for (int j = 0; j < d; ++j) {
    Fit f = fit_ols(X, Z.col(j));
    cg.coef.col(j) = f.coef;
    cg.rank_deficient = cg.rank_deficient || f.diag.rank_deficient;
  }
  Eigen::MatrixXd resid = Z - X * cg.coef;
  cg.cov = resid.transpose() * resid / static_cast<double>(Z.rows());
  cg.cov.diagonal().array() += kRidgeJitter;
  cg.cov_ldlt.compute(cg.cov);
  return cg;
}

// ratio f(z | mean_num) / f(z | mean_den) under a shared covariance
inline Eigen::VectorXd gaussian_ratio(const ConditionalGaussian& cg,
                                      const Eigen::MatrixXd& Z,
                                      const Eigen::MatrixXd& mean_num,
                                      const Eigen::MatrixXd& mean_den) {
  Eigen::VectorXd out(Z.rows());
  for (int i = 0; i < Z.rows(); ++i) {
    double lk = cg.log_kernel(Z.row(i), mean_num.row(i)) -
                cg.log_kernel(Z.row(i), mean_den.row(i));
    out[i] = std::max(std::exp(lk), kRatioFloor);
  }
  return out;
}

// Unconstrained least-squares importance fitting. The ratio
// f_num(u) / f_den(u) is modeled as a Gaussian-kernel expansion over centers
// subsampled from the numerator sample; the ridge weight comes from 5-fold
// cross-validation of the least-squares criterion. Everything random
// (centers, bandwidth subsample, folds) is driven by the seed.
struct UlsifModel {
  Eigen::MatrixXd centers;  // standardized
  Eigen::VectorXd alpha;
  Eigen::VectorXd shift, scale;
  double bandwidth = 1.0;
  double lambda = 0.0;

  Eigen::MatrixXd kernel(const Eigen::MatrixXd& U_std) const {
    Eigen::MatrixXd K(U_std.rows(), centers.rows());
    double inv = -0.5 / (bandwidth * bandwidth);
    for (int i = 0; i < U_std.rows(); ++i)
      for (int c = 0; c < centers.rows(); ++c)
        K(i, c) = std::exp(inv * (U_std.row(i) - centers.row(c)).squaredNorm());
    return K;
  }

  Eigen::MatrixXd standardize(const Eigen::MatrixXd& U) const {
    Eigen::MatrixXd out = U;
    for (int j = 0; j < out.cols(); ++j)
      out.col(j) = (out.col(j).array() - shift[j]) / scale[j];
    return out;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& U) const {
    Eigen::VectorXd r = kernel(standardize(U)) * alpha;
    for (int i = 0; i < r.size(); ++i) r[i] = std::max(r[i], kRatioFloor);
    return r;
  }
};

inline UlsifModel fit_ulsif(const Eigen::MatrixXd& U_num,
                            const Eigen::MatrixXd& U_den, Rng rng,
                            int max_centers = 100) {
  UlsifModel m;
  int p = static_cast<int>(U_num.cols());
  int n_num = static_cast<int>(U_num.rows());
  int n_den = static_cast<int>(U_den.rows());
  if (n_num == 0 || n_den == 0)
    throw std::invalid_argument("ulsif: empty numerator or denominator sample");

  Eigen::MatrixXd pooled(n_num + n_den, p);
  pooled << U_num, U_den;
  m.shift.resize(p);
  m.scale.resize(p);
  for (int j = 0; j < p; ++j) {
    m.shift[j] = pooled.col(j).mean();
    double var = (pooled.col(j).array() - m.shift[j]).square().mean();
    m.scale[j] = std::sqrt(std::max(var, 1e-12));
  }
  Eigen::MatrixXd num_std = m.standardize(U_num);
  Eigen::MatrixXd den_std = m.standardize(U_den);

  std::vector<int> idx(n_num);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  int b = std::min(max_centers, n_num);
  m.centers.resize(b, p);
  for (int c = 0; c < b; ++c) m.centers.row(c) = num_std.row(idx[c]);

  Eigen::MatrixXd pooled_std(n_num + n_den, p);
  pooled_std << num_std, den_std;
  std::vector<int> sub(pooled_std.rows());
  std::iota(sub.begin(), sub.end(), 0);
  rng.shuffle(sub);
  int ns = std::min<int>(200, static_cast<int>(sub.size()));
  std::vector<double> dists;
  dists.reserve(ns * (ns - 1) / 2);
  for (int i = 0; i < ns; ++i)
    for (int j = i + 1; j < ns; ++j)
      dists.push_back((pooled_std.row(sub[i]) - pooled_std.row(sub[j])).norm());
  if (dists.empty()) dists.push_back(1.0);
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  m.bandwidth = std::max(dists[dists.size() / 2], 1e-6);

  Eigen::MatrixXd K_num = m.kernel(num_std);
  Eigen::MatrixXd K_den = m.kernel(den_std);

  auto solve = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& h,
                   double lam) {
    Eigen::MatrixXd A = H;
    A.diagonal().array() += lam;
    return Eigen::VectorXd(A.ldlt().solve(h));
  };

  const double lambdas[] = {1e-3, 1e-2, 1e-1, 1.0};
  const int folds = 5;
  std::vector<int> fnum(n_num), fden(n_den);
  std::iota(fnum.begin(), fnum.end(), 0);
  std::iota(fden.begin(), fden.end(), 0);
  rng.shuffle(fnum);
  rng.shuffle(fden);

  double best_j = std::numeric_limits<double>::infinity();
  double best_lam = lambdas[0];
  for (double lam : lambdas) {
    double j_total = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<int> num_tr, num_te, den_tr, den_te;
      for (int i = 0; i < n_num; ++i)
        (fnum[i] % folds == f ? num_te : num_tr).push_back(i);
      for (int i = 0; i < n_den; ++i)
        (fden[i] % folds == f ? den_te : den_tr).push_back(i);
      if (num_tr.empty() || num_te.empty() || den_tr.empty() || den_te.empty())
        continue;
      auto rows_mean = [&](const Eigen::MatrixXd& K, const std::vector<int>& rows) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(K.cols());
        for (int r : rows) v += K.row(r);
        return Eigen::VectorXd(v / static_cast<double>(rows.size()));
      };
      Eigen::MatrixXd H_tr = Eigen::MatrixXd::Zero(b, b);
      for (int r : den_tr) H_tr += K_den.row(r).transpose() * K_den.row(r);
      H_tr /= static_cast<double>(den_tr.size());
      Eigen::VectorXd alpha = solve(H_tr, rows_mean(K_num, num_tr), lam);
      Eigen::MatrixXd H_te = Eigen::MatrixXd::Zero(b, b);
      for (int r : den_te) H_te += K_den.row(r).transpose() * K_den.row(r);
      H_te /= static_cast<double>(den_te.size());
      j_total += 0.5 * alpha.dot(H_te * alpha) - rows_mean(K_num, num_te).dot(alpha);
    }
    if (j_total < best_j) {
      best_j = j_total;
      best_lam = lam;
    }
  }

  Eigen::MatrixXd H = K_den.transpose() * K_den / static_cast<double>(n_den);
  Eigen::VectorXd h = K_num.colwise().mean();
  m.lambda = best_lam;
  m.alpha = solve(H, h, best_lam);
  return m;
}

// density ratio from the treatment-regression pair:
//   f(z | ., a) / f(z | ., 1-a) = [h/(1-h)] * [(1-g)/g]
// with h = P(a | z, .) and g = P(a | .)
inline Eigen::VectorXd ratio_from_bayes(const Eigen::VectorXd& h,
                                        const Eigen::VectorXd& g) {
  Eigen::VectorXd out(h.size());
  for (int i = 0; i < h.size(); ++i) {
    double hh = clip_prob(h[i]);
    double gg = clip_prob(g[i]);
    out[i] = std::max((hh / (1.0 - hh)) * ((1.0 - gg) / gg), kRatioFloor);
  }
  return out;
}

}  // namespace primalfix
