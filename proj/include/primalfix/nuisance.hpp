#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "primalfix/dataset.hpp"
#include "primalfix/density_ratio.hpp"
#include "primalfix/graph.hpp"
#include "primalfix/learners.hpp"
#include "primalfix/rng.hpp"

namespace primalfix {

enum class Strategy { dnorm, densratio, bayes };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::dnorm: return "dnorm";
    case Strategy::densratio: return "densratio";
    case Strategy::bayes: return "bayes";
  }
  return "";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "dnorm") return Strategy::dnorm;
  if (s == "densratio") return Strategy::densratio;
  if (s == "bayes") return Strategy::bayes;
  throw std::invalid_argument("unknown strategy: " + s);
}

// How the nuisance models are built. Regressions (mu and the sequential B_k)
// and ratio models (pi, h, g, the conditional Gaussians, the uLSIF inputs)
// are configured separately so either group can be deliberately misspecified
// by dropping predictors.
struct LearnerConfig {
  std::shared_ptr<Learner> regression_learner = std::make_shared<GlmLearner>();
  std::shared_ptr<Learner> probability_learner = std::make_shared<GlmLearner>();
  Basis regression_basis = Basis::main_terms;
  int regression_degree = 2;
  Basis ratio_basis = Basis::main_terms;
  int ratio_degree = 2;
  std::vector<std::string> regression_exclude;
  std::vector<std::string> ratio_exclude;
  bool fit_on_level_subsample = false;
  std::uint64_t seed = 0;
};

struct FoldPlan {
  int folds = 0;
  std::vector<int> assign;

  static FoldPlan make(int n, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("cross-fitting needs at least 2 folds");
    if (k > n) throw std::invalid_argument("more folds than rows");
    FoldPlan p;
    p.folds = k;
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    p.assign.resize(n);
    for (int i = 0; i < n; ++i) p.assign[idx[i]] = i % k;
    return p;
  }

  std::vector<int> fold_rows(int f) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(assign.size()); ++i)
      if (assign[i] == f) out.push_back(i);
    return out;
  }

  std::vector<int> complement_rows(int f) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(assign.size()); ++i)
      if (assign[i] != f) out.push_back(i);
    return out;
  }
};

namespace detail {

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X,
                                 const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = X.row(rows[i]);
  return out;
}

inline Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<int>& rows) {
  Eigen::VectorXd out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

inline void scatter(Eigen::VectorXd& dst, const std::vector<int>& rows,
                    const Eigen::VectorXd& vals) {
  for (std::size_t i = 0; i < rows.size(); ++i) dst[rows[i]] = vals[i];
}

// train on each fold's complement, predict on the fold; without folds, train
// and predict on everything
inline Eigen::VectorXd crossfit_predict(const Learner& lrn, Task task,
                                        const Eigen::MatrixXd& X_fit,
                                        const Eigen::VectorXd& y,
                                        const Eigen::MatrixXd& X_pred,
                                        const FoldPlan* folds,
                                        FitDiagnostics* diag = nullptr) {
  if (!folds) {
    Fit f = lrn.fit(X_fit, y, task);
    if (diag) {
      diag->rank_deficient |= f.diag.rank_deficient;
      diag->separation |= f.diag.separation;
    }
    return f.predict(X_pred);
  }
  Eigen::VectorXd out(X_pred.rows());
  for (int fo = 0; fo < folds->folds; ++fo) {
    auto tr = folds->complement_rows(fo);
    auto te = folds->fold_rows(fo);
    Fit f = lrn.fit(take_rows(X_fit, tr), take(y, tr), task);
    if (diag) {
      diag->rank_deficient |= f.diag.rank_deficient;
      diag->separation |= f.diag.separation;
    }
    scatter(out, te, f.predict(take_rows(X_pred, te)));
  }
  return out;
}

}  // namespace detail

// raw (unexpanded) columns of a vertex list, in order
inline Eigen::MatrixXd raw_matrix(const Dataset& ds, const Binding& binding,
                                  const std::vector<std::string>& vertices) {
  std::vector<const Eigen::VectorXd*> cols;
  for (const auto& v : vertices)
    for (const auto& c : binding.columns(v)) cols.push_back(&ds.col(c));
  Eigen::MatrixXd out(ds.n(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = *cols[j];
  return out;
}

inline std::vector<std::string> without(std::vector<std::string> names,
                                        const std::vector<std::string>& drop,
                                        const std::string& extra = "") {
  auto hit = [&](const std::string& n) {
    if (n == extra) return true;
    return std::find(drop.begin(), drop.end(), n) != drop.end();
  };
  names.erase(std::remove_if(names.begin(), names.end(), hit), names.end());
  return names;
}

// Everything the estimators consume, cached per row:
//   pi       P(A = a1 | mp(A))
//   mu       E[Y | mp(Y)] evaluated at A = a_Y
//   B        column k-1 holds B_{Z_k} evaluated at A = a_{Z_k}
//   fr       column k-1 holds the mediator density ratio for Z_k
//   h, g     bayes components (g column 0 is tied to pi)
// refit_B[k-1] re-runs the Z_k sequential regression on a new pseudo-outcome
// and returns predictions at A = a_{Z_k}, preserving any fold structure.
struct NuisanceSet {
  Strategy strategy = Strategy::bayes;
  int n = 0;
  double a0 = 0.0, a1 = 1.0;
  bool binary_outcome = false;

  Eigen::VectorXd treat;  // observed treatment column
  Eigen::VectorXd y;      // observed outcome column

  Eigen::VectorXd pi;
  Eigen::VectorXd mu;
  Eigen::MatrixXd B;
  Eigen::MatrixXd fr;
  Eigen::MatrixXd h, g;

  std::vector<std::function<Eigen::VectorXd(const Eigen::VectorXd&)>> refit_B;
  std::vector<std::string> diagnostics;

  double level_value(Level l) const { return l == Level::a0 ? a0 : a1; }

  Eigen::VectorXd indicator(double level) const {
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) out[i] = treat[i] == level ? 1.0 : 0.0;
    return out;
  }
};

// density-ratio products along the order:
//   fr_A       pi(a1|.) / pi(a0|.)
//   R_Z col k  I(Z_k in L) * prod of mediator ratios before Z_k
//              + I(Z_k in M) * fr_A * prod of district ratios before Z_k
//   R_Y        the same product carried through to Y
struct RatioProducts {
  Eigen::VectorXd fr_A;
  Eigen::MatrixXd R_Z;
  Eigen::VectorXd R_Y;
};

inline RatioProducts ratio_products(const CausalPartition& part,
                                    const NuisanceSet& ns) {
  int n = ns.n, K = part.k();
  RatioProducts rp;
  rp.fr_A.resize(n);
  for (int i = 0; i < n; ++i) {
    double p1 = clip_prob(ns.pi[i]);
    rp.fr_A[i] = std::max(p1 / (1.0 - p1), kRatioFloor);
  }
  rp.R_Z.resize(n, K);
  Eigen::VectorXd prod_m = Eigen::VectorXd::Ones(n);   // mediator ratios so far
  Eigen::VectorXd prod_l = Eigen::VectorXd::Ones(n);   // district ratios so far
  for (int k = 0; k < K; ++k) {
    if (part.z_levels[k] == Level::a1) {  // Z_k in L
      rp.R_Z.col(k) = prod_m.cwiseMax(kRatioFloor);
      prod_l = prod_l.cwiseProduct(ns.fr.col(k));
    } else {  // Z_k in M
      rp.R_Z.col(k) = (rp.fr_A.cwiseProduct(prod_l)).cwiseMax(kRatioFloor);
      prod_m = prod_m.cwiseProduct(ns.fr.col(k));
    }
  }
  if (part.y_level == Level::a1)
    rp.R_Y = prod_m.cwiseMax(kRatioFloor);
  else
    rp.R_Y = (rp.fr_A.cwiseProduct(prod_l)).cwiseMax(kRatioFloor);
  return rp;
}

inline NuisanceSet evaluate_nuisances(const Dataset& ds, const Binding& binding,
                                      const Admg& g, const CausalPartition& part,
                                      Strategy strategy, double a0,
                                      const LearnerConfig& cfg,
                                      const FoldPlan* folds = nullptr) {
  NuisanceSet ns;
  ns.strategy = strategy;
  ns.n = ds.n();
  ns.a0 = a0;
  ns.a1 = 1.0 - a0;
  if (a0 != 0.0 && a0 != 1.0)
    throw std::invalid_argument("a0 must be 0 or 1");

  const auto& a_cols = binding.columns(part.treatment);
  const auto& y_cols = binding.columns(part.outcome);
  if (a_cols.size() != 1) throw std::invalid_argument("treatment must bind one column");
  if (y_cols.size() != 1) throw std::invalid_argument("outcome must bind one column");
  ns.treat = ds.col(a_cols[0]);
  ns.y = ds.col(y_cols[0]);
  for (int i = 0; i < ns.n; ++i)
    if (ns.treat[i] != 0.0 && ns.treat[i] != 1.0)
      throw std::invalid_argument("treatment column is not binary 0/1");
  ns.binary_outcome = ds.kind(y_cols[0]) == ColumnKind::binary;

  if (folds) {
    for (int f = 0; f < folds->folds; ++f) {
      double lo = 2, hi = -1;
      for (int r : folds->complement_rows(f)) {
        lo = std::min(lo, ns.treat[r]);
        hi = std::max(hi, ns.treat[r]);
      }
      if (lo != 0.0 || hi != 1.0)
        throw std::invalid_argument("fold complement lacks a treatment arm");
    }
  }

  const int K = part.k();
  Rng rng(cfg.seed);

  auto reg_design = [&](const std::vector<std::string>& preds) {
    DesignSpec spec;
    spec.predictors = without(preds, cfg.regression_exclude);
    spec.basis = cfg.regression_basis;
    spec.degree = cfg.regression_degree;
    return spec;
  };
  auto ratio_design = [&](const std::vector<std::string>& preds) {
    DesignSpec spec;
    spec.predictors = without(preds, cfg.ratio_exclude);
    spec.basis = cfg.ratio_basis;
    spec.degree = cfg.ratio_degree;
    return spec;
  };
  auto note = [&](const std::string& who, const FitDiagnostics& d) {
    if (d.rank_deficient) ns.diagnostics.push_back(who + ": rank deficient design");
    if (d.separation) ns.diagnostics.push_back(who + ": separation in logistic fit");
  };

  // propensity
  {
    DesignSpec spec = ratio_design(markov_pillow(g, part.treatment, part.order));
    Eigen::MatrixXd X = design_matrix(ds, binding, spec);
    FitDiagnostics d;
    ns.pi = clip_prob(detail::crossfit_predict(*cfg.probability_learner,
                                               Task::probability, X,
                                               ns.indicator(ns.a1), X, folds, &d));
    note("pi", d);
  }

  // outcome regression at A = a_Y
  Task out_task = ns.binary_outcome ? Task::probability : Task::regression;
  {
    auto preds = markov_pillow(g, part.outcome, part.order);
    double level = ns.level_value(part.y_level);
    FitDiagnostics d;
    if (cfg.fit_on_level_subsample) {
      DesignSpec spec = reg_design(without(preds, {}, part.treatment));
      Eigen::MatrixXd X = design_matrix(ds, binding, spec);
      std::vector<int> rows;
      for (int i = 0; i < ns.n; ++i)
        if (ns.treat[i] == level) rows.push_back(i);
      if (rows.empty()) throw std::invalid_argument("no rows at outcome level");
      Fit f = cfg.regression_learner->fit(detail::take_rows(X, rows),
                                          detail::take(ns.y, rows), out_task);
      d = f.diag;
      ns.mu = f.predict(X);
    } else {
      DesignSpec spec = reg_design(preds);
      Eigen::MatrixXd X_fit = design_matrix(ds, binding, spec);
      Eigen::MatrixXd X_pred = design_matrix(ds, binding, spec, part.treatment, level);
      ns.mu = detail::crossfit_predict(*cfg.regression_learner, out_task, X_fit,
                                       ns.y, X_pred, folds, &d);
    }
    note("mu", d);
  }

  // sequential regressions, innermost first
  ns.B.resize(ns.n, K);
  ns.refit_B.resize(K);
  Eigen::VectorXd pseudo = ns.mu;
  for (int k = K - 1; k >= 0; --k) {
    const std::string& zk = part.z[k];
    double level = ns.level_value(part.z_levels[k]);
    auto preds = markov_pillow(g, zk, part.order);
    Task task = ns.binary_outcome ? Task::probability : Task::regression;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> refit;
    if (cfg.fit_on_level_subsample) {
      DesignSpec spec = reg_design(without(preds, {}, part.treatment));
      Eigen::MatrixXd X = design_matrix(ds, binding, spec);
      std::vector<int> rows;
      for (int i = 0; i < ns.n; ++i)
        if (ns.treat[i] == level) rows.push_back(i);
      if (rows.empty()) throw std::invalid_argument("no rows at level of " + zk);
      auto lrn = cfg.regression_learner;
      refit = [X, rows, lrn, task](const Eigen::VectorXd& po) {
        Fit f = lrn->fit(detail::take_rows(X, rows), detail::take(po, rows), task);
        return f.predict(X);
      };
    } else {
      DesignSpec spec = reg_design(preds);
      Eigen::MatrixXd X_fit = design_matrix(ds, binding, spec);
      Eigen::MatrixXd X_pred = design_matrix(ds, binding, spec, part.treatment, level);
      auto lrn = cfg.regression_learner;
      const FoldPlan* fp = folds;
      refit = [X_fit, X_pred, lrn, task, fp](const Eigen::VectorXd& po) {
        return detail::crossfit_predict(*lrn, task, X_fit, po, X_pred, fp);
      };
    }
    ns.B.col(k) = refit(pseudo);
    ns.refit_B[k] = std::move(refit);
    pseudo = ns.B.col(k);
  }

  // mediator density ratios
  ns.fr.resize(ns.n, K);
  if (strategy == Strategy::bayes) {
    ns.h.resize(ns.n, K);
    ns.g.resize(ns.n, K);
  }
  for (int k = 0; k < K; ++k) {
    const std::string& zk = part.z[k];
    double level = ns.level_value(part.z_levels[k]);
    auto pillow = markov_pillow(g, zk, part.order);
    auto pillow_no_a = without(pillow, {}, part.treatment);
    Eigen::VectorXd ind = ns.indicator(level);

    if (strategy == Strategy::dnorm) {
      DesignSpec spec = ratio_design(pillow);
      Eigen::MatrixXd X_fit = design_matrix(ds, binding, spec);
      Eigen::MatrixXd X_num = design_matrix(ds, binding, spec, part.treatment, level);
      Eigen::MatrixXd X_den =
          design_matrix(ds, binding, spec, part.treatment, 1.0 - level);
      Eigen::MatrixXd Z = raw_matrix(ds, binding, {zk});
      if (!folds) {
        ConditionalGaussian cg = fit_conditional_gaussian(X_fit, Z);
        if (cg.rank_deficient)
          ns.diagnostics.push_back("dnorm " + zk + ": rank deficient design");
        ns.fr.col(k) = gaussian_ratio(cg, Z, cg.means(X_num), cg.means(X_den));
      } else {
        for (int f = 0; f < folds->folds; ++f) {
          auto tr = folds->complement_rows(f);
          auto te = folds->fold_rows(f);
          ConditionalGaussian cg = fit_conditional_gaussian(
              detail::take_rows(X_fit, tr), detail::take_rows(Z, tr));
          Eigen::VectorXd vals = gaussian_ratio(
              cg, detail::take_rows(Z, te), cg.means(detail::take_rows(X_num, te)),
              cg.means(detail::take_rows(X_den, te)));
          Eigen::VectorXd col = ns.fr.col(k);
          detail::scatter(col, te, vals);
          ns.fr.col(k) = col;
        }
      }
    } else if (strategy == Strategy::densratio) {
      std::vector<std::string> uverts{zk};
      for (const auto& v : without(pillow_no_a, cfg.ratio_exclude))
        uverts.push_back(v);
      Eigen::MatrixXd U = raw_matrix(ds, binding, uverts);
      auto fit_rows = [&](const std::vector<int>& rows, Rng r) {
        std::vector<int> num, den;
        for (int i : rows)
          (ns.treat[i] == level ? num : den).push_back(i);
        if (static_cast<int>(num.size()) < 4 || static_cast<int>(den.size()) < 4)
          throw std::invalid_argument("densratio " + zk +
                                      ": insufficient arm for a kernel fit");
        return fit_ulsif(detail::take_rows(U, num), detail::take_rows(U, den), r);
      };
      if (!folds) {
        std::vector<int> all(ns.n);
        std::iota(all.begin(), all.end(), 0);
        UlsifModel um = fit_rows(all, rng.child(1000 + k));
        ns.fr.col(k) = um.predict(U);
      } else {
        for (int f = 0; f < folds->folds; ++f) {
          UlsifModel um =
              fit_rows(folds->complement_rows(f), rng.child(1000 + k * 64 + f));
          auto te = folds->fold_rows(f);
          Eigen::VectorXd col = ns.fr.col(k);
          detail::scatter(col, te, um.predict(detail::take_rows(U, te)));
          ns.fr.col(k) = col;
        }
      }
    } else {  // bayes
      DesignSpec h_spec = ratio_design([&] {
        std::vector<std::string> v{zk};
        for (const auto& w : pillow_no_a) v.push_back(w);
        return v;
      }());
      Eigen::MatrixXd Xh = design_matrix(ds, binding, h_spec);
      FitDiagnostics dh;
      ns.h.col(k) = clip_prob(detail::crossfit_predict(
          *cfg.probability_learner, Task::probability, Xh, ind, Xh, folds, &dh));
      note("h " + zk, dh);
      if (k == 0) {
        // g for the first mediator is the propensity at its level
        Eigen::VectorXd g1 = level == ns.a1
                                 ? ns.pi
                                 : Eigen::VectorXd(Eigen::VectorXd::Ones(ns.n) - ns.pi);
        ns.g.col(0) = clip_prob(g1);
      } else {
        DesignSpec g_spec = ratio_design(pillow_no_a);
        Eigen::MatrixXd Xg = design_matrix(ds, binding, g_spec);
        FitDiagnostics dg;
        ns.g.col(k) = clip_prob(detail::crossfit_predict(
            *cfg.probability_learner, Task::probability, Xg, ind, Xg, folds, &dg));
        note("g " + zk, dg);
      }
      ns.fr.col(k) = ratio_from_bayes(ns.h.col(k), ns.g.col(k));
    }
  }

  int weak = 0;
  for (int i = 0; i < ns.n; ++i)
    if (ns.pi[i] < 0.01 || ns.pi[i] > 0.99) ++weak;
  if (weak > 0)
    ns.diagnostics.push_back("weak overlap: " + std::to_string(weak) +
                             " rows with propensity outside [0.01, 0.99]");
  return ns;
}

}  // namespace primalfix
