#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "primalfix/nuisance.hpp"

namespace primalfix {

struct EifParts {
  Eigen::VectorXd phi_Y;
  Eigen::MatrixXd phi_Z;
  Eigen::VectorXd phi_A;
  Eigen::VectorXd phi_rem;
  Eigen::VectorXd total;
};

inline Eigen::VectorXd first_pseudo_outcome(const CausalPartition& part,
                                            const NuisanceSet& ns) {
  return part.k() > 0 ? Eigen::VectorXd(ns.B.col(0)) : ns.mu;
}

// Phi = I(A=a_Y) R_Y (Y - mu)
//     + sum_k I(A=a_{Z_k}) R_{Z_k} (B_{k+1} - B_k)
//     + (I(A=a_1) - pi) B_1
//     + pi B_1 + I(A=a_0) Y - psi
inline EifParts compute_eif(const CausalPartition& part, const NuisanceSet& ns,
                            const RatioProducts& rp, double psi) {
  const int n = ns.n, K = part.k();
  EifParts e;
  Eigen::VectorXd ind_ay = ns.indicator(ns.level_value(part.y_level));
  e.phi_Y = ind_ay.cwiseProduct(rp.R_Y).cwiseProduct(ns.y - ns.mu);

  e.phi_Z.resize(n, K);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd next = k + 1 < K ? Eigen::VectorXd(ns.B.col(k + 1)) : ns.mu;
    Eigen::VectorXd ind = ns.indicator(ns.level_value(part.z_levels[k]));
    e.phi_Z.col(k) =
        ind.cwiseProduct(rp.R_Z.col(k)).cwiseProduct(next - ns.B.col(k));
  }

  Eigen::VectorXd b1 = first_pseudo_outcome(part, ns);
  e.phi_A = (ns.indicator(ns.a1) - ns.pi).cwiseProduct(b1);
  e.phi_rem = ns.pi.cwiseProduct(b1) + ns.indicator(ns.a0).cwiseProduct(ns.y) -
              Eigen::VectorXd::Constant(n, psi);

  e.total = e.phi_Y + e.phi_A + e.phi_rem;
  for (int k = 0; k < K; ++k) e.total += e.phi_Z.col(k);
  return e;
}

inline double plug_in_value(const CausalPartition& part, const NuisanceSet& ns) {
  Eigen::VectorXd b1 = first_pseudo_outcome(part, ns);
  return (ns.pi.cwiseProduct(b1) + ns.indicator(ns.a0).cwiseProduct(ns.y)).mean();
}

struct EstimateReport {
  double a0 = 0.0;  // NaN marks a treatment contrast from ace()
  double psi = 0.0;
  std::optional<double> se, ci_lower, ci_upper, eif_mean;
  std::string estimator;
  std::string strategy;
  bool converged = true;
  int iterations = 0;
  std::vector<std::string> diagnostics;

  Eigen::VectorXd eif;  // row-wise influence values; empty for the plug-in
  int n = 0;
  int crossfit = 0;
};

inline double sample_sd(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / (v.size() - 1));
}

inline void attach_ci(EstimateReport& r) {
  if (r.se) {
    r.ci_lower = r.psi - 1.96 * *r.se;
    r.ci_upper = r.psi + 1.96 * *r.se;
  }
}

inline nlohmann::json report_to_json(const EstimateReport& r) {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v)
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  if (std::isnan(r.a0))
    j["a0"] = nullptr;
  else
    j["a0"] = r.a0;
  j["psi"] = r.psi;
  put("se", r.se);
  put("ci_lower", r.ci_lower);
  put("ci_upper", r.ci_upper);
  j["estimator"] = r.estimator;
  j["strategy"] = r.strategy;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  put("eif_mean", r.eif_mean);
  j["diagnostics"] = r.diagnostics;
  return j;
}

inline EstimateReport plug_in(const CausalPartition& part, const NuisanceSet& ns) {
  EstimateReport r;
  r.a0 = ns.a0;
  r.psi = plug_in_value(part, ns);
  r.estimator = "plugin";
  r.strategy = strategy_name(ns.strategy);
  r.n = ns.n;
  r.diagnostics = ns.diagnostics;
  r.diagnostics.push_back("plug-in has no influence-function standard error");
  return r;
}

inline EstimateReport one_step(const CausalPartition& part, const NuisanceSet& ns) {
  EstimateReport r;
  r.a0 = ns.a0;
  r.estimator = "onestep";
  r.strategy = strategy_name(ns.strategy);
  r.n = ns.n;
  r.diagnostics = ns.diagnostics;

  RatioProducts rp = ratio_products(part, ns);
  double psi0 = plug_in_value(part, ns);
  EifParts e = compute_eif(part, ns, rp, psi0);
  double correction = e.total.mean();
  r.psi = psi0 + correction;
  r.eif = e.total.array() - correction;  // influence values at the corrected psi
  r.eif_mean = r.eif.mean();
  r.se = sample_sd(r.eif) / std::sqrt(static_cast<double>(ns.n));
  attach_ci(r);
  r.diagnostics.push_back("one-step correction: " + std::to_string(correction));
  return r;
}

// after a propensity update the A-ratio moves, and with it every product that
// contains it; under bayes the first mediator's g is the propensity itself
inline void refresh_after_pi(const CausalPartition& part, NuisanceSet& ns) {
  if (ns.strategy == Strategy::bayes && part.k() > 0) {
    double level = ns.level_value(part.z_levels[0]);
    Eigen::VectorXd g1 =
        level == ns.a1 ? ns.pi : Eigen::VectorXd(1.0 - ns.pi.array());
    ns.g.col(0) = clip_prob(g1);
    ns.fr.col(0) = ratio_from_bayes(ns.h.col(0), ns.g.col(0));
  }
}

namespace detail {

// one-parameter logistic fluctuation: maximize the Bernoulli log-likelihood
// of `resp` under expit(offset_logit + eps * cov); the score at the solution
// is mean(cov * (resp - fitted))
inline double logistic_fluctuation(const Eigen::VectorXd& offset_logit,
                                   const Eigen::VectorXd& cov,
                                   const Eigen::VectorXd& resp,
                                   double tol = 1e-10, int max_iters = 80) {
  const int n = static_cast<int>(resp.size());
  if (cov.cwiseAbs().maxCoeff() < 1e-14) return 0.0;
  double eps = 0.0;
  auto score = [&](double e) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += cov[i] * (resp[i] - expit(offset_logit[i] + e * cov[i]));
    return s / n;
  };
  for (int it = 0; it < max_iters; ++it) {
    double s = score(eps);
    if (std::abs(s) < tol) break;
    double info = 0.0;
    for (int i = 0; i < n; ++i) {
      double p = expit(offset_logit[i] + eps * cov[i]);
      info += cov[i] * cov[i] * p * (1.0 - p);
    }
    info /= n;
    if (info < 1e-14) break;
    double step = s / info;
    step = std::clamp(step, -5.0, 5.0);
    double trial = eps + step;
    int halvings = 0;
    while (std::abs(score(trial)) > std::abs(s) && halvings < 30) {
      step *= 0.5;
      trial = eps + step;
      ++halvings;
    }
    eps = trial;
  }
  return eps;
}

inline Eigen::VectorXd logits(const Eigen::VectorXd& p) {
  Eigen::VectorXd out(p.size());
  for (int i = 0; i < p.size(); ++i) out[i] = logit(clip_prob(p[i]));
  return out;
}

}  // namespace detail

struct TmleConfig {
  int max_iters = 200;
  double score_tolerance = 0.0;  // 0 means sd(Phi) / (sqrt(n) log n)
};

struct TmleStep {
  double eps_A = 0, score_A = 0;
  double eps_Y = 0, score_Y = 0;
  std::vector<double> eps_Z, score_Z;
  double psi = 0, pn_phi = 0, threshold = 0;
};

struct TmleResult {
  EstimateReport report;
  NuisanceSet targeted;
  std::vector<TmleStep> trace;
};

inline TmleResult tmle(const CausalPartition& part, NuisanceSet ns,
                       const TmleConfig& cfg = {}) {
  const int n = ns.n, K = part.k();
  const bool binary = ns.binary_outcome;
  Eigen::VectorXd ind_a1 = ns.indicator(ns.a1);
  Eigen::VectorXd ind_a0 = ns.indicator(ns.a0);
  Eigen::VectorXd ind_ay = ns.indicator(ns.level_value(part.y_level));
  std::vector<Eigen::VectorXd> ind_z(K);
  for (int k = 0; k < K; ++k)
    ind_z[k] = ns.indicator(ns.level_value(part.z_levels[k]));

  TmleResult out;
  bool converged = false;
  double psi = 0.0, sd = 0.0;
  Eigen::VectorXd eif_total;

  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    TmleStep step;

    // T1: propensity fluctuation with the first pseudo-outcome as covariate
    Eigen::VectorXd b1 = first_pseudo_outcome(part, ns);
    Eigen::VectorXd lp = detail::logits(ns.pi);
    step.eps_A = detail::logistic_fluctuation(lp, b1, ind_a1);
    for (int i = 0; i < n; ++i)
      ns.pi[i] = clip_prob(expit(lp[i] + step.eps_A * b1[i]));
    refresh_after_pi(part, ns);
    RatioProducts rp = ratio_products(part, ns);
    step.score_A = ((ind_a1 - ns.pi).cwiseProduct(b1)).mean();

    // T2: outcome fluctuation weighted by I(A=a_Y) R_Y
    Eigen::VectorXd w_y = ind_ay.cwiseProduct(rp.R_Y);
    if (binary) {
      Eigen::VectorXd lm = detail::logits(ns.mu);
      step.eps_Y = detail::logistic_fluctuation(lm, w_y, ns.y);
      for (int i = 0; i < n; ++i)
        ns.mu[i] = clip_prob(expit(lm[i] + step.eps_Y * w_y[i]));
    } else {
      double wsum = w_y.sum();
      step.eps_Y = wsum > 0 ? w_y.dot(ns.y - ns.mu) / wsum : 0.0;
      ns.mu.array() += step.eps_Y;
    }
    step.score_Y = (w_y.cwiseProduct(ns.y - ns.mu)).mean();

    // T3: refit and fluctuate the sequential regressions, innermost first
    step.eps_Z.assign(K, 0.0);
    step.score_Z.assign(K, 0.0);
    for (int k = K - 1; k >= 0; --k) {
      Eigen::VectorXd pseudo = k + 1 < K ? Eigen::VectorXd(ns.B.col(k + 1)) : ns.mu;
      if (!ns.refit_B.empty()) ns.B.col(k) = ns.refit_B[k](pseudo);
      Eigen::VectorXd w_k = ind_z[k].cwiseProduct(rp.R_Z.col(k));
      if (binary) {
        Eigen::VectorXd lb = detail::logits(ns.B.col(k));
        double eps = detail::logistic_fluctuation(lb, w_k, pseudo);
        for (int i = 0; i < n; ++i)
          ns.B(i, k) = clip_prob(expit(lb[i] + eps * w_k[i]));
        step.eps_Z[k] = eps;
      } else {
        double wsum = w_k.sum();
        double eps = wsum > 0 ? w_k.dot(pseudo - ns.B.col(k)) / wsum : 0.0;
        ns.B.col(k).array() += eps;
        step.eps_Z[k] = eps;
      }
      step.score_Z[k] = (w_k.cwiseProduct(pseudo - ns.B.col(k))).mean();
    }

    psi = plug_in_value(part, ns);
    EifParts e = compute_eif(part, ns, rp, psi);
    double pn = e.total.mean();
    sd = sample_sd(e.total);
    double threshold = cfg.score_tolerance > 0
                           ? cfg.score_tolerance
                           : sd / (std::sqrt(static_cast<double>(n)) *
                                   std::log(static_cast<double>(n)));
    step.psi = psi;
    step.pn_phi = pn;
    step.threshold = threshold;
    out.trace.push_back(std::move(step));
    eif_total = e.total;
    if (std::abs(pn) < threshold) {
      converged = true;
      ++iter;
      break;
    }
  }

  EstimateReport r;
  r.a0 = ns.a0;
  r.psi = psi;
  r.estimator = "tmle";
  r.strategy = strategy_name(ns.strategy);
  r.n = n;
  r.converged = converged;
  r.iterations = iter;
  r.diagnostics = ns.diagnostics;
  if (!converged)
    r.diagnostics.push_back("tmle did not reach the score threshold in " +
                            std::to_string(cfg.max_iters) + " iterations");
  r.eif = eif_total;
  r.eif_mean = eif_total.size() ? eif_total.mean() : 0.0;
  r.se = sd / std::sqrt(static_cast<double>(n));
  attach_ci(r);
  out.report = std::move(r);
  out.targeted = std::move(ns);
  return out;
}

enum class EstimatorKind { plugin, onestep, tmle };

inline const char* estimator_name(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::plugin: return "plugin";
    case EstimatorKind::onestep: return "onestep";
    case EstimatorKind::tmle: return "tmle";
  }
  return "";
}

inline EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "plugin" || s == "plug-in" || s == "plug_in") return EstimatorKind::plugin;
  if (s == "onestep" || s == "one-step" || s == "one_step") return EstimatorKind::onestep;
  if (s == "tmle") return EstimatorKind::tmle;
  throw std::invalid_argument("unknown estimator: " + s);
}

struct EstimateOptions {
  EstimatorKind estimator = EstimatorKind::tmle;
  Strategy strategy = Strategy::bayes;
  double a0 = 0.0;
  LearnerConfig learners;
  int crossfit = 0;  // fold count, 0 disables
  std::uint64_t fold_seed = 0;
  TmleConfig tmle;
};

inline EstimateReport estimate(const Dataset& ds, const Binding& binding,
                               const Admg& g, const CausalPartition& part,
                               const EstimateOptions& opt,
                               const FoldPlan* plan = nullptr) {
  FoldPlan local;
  const FoldPlan* fp = plan;
  if (!fp && opt.crossfit > 0) {
    local = FoldPlan::make(ds.n(), opt.crossfit, opt.fold_seed);
    fp = &local;
  }
  NuisanceSet ns = evaluate_nuisances(ds, binding, g, part, opt.strategy, opt.a0,
                                      opt.learners, fp);
  EstimateReport r;
  switch (opt.estimator) {
    case EstimatorKind::plugin: r = plug_in(part, ns); break;
    case EstimatorKind::onestep: r = one_step(part, ns); break;
    case EstimatorKind::tmle: r = tmle(part, std::move(ns), opt.tmle).report; break;
  }
  r.crossfit = fp ? fp->folds : 0;
  if (r.crossfit > 0)
    r.diagnostics.push_back("cross-fit with " + std::to_string(r.crossfit) + " folds");
  return r;
}

inline EstimateReport cross_fit(const Dataset& ds, const Binding& binding,
                                const Admg& g, const CausalPartition& part,
                                EstimateOptions opt, int folds,
                                std::uint64_t seed,
                                const FoldPlan* plan = nullptr) {
  opt.crossfit = folds;
  opt.fold_seed = seed;
  return estimate(ds, binding, g, part, opt, plan);
}

// treatment contrast psi(1) - psi(0) with the paired-EIF standard error
inline EstimateReport ace(const EstimateReport& treated,
                          const EstimateReport& control) {
  if (treated.n != control.n || treated.estimator != control.estimator ||
      treated.strategy != control.strategy || treated.crossfit != control.crossfit)
    throw std::invalid_argument("ace: reports come from different runs");
  if (treated.a0 == control.a0)
    throw std::invalid_argument("ace: both reports target the same arm");

  EstimateReport r;
  r.a0 = std::numeric_limits<double>::quiet_NaN();
  r.psi = treated.psi - control.psi;
  r.estimator = treated.estimator;
  r.strategy = treated.strategy;
  r.n = treated.n;
  r.crossfit = treated.crossfit;
  r.converged = treated.converged && control.converged;
  r.iterations = treated.iterations + control.iterations;
  if (treated.eif.size() == treated.n && control.eif.size() == control.n) {
    r.eif = treated.eif - control.eif;
    r.eif_mean = r.eif.mean();
    r.se = sample_sd(r.eif) / std::sqrt(static_cast<double>(r.n));
    attach_ci(r);
  }
  r.diagnostics.push_back("treatment contrast psi(1) - psi(0)");
  for (const auto& d : treated.diagnostics) r.diagnostics.push_back("arm1: " + d);
  for (const auto& d : control.diagnostics) r.diagnostics.push_back("arm0: " + d);
  return r;
}

}  // namespace primalfix
