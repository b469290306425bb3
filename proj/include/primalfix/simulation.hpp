#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "primalfix/estimators.hpp"
#include "primalfix/graph.hpp"
#include "primalfix/nuisance.hpp"
#include "primalfix/rng.hpp"

namespace primalfix {

enum class DgpName {
  yinL,
  ynotL,
  weak_overlap_yinL,
  weak_overlap_ynotL,
  interactions_yinL,
  interactions_ynotL,
  crossfit_yinL,
};

inline const char* dgp_name(DgpName d) {
  switch (d) {
    case DgpName::yinL: return "yinL";
    case DgpName::ynotL: return "ynotL";
    case DgpName::weak_overlap_yinL: return "weak_overlap_yinL";
    case DgpName::weak_overlap_ynotL: return "weak_overlap_ynotL";
    case DgpName::interactions_yinL: return "interactions_yinL";
    case DgpName::interactions_ynotL: return "interactions_ynotL";
    case DgpName::crossfit_yinL: return "crossfit_yinL";
  }
  return "";
}

inline DgpName dgp_from_string(const std::string& s) {
  for (DgpName d : {DgpName::yinL, DgpName::ynotL, DgpName::weak_overlap_yinL,
                    DgpName::weak_overlap_ynotL, DgpName::interactions_yinL,
                    DgpName::interactions_ynotL, DgpName::crossfit_yinL})
    if (s == dgp_name(d)) return d;
  throw std::invalid_argument("unknown DGP: " + s);
}

// A data-generating process together with the pieces of its observed law that
// the truth computations need: the propensity, the mediator conditionals, and
// the outcome regression, all after marginalizing any hidden variables. The
// downstream conditional means are linear in the variables being integrated
// out, so sequential regressions reduce to mean substitution.
struct Dgp {
  DgpName name = DgpName::yinL;
  int xdim = 1;
  Admg graph;
  Binding binding;
  CausalPartition part;
  std::vector<std::string> columns;

  std::function<double(const Eigen::VectorXd&)> pi1;
  std::function<Eigen::Vector2d(const Eigen::VectorXd&, double)> m_mean;
  Eigen::Matrix2d m_cov, m_chol, m_prec;
  std::function<double(const Eigen::VectorXd&, const Eigen::Vector2d&, double)>
      l_mean_obs;
  double l_var_obs = 1.0;
  std::function<double(const Eigen::VectorXd&, const Eigen::Vector2d&, double,
                       double)>
      mu_obs;
  // draws one observational row in `columns` order, hidden variables used
  // internally and discarded
  std::function<void(Rng&, Eigen::VectorXd&)> draw_row;

  double level_value(Level l, double a0) const {
    return l == Level::a0 ? a0 : 1 - a0;
  }
  double propensity(double level, const Eigen::VectorXd& x) const {
    double p1 = pi1(x);
    return level == 1.0 ? p1 : 1 - p1;
  }
  // exact sequential regressions by mean substitution
  double b2(const Eigen::VectorXd& x, const Eigen::Vector2d& m, double a0) const {
    double lvl_l = level_value(part.z_levels[1], a0);
    double lvl_y = level_value(part.y_level, a0);
    return mu_obs(x, m, l_mean_obs(x, m, lvl_l), lvl_y);
  }
  double b1(const Eigen::VectorXd& x, double a0) const {
    return b2(x, m_mean(x, level_value(part.z_levels[0], a0)), a0);
  }
  double ey(const Eigen::VectorXd& x, double a) const {
    Eigen::Vector2d mbar = m_mean(x, a);
    return mu_obs(x, mbar, l_mean_obs(x, mbar, a), a);
  }
  // integrand of the identification functional as a function of x
  double functional_integrand(const Eigen::VectorXd& x, double a0) const {
    return propensity(1 - a0, x) * b1(x, a0) + propensity(a0, x) * ey(x, a0);
  }
};

namespace detail {

inline Admg district_graph(bool y_in_district, int xdim) {
  Admg g;
  g.add_vertex("X", xdim);
  g.add_vertex("A");
  g.add_vertex("M", 2);
  g.add_vertex("L");
  g.add_vertex("Y");
  for (const char* v : {"A", "M", "L", "Y"}) g.add_di_edge("X", v);
  g.add_di_edge("A", "M");
  g.add_di_edge("M", "L");
  g.add_di_edge("L", "Y");
  if (y_in_district) {
    g.add_di_edge("A", "L");
    g.add_di_edge("M", "Y");
    g.add_bi_edge("A", "Y");
  } else {
    g.add_di_edge("A", "Y");
    g.add_bi_edge("A", "L");
    g.add_bi_edge("M", "Y");
  }
  return g;
}

inline Eigen::Matrix2d sim_m_cov() {
  Eigen::Matrix2d s;
  s << 2, 1, 1, 3;
  return s;
}

// shared scaffolding: graph, binding, partition
inline void finish_dgp(Dgp& d, bool y_in_district) {
  d.graph = district_graph(y_in_district, d.xdim);
  d.part = partition_mlx(d.graph, "A", "Y");
  d.columns.clear();
  if (d.xdim == 1) {
    d.columns.push_back("X");
  } else {
    for (int i = 1; i <= d.xdim; ++i)
      d.columns.push_back("X" + std::to_string(i));
  }
  for (const char* c : {"A", "M1", "M2", "L", "Y"}) d.columns.push_back(c);
  Dataset probe;
  for (const auto& c : d.columns)
    probe.add_column(c, Eigen::VectorXd::Zero(1));
  d.binding = default_binding(d.graph, probe);
}

inline Dgp make_sim_dgp(DgpName name, bool y_in_district, bool weak,
                        bool interactions) {
  Dgp d;
  d.name = name;
  d.xdim = 1;
  // covariance pieces must exist before draw_row captures d by value
  d.m_cov = sim_m_cov();
  d.m_chol = cholesky_lower(d.m_cov);
  d.m_prec = d.m_cov.inverse();
  const bool m_int = interactions && y_in_district;  // M gains AX terms only here
  d.pi1 = [weak](const Eigen::VectorXd& xv) {
    double x = xv[0];
    return weak ? 0.001 + 0.998 * x : expit(1 + x);
  };
  d.m_mean = [m_int](const Eigen::VectorXd& xv, double a) {
    double x = xv[0];
    Eigen::Vector2d m;
    m[0] = 1 + a + x + (m_int ? a * x : 0.0);
    m[1] = -1 - 0.5 * a + 2 * x - (m_int ? a * x : 0.0);
    return m;
  };
  if (y_in_district) {
    d.l_mean_obs = [interactions](const Eigen::VectorXd& xv,
                                  const Eigen::Vector2d& m, double a) {
      double x = xv[0];
      double base = 1 + a + m[0] + m[1] + x;
      if (interactions) base += a * x + m[0] * x + m[1] * x;
      return base;
    };
    d.l_var_obs = 1.0;
    d.mu_obs = [interactions](const Eigen::VectorXd& xv,
                              const Eigen::Vector2d& m, double l, double a) {
      double x = xv[0];
      double base = 2 + l + m[0] + m[1] + 2 * x + a;
      if (interactions) base += a * x + l * x;
      return base;
    };
    d.draw_row = [d](Rng& rng, Eigen::VectorXd& row) {
      double x = rng.uniform();
      Eigen::VectorXd xv(1);
      xv[0] = x;
      double a = rng.bernoulli(d.pi1(xv)) ? 1.0 : 0.0;
      Eigen::Vector2d z{rng.normal(), rng.normal()};
      Eigen::Vector2d m = d.m_mean(xv, a) + d.m_chol * z;
      bool inter = d.name == DgpName::interactions_yinL;
      double u = rng.normal(1 + a + x + (inter ? a * x : 0.0), 1);
      double l = rng.normal(d.l_mean_obs(xv, m, a), 1);
      double y = rng.normal(1 + l + m[0] + m[1] + x + u + (inter ? l * x : 0.0), 1);
      row.resize(6);
      row << x, a, m[0], m[1], l, y;
    };
  } else {
    d.l_mean_obs = [interactions](const Eigen::VectorXd& xv,
                                  const Eigen::Vector2d& m, double a) {
      double x = xv[0];
      double base = 2 + m[0] + m[1] + 2 * x + a;
      if (interactions) base += a * x + m[0] * x + m[1] * x;
      return base;
    };
    d.l_var_obs = 2.0;
    d.mu_obs = [interactions](const Eigen::VectorXd& xv,
                              const Eigen::Vector2d& m, double l, double a) {
      double x = xv[0];
      double base = 2 + l + m[0] + m[1] + 2 * x + 2 * a;
      if (interactions) base += a * x + l * x;
      return base;
    };
    d.draw_row = [d](Rng& rng, Eigen::VectorXd& row) {
      double x = rng.uniform();
      Eigen::VectorXd xv(1);
      xv[0] = x;
      double a = rng.bernoulli(d.pi1(xv)) ? 1.0 : 0.0;
      Eigen::Vector2d z{rng.normal(), rng.normal()};
      Eigen::Vector2d m = d.m_mean(xv, a) + d.m_chol * z;
      bool inter = d.name == DgpName::interactions_ynotL;
      double u1 = rng.normal(1 + a + x + (inter ? a * x : 0.0), 1);
      double u2 = rng.normal(1 + m[0] + m[1] + a + x + (inter ? a * x : 0.0), 1);
      double lmean = 1 + m[0] + m[1] + x + u1 +
                     (inter ? m[0] * x + m[1] * x : 0.0);
      double l = rng.normal(lmean, 1);
      double y = rng.normal(1 + l + a + x + u2 + (inter ? l * x : 0.0), 1);
      row.resize(6);
      row << x, a, m[0], m[1], l, y;
    };
  }
  finish_dgp(d, y_in_district);
  return d;
}

struct CrossfitCoefs {
  Eigen::VectorXd va, vm1, vm2, vl, vy;
  CrossfitCoefs() {
    auto vec = [](std::initializer_list<double> v) {
      Eigen::VectorXd out(static_cast<int>(v.size()));
      int i = 0;
      for (double x : v) out[i++] = x;
      return out;
    };
    va = 0.1 * vec({0.48, 0.07, 1, -1, -0.34, -0.12, 0.3, -0.35, 1, -0.1, 0.46,
                    0.33, 0, 0.45, 0.1, -0.32, -0.08, -0.2, 0.5, 0.5, -0.03});
    vm1 = 0.025 * vec({3.0, 1.5, -1.5, -1.5, -1, -2, -3, -3.0, -1.5, 2.0, 1.5,
                       3, 1.5, 2.0, 0.5, 0.5, 3.0, -0.2, -0.33, 0.5, 0.3, -0.5});
    vm2 = 0.025 * vec({1.5, -1.5, -3.0, 2.0, -2, 3, -3, 1.5, -1.5, -1.5, 1.5,
                       -1, -1.5, 0.3, 3.0, -0.33, 0.5, 0.5, 0.50, -0.2, 0.1, 0.2});
    vl = 0.025 * vec({-3.0, -2.0, -1.5, 1.5, -1.5, -1.0, 0.5, -1.0, 0.3, 3.0,
                      0.5, 1.5, 0.5, -1.5, -3.0, -0.5, 0.5, 3.0, 1.5});
    vy = vec({1.0, -2.0, -3.0, -1.5, 1.0, 0.5, -2.0, 1.5, -2.0, -3.0, -3.0,
              -1.5, -1.0, 0.5, 3.0, 1.0, 1.5, -2.0, 3.0, -1.0});
  }
  // feature maps from Appendix-style design vectors
  double a_lin(const Eigen::VectorXd& x) const {
    double s = va[0];
    for (int i = 0; i < 10; ++i) s += va[1 + i] * x[i] + va[11 + i] * x[i] * x[i];
    return s;
  }
  double m_lin(const Eigen::VectorXd& v, const Eigen::VectorXd& x, double a) const {
    double s = v[0] + v[1] * a;
    for (int i = 0; i < 10; ++i) s += v[2 + i] * x[i];
    for (int i = 0; i < 5; ++i) s += v[12 + i] * a * x[i];
    for (int i = 0; i < 5; ++i) s += v[17 + i] * x[5 + i] * x[5 + i];
    return s;
  }
  double l_lin(const Eigen::VectorXd& x, const Eigen::Vector2d& m, double a) const {
    double s = vl[0] + vl[1] * a + vl[2] * m[0] + vl[3] * m[1];
    for (int i = 0; i < 10; ++i) s += vl[4 + i] * x[i];
    for (int i = 0; i < 5; ++i) s += vl[14 + i] * x[5 + i] * x[5 + i];
    return s;
  }
  double y_lin(const Eigen::VectorXd& x, const Eigen::Vector2d& m, double l,
               double u) const {
    double s = vy[0] + vy[1] * l + vy[2] * m[0] + vy[3] * m[1];
    for (int i = 0; i < 10; ++i) s += vy[4 + i] * x[i];
    for (int i = 0; i < 5; ++i) s += vy[14 + i] * x[5 + i] * x[5 + i];
    return s + vy[19] * u;
  }
};

inline Dgp make_crossfit_dgp() {
  Dgp d;
  d.name = DgpName::crossfit_yinL;
  d.xdim = 10;
  d.m_cov = sim_m_cov();
  d.m_chol = cholesky_lower(d.m_cov);
  d.m_prec = d.m_cov.inverse();
  auto c = std::make_shared<CrossfitCoefs>();
  d.pi1 = [c](const Eigen::VectorXd& x) { return expit(c->a_lin(x)); };
  d.m_mean = [c](const Eigen::VectorXd& x, double a) {
    return Eigen::Vector2d{c->m_lin(c->vm1, x, a), c->m_lin(c->vm2, x, a)};
  };
  d.l_mean_obs = [c](const Eigen::VectorXd& x, const Eigen::Vector2d& m,
                     double a) { return c->l_lin(x, m, a); };
  d.l_var_obs = 1.0;
  d.mu_obs = [c](const Eigen::VectorXd& x, const Eigen::Vector2d& m, double l,
                 double a) { return c->y_lin(x, m, l, 1 + a + x[0]); };
  d.draw_row = [d, c](Rng& rng, Eigen::VectorXd& row) {
    Eigen::VectorXd x(10);
    for (int i = 0; i < 10; ++i) x[i] = rng.uniform();
    double a = rng.bernoulli(d.pi1(x)) ? 1.0 : 0.0;
    Eigen::Vector2d z{rng.normal(), rng.normal()};
    Eigen::Vector2d m = d.m_mean(x, a) + d.m_chol * z;
    double u = rng.normal(1 + a + x[0], 1);
    double l = rng.normal(c->l_lin(x, m, a), 1);
    double y = rng.normal(c->y_lin(x, m, l, u), 1);
    row.resize(15);
    for (int i = 0; i < 10; ++i) row[i] = x[i];
    row[10] = a;
    row[11] = m[0];
    row[12] = m[1];
    row[13] = l;
    row[14] = y;
  };
  finish_dgp(d, true);
  return d;
}

}  // namespace detail

inline const Dgp& dgp(DgpName name) {
  static const std::map<DgpName, Dgp> registry = [] {
    std::map<DgpName, Dgp> r;
    r.emplace(DgpName::yinL,
              detail::make_sim_dgp(DgpName::yinL, true, false, false));
    r.emplace(DgpName::ynotL,
              detail::make_sim_dgp(DgpName::ynotL, false, false, false));
    r.emplace(DgpName::weak_overlap_yinL,
              detail::make_sim_dgp(DgpName::weak_overlap_yinL, true, true, false));
    r.emplace(DgpName::weak_overlap_ynotL,
              detail::make_sim_dgp(DgpName::weak_overlap_ynotL, false, true, false));
    r.emplace(DgpName::interactions_yinL,
              detail::make_sim_dgp(DgpName::interactions_yinL, true, false, true));
    r.emplace(DgpName::interactions_ynotL,
              detail::make_sim_dgp(DgpName::interactions_ynotL, false, false, true));
    r.emplace(DgpName::crossfit_yinL, detail::make_crossfit_dgp());
    return r;
  }();
  return registry.at(name);
}

inline Dataset generate(const Dgp& d, int n, std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("generate: n must be at least 10");
  Rng rng(seed);
  int ncol = static_cast<int>(d.columns.size());
  std::vector<Eigen::VectorXd> cols(ncol, Eigen::VectorXd(n));
  Eigen::VectorXd row;
  for (int r = 0; r < n; ++r) {
    d.draw_row(rng, row);
    for (int cidx = 0; cidx < ncol; ++cidx) cols[cidx][r] = row[cidx];
  }
  Dataset ds;
  for (int cidx = 0; cidx < ncol; ++cidx) ds.add_column(d.columns[cidx], cols[cidx]);
  return ds;
}

inline Dataset generate(DgpName name, int n, std::uint64_t seed) {
  return generate(dgp(name), n, seed);
}

struct TruthEstimate {
  double value = 0;
  double se = 0;
  double factual_term = 0;  // the E[I(A=a0)Y] component, for cross-checks
};

// Monte-Carlo evaluation of the identification functional: the factual arm is
// averaged from observational draws, the counterfactual arm by sampling the
// observed-law conditionals at the level assignments and substituting the
// outcome regression at the end.
inline TruthEstimate functional_mc(const Dgp& d, double a0, long long n_draws,
                                   std::uint64_t seed) {
  if (a0 != 0.0 && a0 != 1.0)
    throw std::invalid_argument("true_psi: a0 must be 0 or 1");
  Rng rng(seed);
  double lvl_m = d.level_value(d.part.z_levels[0], a0);
  double lvl_l = d.level_value(d.part.z_levels[1], a0);
  double lvl_y = d.level_value(d.part.y_level, a0);
  double sum = 0, sumsq = 0, fact = 0;
  Eigen::VectorXd row;
  Eigen::VectorXd x(d.xdim);
  for (long long i = 0; i < n_draws; ++i) {
    d.draw_row(rng, row);
    for (int j = 0; j < d.xdim; ++j) x[j] = row[j];
    double a = row[d.xdim];
    double y = row[d.xdim + 4];
    double term2 = a == a0 ? y : 0.0;
    Eigen::Vector2d z{rng.normal(), rng.normal()};
    Eigen::Vector2d m = d.m_mean(x, lvl_m) + d.m_chol * z;
    double l = rng.normal(d.l_mean_obs(x, m, lvl_l), std::sqrt(d.l_var_obs));
    double v = d.propensity(1 - a0, x) * d.mu_obs(x, m, l, lvl_y) + term2;
    sum += v;
    sumsq += v * v;
    fact += term2;
  }
  TruthEstimate t;
  double n = static_cast<double>(n_draws);
  t.value = sum / n;
  t.se = std::sqrt(std::max(0.0, sumsq / n - t.value * t.value) / n);
  t.factual_term = fact / n;
  return t;
}

inline TruthEstimate true_psi(DgpName name, double a0,
                              long long n_draws = 10'000'000,
                              std::uint64_t seed = 20240917) {
  return functional_mc(dgp(name), a0, n_draws, seed);
}

// Deterministic truth: the same functional with the x-marginal integrated by
// composite Simpson (univariate x) or a fixed-seed exact-integrand average
// over the uniform cube (10-dimensional x). Used where Monte-Carlo error in
// the truth would dominate the quantity under test.
inline double true_psi_exact(const Dgp& d, double a0) {
  if (a0 != 0.0 && a0 != 1.0)
    throw std::invalid_argument("true_psi: a0 must be 0 or 1");
  if (d.xdim == 1) {
    const int segments = 8192;
    double h = 1.0 / segments;
    Eigen::VectorXd x(1);
    auto f = [&](double v) {
      x[0] = v;
      return d.functional_integrand(x, a0);
    };
    double acc = f(0.0) + f(1.0);
    for (int i = 1; i < segments; ++i)
      acc += (i % 2 ? 4.0 : 2.0) * f(i * h);
    return acc * h / 3.0;
  }
  const long long n_draws = 4'000'000;
  Rng rng = Rng(20240917).child(a0 == 0.0 ? 11 : 13);
  Eigen::VectorXd x(d.xdim);
  double sum = 0;
  for (long long i = 0; i < n_draws; ++i) {
    for (int j = 0; j < d.xdim; ++j) x[j] = rng.uniform();
    sum += d.functional_integrand(x, a0);
  }
  return sum / static_cast<double>(n_draws);
}

inline double true_psi_exact(DgpName name, double a0) {
  static std::map<std::pair<DgpName, double>, double> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(name, a0);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  double v = true_psi_exact(dgp(name), a0);
  cache[key] = v;
  return v;
}

// nuisance caches filled with the DGP's exact conditionals, for oracle tests
// and the true-EIF control variate
inline NuisanceSet exact_dgp_nuisances(const Dgp& d, double a0,
                                       const Dataset& ds) {
  const int n = ds.n();
  NuisanceSet ns;
  ns.strategy = Strategy::dnorm;
  ns.n = n;
  ns.a0 = a0;
  ns.a1 = 1 - a0;
  ns.treat = ds.col("A");
  ns.y = ds.col("Y");
  ns.binary_outcome = false;
  ns.pi.resize(n);
  ns.mu.resize(n);
  ns.B.resize(n, 2);
  ns.fr.resize(n, 2);
  double lvl_m = d.level_value(d.part.z_levels[0], a0);
  double lvl_l = d.level_value(d.part.z_levels[1], a0);
  double lvl_y = d.level_value(d.part.y_level, a0);
  Eigen::VectorXd x(d.xdim);
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < d.xdim; ++j)
      x[j] = ds.col(d.columns[j])[r];
    Eigen::Vector2d m{ds.col("M1")[r], ds.col("M2")[r]};
    double l = ds.col("L")[r];
    ns.pi[r] = clip_prob(d.propensity(ns.a1, x));
    ns.mu[r] = d.mu_obs(x, m, l, lvl_y);
    ns.B(r, 0) = d.b1(x, a0);
    ns.B(r, 1) = d.b2(x, m, a0);
    Eigen::Vector2d d_num = m - d.m_mean(x, lvl_m);
    Eigen::Vector2d d_den = m - d.m_mean(x, 1 - lvl_m);
    double log_m = -0.5 * (d_num.dot(d.m_prec * d_num) - d_den.dot(d.m_prec * d_den));
    ns.fr(r, 0) = std::max(std::exp(log_m), kRatioFloor);
    double e_num = l - d.l_mean_obs(x, m, lvl_l);
    double e_den = l - d.l_mean_obs(x, m, 1 - lvl_l);
    double log_l = -0.5 * (e_num * e_num - e_den * e_den) / d.l_var_obs;
    ns.fr(r, 1) = std::max(std::exp(log_l), kRatioFloor);
  }
  return ns;
}

inline int default_threads() {
  if (const char* env = std::getenv("PF_THREADS")) {
    int t = std::atoi(env);
    if (t > 0) return t;
  }
  return 1;
}

template <class F>
inline void parallel_for(int count, int threads, F body) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
  };
  std::vector<std::thread> pool;
  int spawn = std::min(threads, count);
  pool.reserve(spawn);
  for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

struct EstimatorSpec {
  EstimatorKind estimator = EstimatorKind::tmle;
  Strategy strategy = Strategy::dnorm;
  LearnerConfig learners;
  int crossfit = 0;
  TmleConfig tmle;

  std::string nuisance_signature() const {
    std::ostringstream os;
    os << strategy_name(strategy) << '|' << crossfit << '|'
       << basis_name(learners.regression_basis) << ':' << learners.regression_degree
       << '|' << basis_name(learners.ratio_basis) << ':' << learners.ratio_degree
       << '|' << learners.fit_on_level_subsample << '|'
       << learners.regression_learner.get() << '|' << learners.probability_learner.get();
    os << "|rx:";
    for (const auto& e : learners.regression_exclude) os << e << ',';
    os << "|fx:";
    for (const auto& e : learners.ratio_exclude) os << e << ',';
    return os.str();
  }
};

struct TruthSpec {
  enum class Mode { value, analytic, monte_carlo };
  Mode mode = Mode::analytic;
  double value = 0;
  long long mc_n = 10'000'000;
};

struct ExperimentConfig {
  DgpName dgp = DgpName::yinL;
  std::vector<int> sample_sizes{500};
  int replications = 100;
  double a0 = 0;
  TruthSpec truth;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: PF_THREADS or serial
  std::vector<EstimatorSpec> estimators;
  bool true_eif_control = true;
};

struct ReplicationRecord {
  double psi = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  bool has_ci = false;
  bool converged = true;
  std::string error;
};

struct MetricsRow {
  std::string dgp, estimator, strategy;
  int crossfit = 0;
  int n = 0;
  int replications = 0;
  int failures = 0;
  int nonconverged = 0;
  double truth = 0;
  double bias = 0, bias_cv = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  double mse = 0;
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double ci_width = std::numeric_limits<double>::quiet_NaN();
  double sqrt_n_bias = 0,
         sqrt_n_bias_cv = std::numeric_limits<double>::quiet_NaN();
  double n_variance = std::numeric_limits<double>::quiet_NaN();
  double var_phi = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> notes;
};

struct CellDraws {
  int spec = 0;
  int n = 0;
  std::vector<ReplicationRecord> reps;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<CellDraws> cells;
  std::vector<double> cv;  // per-replication true-EIF mean at the largest n
  double truth = 0;
  double var_phi = std::numeric_limits<double>::quiet_NaN();
};

inline double resolve_truth(const ExperimentConfig& cfg) {
  switch (cfg.truth.mode) {
    case TruthSpec::Mode::value: return cfg.truth.value;
    case TruthSpec::Mode::monte_carlo:
      return true_psi(cfg.dgp, cfg.a0, cfg.truth.mc_n).value;
    case TruthSpec::Mode::analytic: return true_psi_exact(cfg.dgp, cfg.a0);
  }
  return 0;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.replications < 1)
    throw std::invalid_argument("run_experiment: replications must be >= 1");
  if (cfg.sample_sizes.empty())
    throw std::invalid_argument("run_experiment: empty sample size grid");
  if (cfg.estimators.empty())
    throw std::invalid_argument("run_experiment: no estimators configured");
  const Dgp& d = dgp(cfg.dgp);
  const int R = cfg.replications;
  const int S = static_cast<int>(cfg.estimators.size());
  int threads = cfg.threads > 0 ? cfg.threads : default_threads();

  ExperimentResult result;
  result.truth = resolve_truth(cfg);
  const double truth = result.truth;
  const int n_max = *std::max_element(cfg.sample_sizes.begin(), cfg.sample_sizes.end());

  // group estimator specs that can share one nuisance fit
  std::vector<int> group_of(S);
  std::map<std::string, int> group_index;
  std::vector<int> group_head;
  for (int s = 0; s < S; ++s) {
    std::string sig = cfg.estimators[s].nuisance_signature();
    auto it = group_index.find(sig);
    if (it == group_index.end()) {
      group_index.emplace(sig, static_cast<int>(group_head.size()));
      group_of[s] = static_cast<int>(group_head.size());
      group_head.push_back(s);
    } else {
      group_of[s] = it->second;
    }
  }

  Rng base(cfg.seed);
  for (std::size_t ni = 0; ni < cfg.sample_sizes.size(); ++ni) {
    const int n = cfg.sample_sizes[ni];
    std::vector<CellDraws> cells(S);
    for (int s = 0; s < S; ++s) {
      cells[s].spec = s;
      cells[s].n = n;
      cells[s].reps.resize(R);
    }
    std::vector<double> cv(R, std::numeric_limits<double>::quiet_NaN());
    struct PhiAcc {
      long long count = 0;
      double sum = 0, sumsq = 0;
    };
    std::vector<PhiAcc> phi_acc(R);
    const bool want_cv = cfg.true_eif_control;

    parallel_for(R, threads, [&](int r) {
      std::uint64_t stream = (static_cast<std::uint64_t>(ni) << 32) |
                             static_cast<std::uint64_t>(r);
      Rng rep_rng = base.child(stream);
      std::uint64_t data_seed = rep_rng.next_u64();
      std::uint64_t learner_seed = rep_rng.next_u64();
      std::uint64_t fold_seed = rep_rng.next_u64();
      Dataset ds;
      try {
        ds = generate(d, n, data_seed);
      } catch (const std::exception& e) {
        for (int s = 0; s < S; ++s) cells[s].reps[r].error = e.what();
        return;
      }

      if (want_cv) {
        try {
          NuisanceSet tns = exact_dgp_nuisances(d, cfg.a0, ds);
          RatioProducts trp = ratio_products(d.part, tns);
          EifParts te = compute_eif(d.part, tns, trp, truth);
          cv[r] = te.total.mean();
          if (n == n_max) {
            PhiAcc acc;
            acc.count = te.total.size();
            acc.sum = te.total.sum();
            acc.sumsq = te.total.squaredNorm();
            phi_acc[r] = acc;
          }
        } catch (const std::exception&) {
        }
      }

      std::vector<NuisanceSet> group_ns(group_head.size());
      std::vector<std::string> group_err(group_head.size());
      for (std::size_t gidx = 0; gidx < group_head.size(); ++gidx) {
        const EstimatorSpec& head = cfg.estimators[group_head[gidx]];
        LearnerConfig lc = head.learners;
        lc.seed = learner_seed + gidx;
        try {
          if (head.crossfit > 0) {
            FoldPlan plan = FoldPlan::make(n, head.crossfit, fold_seed);
            group_ns[gidx] = evaluate_nuisances(ds, d.binding, d.graph, d.part,
                                                head.strategy, cfg.a0, lc, &plan);
          } else {
            group_ns[gidx] = evaluate_nuisances(ds, d.binding, d.graph, d.part,
                                                head.strategy, cfg.a0, lc);
          }
        } catch (const std::exception& e) {
          group_err[gidx] = e.what();
        }
      }

      for (int s = 0; s < S; ++s) {
        const EstimatorSpec& spec = cfg.estimators[s];
        ReplicationRecord& rec = cells[s].reps[r];
        int gidx = group_of[s];
        if (!group_err[gidx].empty()) {
          rec.error = group_err[gidx];
          continue;
        }
        try {
          EstimateReport rep;
          switch (spec.estimator) {
            case EstimatorKind::plugin:
              rep = plug_in(d.part, group_ns[gidx]);
              break;
            case EstimatorKind::onestep:
              rep = one_step(d.part, group_ns[gidx]);
              break;
            case EstimatorKind::tmle: {
              TmleResult tr = tmle(d.part, group_ns[gidx], spec.tmle);
              rep = tr.report;
              break;
            }
          }
          rec.psi = rep.psi;
          rec.ok = std::isfinite(rep.psi);
          rec.converged = rep.converged;
          if (rep.se) {
            rec.se = *rep.se;
            rec.lo = *rep.ci_lower;
            rec.hi = *rep.ci_upper;
            rec.has_ci = true;
          }
          if (!rec.ok) rec.error = "non-finite estimate";
        } catch (const std::exception& e) {
          rec.error = e.what();
        }
      }
    });

    // merge the EIF variance accumulators in replication order
    if (cfg.true_eif_control && n == n_max) {
      double count = 0, sum = 0, sumsq = 0;
      for (const auto& acc : phi_acc) {
        count += static_cast<double>(acc.count);
        sum += acc.sum;
        sumsq += acc.sumsq;
      }
      if (count > 1) {
        double mean = sum / count;
        result.var_phi = (sumsq - count * mean * mean) / (count - 1);
      }
      result.cv = cv;
    }

    for (int s = 0; s < S; ++s) {
      const EstimatorSpec& spec = cfg.estimators[s];
      MetricsRow row;
      row.dgp = dgp_name(cfg.dgp);
      row.estimator = estimator_name(spec.estimator);
      row.strategy = strategy_name(spec.strategy);
      row.crossfit = spec.crossfit;
      row.n = n;
      row.replications = R;
      row.truth = truth;

      double sum = 0, sum_cv = 0, sum_sq = 0, width = 0;
      int ok = 0, with_ci = 0, covered = 0, cv_ok = 0;
      for (int r = 0; r < R; ++r) {
        const ReplicationRecord& rec = cells[s].reps[r];
        if (!rec.ok) {
          ++row.failures;
          continue;
        }
        ++ok;
        if (!rec.converged) ++row.nonconverged;
        sum += rec.psi;
        sum_sq += (rec.psi - truth) * (rec.psi - truth);
        if (std::isfinite(cv[r])) {
          sum_cv += rec.psi - cv[r];
          ++cv_ok;
        }
        if (rec.has_ci) {
          ++with_ci;
          width += rec.hi - rec.lo;
          if (rec.lo <= truth && truth <= rec.hi) ++covered;
        }
      }
      if (ok > 0) {
        double mean = sum / ok;
        row.bias = mean - truth;
        row.mse = sum_sq / ok;
        row.sqrt_n_bias = std::sqrt(static_cast<double>(n)) * row.bias;
        if (cv_ok == ok && ok > 0) {
          row.bias_cv = sum_cv / ok - truth;
          row.sqrt_n_bias_cv = std::sqrt(static_cast<double>(n)) * row.bias_cv;
        }
        if (ok >= 2) {
          double ss = 0;
          for (int r = 0; r < R; ++r) {
            const ReplicationRecord& rec = cells[s].reps[r];
            if (rec.ok) ss += (rec.psi - mean) * (rec.psi - mean);
          }
          row.sd = std::sqrt(ss / (ok - 1));
          row.n_variance = static_cast<double>(n) * ss / (ok - 1);
        } else {
          row.notes.push_back(
              "standard deviation requires at least 2 successful replications");
        }
        if (with_ci > 0) {
          row.coverage = static_cast<double>(covered) / with_ci;
          row.ci_width = width / with_ci;
        }
      } else {
        row.notes.push_back("all replications failed");
      }
      row.var_phi = result.var_phi;
      result.rows.push_back(row);
      result.cells.push_back(std::move(cells[s]));
    }
  }
  // var_phi is pooled at the largest n; propagate to every row
  for (auto& row : result.rows) row.var_phi = result.var_phi;
  return result;
}

inline ExperimentResult consistency_curve(DgpName name,
                                          const std::vector<EstimatorSpec>& specs,
                                          const std::vector<int>& n_grid, int R,
                                          std::uint64_t seed, int threads = 0) {
  if (n_grid.empty())
    throw std::invalid_argument("consistency_curve: empty sample size grid");
  for (std::size_t i = 1; i < n_grid.size(); ++i)
    if (n_grid[i] <= n_grid[i - 1])
      throw std::invalid_argument("consistency_curve: grid must increase");
  ExperimentConfig cfg;
  cfg.dgp = name;
  cfg.sample_sizes = n_grid;
  cfg.replications = R;
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.estimators = specs;
  cfg.true_eif_control = true;
  return run_experiment(cfg);
}

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

inline void metrics_to_csv(const std::vector<MetricsRow>& rows,
                           std::ostream& out) {
  out << "dgp,estimator,strategy,crossfit,n,replications,failures,nonconverged,"
         "truth,bias,bias_cv,sd,mse,coverage,ci_width,sqrt_n_bias,"
         "sqrt_n_bias_cv,n_variance,var_phi\n";
  for (const auto& r : rows) {
    out << r.dgp << ',' << r.estimator << ',' << r.strategy << ',' << r.crossfit
        << ',' << r.n << ',' << r.replications << ',' << r.failures << ','
        << r.nonconverged << ',' << csv_num(r.truth) << ',' << csv_num(r.bias)
        << ',' << csv_num(r.bias_cv) << ',' << csv_num(r.sd) << ','
        << csv_num(r.mse) << ',' << csv_num(r.coverage) << ','
        << csv_num(r.ci_width) << ',' << csv_num(r.sqrt_n_bias) << ','
        << csv_num(r.sqrt_n_bias_cv) << ',' << csv_num(r.n_variance) << ','
        << csv_num(r.var_phi) << '\n';
  }
}

inline void metrics_to_csv(const std::vector<MetricsRow>& rows,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  metrics_to_csv(rows, out);
}

inline nlohmann::json metrics_to_json(const std::vector<MetricsRow>& rows) {
  auto num = [](double v) {
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"dgp", r.dgp},
                   {"estimator", r.estimator},
                   {"strategy", r.strategy},
                   {"crossfit", r.crossfit},
                   {"n", r.n},
                   {"replications", r.replications},
                   {"failures", r.failures},
                   {"nonconverged", r.nonconverged},
                   {"truth", num(r.truth)},
                   {"bias", num(r.bias)},
                   {"bias_cv", num(r.bias_cv)},
                   {"sd", num(r.sd)},
                   {"mse", num(r.mse)},
                   {"coverage", num(r.coverage)},
                   {"ci_width", num(r.ci_width)},
                   {"sqrt_n_bias", num(r.sqrt_n_bias)},
                   {"sqrt_n_bias_cv", num(r.sqrt_n_bias_cv)},
                   {"n_variance", num(r.n_variance)},
                   {"var_phi", num(r.var_phi)},
                   {"notes", r.notes}});
  }
  return arr;
}

// gnuplot-style blocks: one indexed block per (estimator, strategy, crossfit)
inline void consistency_to_dat(const std::vector<MetricsRow>& rows,
                               std::ostream& out) {
  std::vector<std::string> seen;
  for (const auto& r : rows) {
    std::string key = r.estimator + "/" + r.strategy +
                      (r.crossfit > 0 ? "/cv" + std::to_string(r.crossfit) : "");
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) seen.push_back(key);
  }
  bool first = true;
  for (const auto& key : seen) {
    if (!first) out << "\n\n";
    first = false;
    out << "# " << key << "\n# n sqrt_n_abs_bias n_variance var_phi\n";
    for (const auto& r : rows) {
      std::string rkey = r.estimator + "/" + r.strategy +
                         (r.crossfit > 0 ? "/cv" + std::to_string(r.crossfit) : "");
      if (rkey != key) continue;
      out << r.n << ' ' << std::abs(r.sqrt_n_bias) << ' '
          << csv_num(r.n_variance) << ' ' << csv_num(r.var_phi) << '\n';
    }
  }
}

inline void consistency_to_dat(const std::vector<MetricsRow>& rows,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  consistency_to_dat(rows, out);
}

}  // namespace primalfix
