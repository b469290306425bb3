#pragma once

// Shared fixtures for the test binaries: random hidden-variable DAGs over
// binary vertices with enumerable joint laws, a few hand-built graphs, and
// small helpers for scoring fitted nuisance sets.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "primalfix/estimators.hpp"
#include "primalfix/oracle.hpp"
#include "primalfix/rng.hpp"
#include "primalfix/simulation.hpp"

namespace pftest {

using namespace primalfix;

// DAG over binary vertices with explicit conditional tables, parents always
// earlier in `order`
struct CptDag {
  Dag dag;
  std::vector<std::string> order;
  std::vector<bool> hidden;
  std::map<std::string, std::vector<std::string>> parents;
  std::map<std::string, std::vector<double>> p1;  // indexed by parent bits
};

inline CptDag random_cpt_dag(Rng& rng, int n_obs, int n_hid) {
  CptDag cd;
  int total = n_obs + n_hid;
  std::vector<int> slots(total, 0);
  for (int i = 0; i < total; ++i) slots[i] = i;
  rng.shuffle(slots);
  std::vector<bool> hid(total, false);
  for (int i = 0; i < n_hid; ++i) hid[slots[i]] = true;

  int obs_seen = 0, hid_seen = 0;
  for (int i = 0; i < total; ++i) {
    std::string name = hid[i] ? "H" + std::to_string(++hid_seen)
                              : "V" + std::to_string(++obs_seen);
    cd.order.push_back(name);
    cd.hidden.push_back(hid[i]);
    cd.dag.add_vertex(name, 1, hid[i]);
  }
  for (int j = 1; j < total; ++j) {
    std::vector<std::string> pa;
    for (int i = 0; i < j; ++i)
      if (rng.uniform() < 0.5) {
        cd.dag.add_edge(cd.order[i], cd.order[j]);
        pa.push_back(cd.order[i]);
      }
    cd.parents[cd.order[j]] = pa;
  }
  cd.parents[cd.order[0]] = {};
  for (const auto& v : cd.order) {
    int np = static_cast<int>(cd.parents[v].size());
    std::vector<double> table(std::size_t{1} << np);
    for (auto& p : table) p = 0.15 + 0.7 * rng.uniform();
    cd.p1[v] = table;
  }
  return cd;
}

inline DiscreteLaw joint_law(const CptDag& cd) {
  DiscreteLaw law;
  law.vars = cd.order;
  law.card.assign(cd.order.size(), 2);
  law.p.assign(law.cells(), 0.0);
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < cd.order.size(); ++i) pos[cd.order[i]] = i;
  for (std::size_t cell = 0; cell < law.p.size(); ++cell) {
    auto a = law.decode(cell);
    double p = 1.0;
    for (std::size_t i = 0; i < cd.order.size(); ++i) {
      const auto& v = cd.order[i];
      std::size_t idx = 0;
      for (const auto& pa : cd.parents.at(v)) idx = 2 * idx + a[pos[pa]];
      double p1 = cd.p1.at(v)[idx];
      p *= a[i] ? p1 : 1.0 - p1;
    }
    law.p[cell] = p;
  }
  return law;
}

inline DiscreteLaw marginalize(const DiscreteLaw& law,
                               const std::vector<std::string>& keep) {
  DiscreteLaw out;
  out.vars = keep;
  std::vector<int> src;
  for (const auto& v : keep) {
    src.push_back(law.var_index(v));
    out.card.push_back(law.card[src.back()]);
  }
  out.p.assign(out.cells(), 0.0);
  for (std::size_t cell = 0; cell < law.p.size(); ++cell) {
    if (law.p[cell] == 0) continue;
    auto a = law.decode(cell);
    std::vector<int> sub(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) sub[i] = a[src[i]];
    out.p[out.index(sub)] += law.p[cell];
  }
  return out;
}

// random primal-fixable problem: latent projection of a hidden-variable DAG
// plus the exact observed law
struct LawFixture {
  Admg graph;
  DiscreteLaw law;
  std::string treatment, outcome;
  CausalPartition part;
};

inline std::optional<LawFixture> try_random_fixture(Rng& rng, int max_obs = 5) {
  int n_obs = 3 + static_cast<int>(rng.below(max_obs - 2));
  int n_hid = static_cast<int>(rng.below(3));
  CptDag cd = random_cpt_dag(rng, n_obs, n_hid);

  std::vector<std::string> obs;
  for (std::size_t i = 0; i < cd.order.size(); ++i)
    if (!cd.hidden[i]) obs.push_back(cd.order[i]);

  LawFixture f;
  f.graph = latent_project(cd.dag);
  f.outcome = obs.back();
  f.treatment = obs[rng.below(obs.size() - 1)];
  if (!primal_fixable(f.graph, f.treatment)) return std::nullopt;
  f.law = marginalize(joint_law(cd), obs);
  f.part = partition_mlx(f.graph, f.treatment, f.outcome);
  return f;
}

inline LawFixture random_fixture(Rng& rng, int max_obs = 5) {
  for (int tries = 0; tries < 1000; ++tries) {
    auto f = try_random_fixture(rng, max_obs);
    if (f) return *f;
  }
  throw std::runtime_error("random_fixture: no primal-fixable draw in 1000 tries");
}

// per-component empirical score means of the influence function at the
// current nuisance values
struct ComponentScores {
  double a = 0, y = 0, total = 0;
  std::vector<double> z;
};

inline ComponentScores component_scores(const CausalPartition& part,
                                        const NuisanceSet& ns) {
  RatioProducts rp = ratio_products(part, ns);
  double psi = plug_in_value(part, ns);
  EifParts e = compute_eif(part, ns, rp, psi);
  ComponentScores s;
  s.a = e.phi_A.mean();
  s.y = e.phi_Y.mean();
  for (int k = 0; k < part.k(); ++k) s.z.push_back(e.phi_Z.col(k).mean());
  s.total = e.total.mean();
  return s;
}

// back-door problem: two covariates, no post-treatment vertices
inline Admg backdoor_graph() {
  Admg g;
  g.add_vertex("X1");
  g.add_vertex("X2");
  g.add_vertex("A");
  g.add_vertex("Y");
  g.add_di_edge("X1", "A");
  g.add_di_edge("X2", "A");
  g.add_di_edge("X1", "Y");
  g.add_di_edge("X2", "Y");
  g.add_di_edge("A", "Y");
  return g;
}

inline Dataset draw_backdoor(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd x1(n), x2(n), a(n), y(n);
  for (int i = 0; i < n; ++i) {
    x1[i] = rng.uniform();
    x2[i] = rng.uniform();
    a[i] = rng.bernoulli(expit(x1[i] - x2[i] + 0.3)) ? 1.0 : 0.0;
    y[i] = rng.normal(1 + x1[i] + 2 * x2[i] + a[i], 1);
  }
  Dataset ds;
  ds.add_column("X1", x1);
  ds.add_column("X2", x2);
  ds.add_column("A", a);
  ds.add_column("Y", y);
  return ds;
}

// front-door with one shared hidden cause of A and Y
inline CptDag frontdoor_cpt_dag() {
  CptDag cd;
  cd.order = {"H", "A", "M", "Y"};
  cd.hidden = {true, false, false, false};
  cd.dag.add_vertex("H", 1, true);
  cd.dag.add_vertex("A");
  cd.dag.add_vertex("M");
  cd.dag.add_vertex("Y");
  cd.dag.add_edge("H", "A");
  cd.dag.add_edge("H", "Y");
  cd.dag.add_edge("A", "M");
  cd.dag.add_edge("M", "Y");
  cd.parents["H"] = {};
  cd.parents["A"] = {"H"};
  cd.parents["M"] = {"A"};
  cd.parents["Y"] = {"H", "M"};
  cd.p1["H"] = {0.6};
  cd.p1["A"] = {0.3, 0.8};
  cd.p1["M"] = {0.25, 0.7};
  cd.p1["Y"] = {0.2, 0.6, 0.5, 0.9};  // parent bits (H, M)
  return cd;
}

// textbook front-door value computed straight from observed conditionals
inline double frontdoor_psi(const DiscreteLaw& law, int a0) {
  int ai = law.var_index("A"), mi = law.var_index("M"), yi = law.var_index("Y");
  auto marg = [&](int var, int val) {
    std::vector<int> g(law.vars.size(), -1);
    g[var] = val;
    return law.mass(g);
  };
  double psi = 0;
  for (int m = 0; m < 2; ++m) {
    std::vector<int> ga(law.vars.size(), -1);
    ga[ai] = a0;
    double p_m_a0 = law.cond_prob(mi, m, ga);
    for (int ap = 0; ap < 2; ++ap) {
      std::vector<int> gy(law.vars.size(), -1);
      gy[ai] = ap;
      gy[mi] = m;
      psi += p_m_a0 * marg(ai, ap) * law.cond_mean(yi, gy);
    }
  }
  return psi;
}

// binary-outcome district DGP on the one-vertex-M analogue of the yinL graph
inline Admg binary_district_graph() {
  Admg g;
  g.add_vertex("X");
  g.add_vertex("A");
  g.add_vertex("M");
  g.add_vertex("L");
  g.add_vertex("Y");
  for (const char* v : {"A", "M", "L", "Y"}) g.add_di_edge("X", v);
  g.add_di_edge("A", "M");
  g.add_di_edge("A", "L");
  g.add_di_edge("M", "L");
  g.add_di_edge("M", "Y");
  g.add_di_edge("L", "Y");
  g.add_bi_edge("A", "Y");
  return g;
}

inline Dataset draw_binary_district(int n, std::uint64_t seed, bool weak) {
  Rng rng(seed);
  Eigen::VectorXd x(n), a(n), m(n), l(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.uniform();
    double pa = weak ? expit(9 * x[i] - 6) : expit(4 * x[i] - 2);
    a[i] = rng.bernoulli(pa) ? 1.0 : 0.0;
    m[i] = rng.bernoulli(expit(x[i] + a[i] - 1)) ? 1.0 : 0.0;
    l[i] = rng.bernoulli(expit(2 * x[i] - a[i] + m[i] - 1)) ? 1.0 : 0.0;
    y[i] = rng.bernoulli(expit(x[i] + m[i] - l[i] + a[i] - 1)) ? 1.0 : 0.0;
  }
  Dataset ds;
  ds.add_column("X", x);
  ds.add_column("A", a);
  ds.add_column("M", m);
  ds.add_column("L", l);
  ds.add_column("Y", y);
  return ds;
}

}  // namespace pftest
