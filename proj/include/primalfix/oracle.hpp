#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "primalfix/dataset.hpp"
#include "primalfix/graph.hpp"
#include "primalfix/nuisance.hpp"
#include "primalfix/rng.hpp"

namespace primalfix {

// Joint probability table over small discrete variables, mixed radix with the
// last variable fastest. The exact-summation oracles below are meant for
// cross-checking the estimators on laws where everything can be enumerated.
struct DiscreteLaw {
  std::vector<std::string> vars;
  std::vector<int> card;
  std::vector<double> p;

  int var_index(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(vars.size()); ++i)
      if (vars[i] == name) return i;
    throw std::invalid_argument("law has no variable " + name);
  }

  std::size_t cells() const {
    std::size_t n = 1;
    for (int c : card) n *= c;
    return n;
  }

  std::size_t index(const std::vector<int>& assign) const {
    std::size_t idx = 0;
    for (std::size_t v = 0; v < vars.size(); ++v) idx = idx * card[v] + assign[v];
    return idx;
  }

  std::vector<int> decode(std::size_t cell) const {
    std::vector<int> assign(vars.size());
    for (int v = static_cast<int>(vars.size()) - 1; v >= 0; --v) {
      assign[v] = static_cast<int>(cell % card[v]);
      cell /= card[v];
    }
    return assign;
  }

  void validate() const {
    if (vars.size() != card.size())
      throw std::invalid_argument("law: vars and card sizes differ");
    if (p.size() != cells())
      throw std::invalid_argument("law: table has " + std::to_string(p.size()) +
                                  " entries, expected " + std::to_string(cells()));
    double total = 0;
    for (double v : p) {
      if (v < 0) throw std::invalid_argument("law: negative probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("law: probabilities sum to " + std::to_string(total));
  }

  // partial assignment rendered as {X=0, A=1} for error messages
  std::string describe(const std::vector<int>& partial) const {
    std::string out = "{";
    bool first = true;
    for (std::size_t v = 0; v < vars.size(); ++v) {
      if (partial[v] < 0) continue;
      if (!first) out += ", ";
      first = false;
      out += vars[v] + "=" + std::to_string(partial[v]);
    }
    return out + "}";
  }

  // total mass of cells matching the partial assignment (-1 = free)
  double mass(const std::vector<int>& partial) const {
    double total = 0;
    for (std::size_t cell = 0; cell < p.size(); ++cell) {
      if (p[cell] == 0) continue;
      auto a = decode(cell);
      bool ok = true;
      for (std::size_t v = 0; v < vars.size() && ok; ++v)
        ok = partial[v] < 0 || partial[v] == a[v];
      if (ok) total += p[cell];
    }
    return total;
  }

  double cond_prob(int var, int value, std::vector<int> given) const {
    double den = mass(given);
    if (den <= 0)
      throw std::runtime_error("positivity violation: zero-mass conditioning event " +
                               describe(given));
    given[var] = value;
    return mass(given) / den;
  }

  double cond_mean(int var, const std::vector<int>& given) const {
    double m = 0;
    for (int v = 1; v < card[var]; ++v) {
      std::vector<int> g = given;
      g[var] = -1;
      m += v * cond_prob(var, v, g);
    }
    return m;
  }
};

inline DiscreteLaw law_from_json(const nlohmann::json& j) {
  DiscreteLaw law;
  for (const auto& v : j.at("vars")) law.vars.push_back(v.get<std::string>());
  if (j.contains("card"))
    for (const auto& c : j.at("card")) law.card.push_back(c.get<int>());
  else
    law.card.assign(law.vars.size(), 2);
  for (const auto& v : j.at("p")) law.p.push_back(v.get<double>());
  law.validate();
  return law;
}

inline nlohmann::json law_to_json(const DiscreteLaw& law) {
  return {{"vars", law.vars}, {"card", law.card}, {"p", law.p}};
}

inline Dataset law_enumerate(const DiscreteLaw& law) {
  Dataset ds;
  std::size_t n = law.cells();
  for (std::size_t v = 0; v < law.vars.size(); ++v) {
    Eigen::VectorXd col(n);
    for (std::size_t cell = 0; cell < n; ++cell) col[cell] = law.decode(cell)[v];
    ds.add_column(law.vars[v], col);
  }
  return ds;
}

inline Eigen::VectorXd law_weights(const DiscreteLaw& law) {
  return Eigen::Map<const Eigen::VectorXd>(law.p.data(), law.p.size());
}

inline Dataset law_sample(const DiscreteLaw& law, int n, Rng& rng) {
  std::vector<double> cum(law.p.size());
  double acc = 0;
  for (std::size_t i = 0; i < law.p.size(); ++i) {
    acc += law.p[i];
    cum[i] = acc;
  }
  std::vector<std::vector<double>> cols(law.vars.size(),
                                        std::vector<double>(n, 0.0));
  for (int r = 0; r < n; ++r) {
    double u = rng.uniform() * acc;
    std::size_t cell =
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (cell >= law.p.size()) cell = law.p.size() - 1;
    auto a = law.decode(cell);
    for (std::size_t v = 0; v < law.vars.size(); ++v) cols[v][r] = a[v];
  }
  Dataset ds;
  for (std::size_t v = 0; v < law.vars.size(); ++v)
    ds.add_column(law.vars[v],
                  Eigen::Map<Eigen::VectorXd>(cols[v].data(), n));
  return ds;
}

inline DiscreteLaw empirical_law(const Dataset& ds,
                                 const std::vector<std::string>& vars) {
  DiscreteLaw law;
  law.vars = vars;
  law.card.assign(vars.size(), 2);
  for (const auto& v : vars)
    for (int r = 0; r < ds.n(); ++r) {
      double val = ds.col(v)[r];
      if (val != 0.0 && val != 1.0)
        throw std::invalid_argument("empirical_law: column " + v + " is not binary");
    }
  law.p.assign(law.cells(), 0.0);
  std::vector<int> assign(vars.size());
  for (int r = 0; r < ds.n(); ++r) {
    for (std::size_t v = 0; v < vars.size(); ++v)
      assign[v] = static_cast<int>(ds.col(vars[v])[r]);
    law.p[law.index(assign)] += 1.0 / ds.n();
  }
  return law;
}

namespace detail {

// exact sequential regressions over a discrete law, memoized on the pillow
// values each level actually depends on
struct OracleRecursion {
  const DiscreteLaw& law;
  const Admg& g;
  const CausalPartition& part;
  int a0_val, a1_val;
  int a_idx, y_idx;
  std::vector<int> z_idx;
  std::vector<std::vector<int>> z_pillow;  // law var indices, A excluded
  std::vector<int> y_pillow;
  std::map<std::pair<int, std::vector<int>>, double> memo;

  OracleRecursion(const DiscreteLaw& l, const Admg& gr, const CausalPartition& p,
                  double a0)
      : law(l), g(gr), part(p) {
    a0_val = static_cast<int>(a0);
    a1_val = 1 - a0_val;
    a_idx = law.var_index(part.treatment);
    y_idx = law.var_index(part.outcome);
    for (const auto& z : part.z) z_idx.push_back(law.var_index(z));
    auto pillow_idx = [&](const std::string& v) {
      std::vector<int> out;
      for (const auto& m : markov_pillow(g, v, part.order))
        if (m != part.treatment) out.push_back(law.var_index(m));
      return out;
    };
    for (const auto& z : part.z) z_pillow.push_back(pillow_idx(z));
    y_pillow = pillow_idx(part.outcome);
  }

  int level_val(Level l) const { return l == Level::a0 ? a0_val : a1_val; }

  double propensity_a1(const std::vector<int>& assign) const {
    std::vector<int> given(law.vars.size(), -1);
    for (const auto& m : markov_pillow(g, part.treatment, part.order))
      given[law.var_index(m)] = assign[law.var_index(m)];
    return law.cond_prob(a_idx, a1_val, given);
  }

  double mu(const std::vector<int>& assign) const {
    std::vector<int> given(law.vars.size(), -1);
    for (int v : y_pillow) given[v] = assign[v];
    given[a_idx] = level_val(part.y_level);
    return law.cond_mean(y_idx, given);
  }

  // B_k as a function of the full assignment; k == K means mu
  double B(int k, const std::vector<int>& assign) {
    const int K = part.k();
    if (k == K) return mu(assign);
    std::vector<int> key_vals;
    for (int v : z_pillow[k]) key_vals.push_back(assign[v]);
    auto key = std::make_pair(k, key_vals);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;

    std::vector<int> given(law.vars.size(), -1);
    for (int v : z_pillow[k]) given[v] = assign[v];
    given[a_idx] = level_val(part.z_levels[k]);
    double den = law.mass(given);
    if (den <= 0)
      throw std::runtime_error("positivity violation: zero-mass conditioning event " +
                               law.describe(given));
    double total = 0;
    for (std::size_t cell = 0; cell < law.p.size(); ++cell) {
      if (law.p[cell] == 0) continue;
      auto a = law.decode(cell);
      bool ok = true;
      for (std::size_t v = 0; v < law.vars.size() && ok; ++v)
        ok = given[v] < 0 || given[v] == a[v];
      if (!ok) continue;
      total += law.p[cell] * B(k + 1, a);
    }
    double val = total / den;
    memo[key] = val;
    return val;
  }
};

}  // namespace detail

// exact value of the identification functional: the sequential-regression
// recursion evaluated by exhaustive summation over the law
inline double brute_force_psi(const DiscreteLaw& law, const Admg& g,
                              const CausalPartition& part, double a0) {
  detail::OracleRecursion rec(law, g, part, a0);
  double psi = 0;
  for (std::size_t cell = 0; cell < law.p.size(); ++cell) {
    if (law.p[cell] == 0) continue;
    auto assign = law.decode(cell);
    double b1 = rec.B(0, assign);
    double pi1 = rec.propensity_a1(assign);
    double term2 = assign[rec.a_idx] == rec.a0_val ? assign[rec.y_idx] : 0.0;
    psi += law.p[cell] * (pi1 * b1 + term2);
  }
  return psi;
}

// the same functional written as an explicit product over pillow conditionals;
// agrees with brute_force_psi on laws Markov to the graph
inline double enumerated_psi(const DiscreteLaw& law, const Admg& g,
                             const CausalPartition& part, double a0) {
  detail::OracleRecursion rec(law, g, part, a0);
  const int K = part.k();
  double psi = 0;
  for (std::size_t cell = 0; cell < law.p.size(); ++cell) {
    if (law.p[cell] == 0) continue;
    auto outer = law.decode(cell);

    // sum over assignments of the post-treatment block at fixed pre-treatment
    std::vector<int> zvals(K, 0);
    double inner = 0;
    while (true) {
      std::vector<int> assign = outer;
      for (int k = 0; k < K; ++k) assign[rec.z_idx[k]] = zvals[k];
      double w = 1;
      for (int k = 0; k < K; ++k) {
        std::vector<int> given(law.vars.size(), -1);
        for (int v : rec.z_pillow[k]) given[v] = assign[v];
        given[rec.a_idx] = rec.level_val(part.z_levels[k]);
        w *= law.cond_prob(rec.z_idx[k], zvals[k], given);
        if (w == 0) break;
      }
      if (w > 0) inner += w * rec.mu(assign);
      int k = K - 1;
      for (; k >= 0; --k) {
        if (++zvals[k] < law.card[rec.z_idx[k]]) break;
        zvals[k] = 0;
      }
      if (k < 0) break;
    }

    double term2 = outer[rec.a_idx] == rec.a0_val ? outer[rec.y_idx] : 0.0;
    psi += law.p[cell] * (rec.propensity_a1(outer) * inner + term2);
  }
  return psi;
}

// nuisance caches holding the law's exact conditionals, evaluated on the rows
// of `ds` (columns named like the law variables, binary coded)
inline NuisanceSet exact_nuisances(const DiscreteLaw& law, const Admg& g,
                                   const CausalPartition& part, double a0,
                                   Strategy strategy, const Dataset& ds) {
  detail::OracleRecursion rec(law, g, part, a0);
  const int K = part.k();
  NuisanceSet ns;
  ns.strategy = strategy;
  ns.n = ds.n();
  ns.a0 = a0;
  ns.a1 = 1 - a0;
  ns.treat = ds.col(part.treatment);
  ns.y = ds.col(part.outcome);
  ns.binary_outcome = ds.kind(part.outcome) == ColumnKind::binary;
  ns.pi.resize(ns.n);
  ns.mu.resize(ns.n);
  ns.B.resize(ns.n, K);
  ns.fr.resize(ns.n, K);
  if (strategy == Strategy::bayes) {
    ns.h.resize(ns.n, K);
    ns.g.resize(ns.n, K);
  }

  std::vector<int> assign(law.vars.size());
  for (int r = 0; r < ns.n; ++r) {
    for (std::size_t v = 0; v < law.vars.size(); ++v)
      assign[v] = static_cast<int>(ds.col(law.vars[v])[r]);
    ns.pi[r] = rec.propensity_a1(assign);
    ns.mu[r] = rec.mu(assign);
    for (int k = 0; k < K; ++k) {
      ns.B(r, k) = rec.B(k, assign);
      int lvl = rec.level_val(part.z_levels[k]);
      std::vector<int> given(law.vars.size(), -1);
      for (int v : rec.z_pillow[k]) given[v] = assign[v];
      if (strategy == Strategy::bayes) {
        std::vector<int> gh = given;
        gh[rec.z_idx[k]] = assign[rec.z_idx[k]];
        double h = law.cond_prob(rec.a_idx, lvl, gh);
        double gg = law.cond_prob(rec.a_idx, lvl, given);
        ns.h(r, k) = h;
        ns.g(r, k) = gg;
        ns.fr(r, k) = std::max((h / (1 - h)) * ((1 - gg) / gg), kRatioFloor);
      } else {
        std::vector<int> gnum = given, gden = given;
        gnum[rec.a_idx] = lvl;
        gden[rec.a_idx] = 1 - lvl;
        double num = law.cond_prob(rec.z_idx[k], assign[rec.z_idx[k]], gnum);
        double den = law.cond_prob(rec.z_idx[k], assign[rec.z_idx[k]], gden);
        if (den <= 0)
          throw std::runtime_error("positivity violation: zero-density point " +
                                   law.describe(gden));
        ns.fr(r, k) = std::max(num / den, kRatioFloor);
      }
    }
  }
  return ns;
}

}  // namespace primalfix
