#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "primalfix/nuisance.hpp"
#include "primalfix/simulation.hpp"

#include "support.hpp"

using namespace primalfix;

TEST_CASE("fold plans partition the rows evenly") {
  FoldPlan p = FoldPlan::make(103, 5, 11);
  REQUIRE(p.folds == 5);
  REQUIRE(static_cast<int>(p.assign.size()) == 103);

  std::set<int> seen;
  int minsz = 103, maxsz = 0;
  for (int f = 0; f < 5; ++f) {
    auto rows = p.fold_rows(f);
    int sz = static_cast<int>(rows.size());
    minsz = std::min(minsz, sz);
    maxsz = std::max(maxsz, sz);
    for (int r : rows) {
      CHECK(seen.insert(r).second);  // no row in two folds
    }
    auto comp = p.complement_rows(f);
    CHECK(static_cast<int>(comp.size()) == 103 - sz);
  }
  CHECK(static_cast<int>(seen.size()) == 103);
  CHECK(maxsz - minsz <= 1);

  FoldPlan q = FoldPlan::make(103, 5, 11);
  CHECK(q.assign == p.assign);
  FoldPlan r = FoldPlan::make(103, 5, 12);
  CHECK(r.assign != p.assign);

  CHECK_THROWS_AS(FoldPlan::make(10, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(FoldPlan::make(3, 4, 0), std::invalid_argument);
}

TEST_CASE("without drops listed names and the extra") {
  CHECK(without({"X", "A", "M"}, {"A"}) == std::vector<std::string>{"X", "M"});
  CHECK(without({"X", "A", "M"}, {"A"}, "M") == std::vector<std::string>{"X"});
  CHECK(without({"X"}, {}, "") == std::vector<std::string>{"X"});
}

namespace {

CausalPartition hand_partition(std::vector<Level> zl, Level yl) {
  CausalPartition p;
  for (std::size_t i = 0; i < zl.size(); ++i)
    p.z.push_back("Z" + std::to_string(i + 1));
  p.z_levels = std::move(zl);
  p.y_level = yl;
  return p;
}

NuisanceSet hand_nuisances(int n, const Eigen::VectorXd& pi,
                           const Eigen::MatrixXd& fr) {
  NuisanceSet ns;
  ns.n = n;
  ns.pi = pi;
  ns.fr = fr;
  return ns;
}

}  // namespace

TEST_CASE("ratio products accumulate along the order") {
  int n = 3;
  Eigen::VectorXd pi(n);
  pi << 0.5, 0.8, 0.25;
  Eigen::MatrixXd fr(n, 2);
  fr << 2.0, 3.0, 0.5, 4.0, 1.5, 0.2;

  Eigen::VectorXd odds(n);
  for (int i = 0; i < n; ++i) odds[i] = pi[i] / (1.0 - pi[i]);

  SECTION("mediator then district vertex, outcome weight picks the district side") {
    // Z1 at level a0 (mediator), Z2 at level a1 (district), Y at level a0
    auto part = hand_partition({Level::a0, Level::a1}, Level::a0);
    auto ns = hand_nuisances(n, pi, fr);
    RatioProducts rp = ratio_products(part, ns);
    for (int i = 0; i < n; ++i) {
      CHECK(rp.fr_A[i] == Catch::Approx(odds[i]));
      CHECK(rp.R_Z(i, 0) == Catch::Approx(odds[i]));          // no district ratios yet
      CHECK(rp.R_Z(i, 1) == Catch::Approx(fr(i, 0)));         // Z1's mediator ratio
      CHECK(rp.R_Y[i] == Catch::Approx(odds[i] * fr(i, 1)));  // odds times Z2's ratio
    }
  }

  SECTION("district then mediator vertex, outcome on the mediator side") {
    auto part = hand_partition({Level::a1, Level::a0}, Level::a1);
    auto ns = hand_nuisances(n, pi, fr);
    RatioProducts rp = ratio_products(part, ns);
    for (int i = 0; i < n; ++i) {
      CHECK(rp.R_Z(i, 0) == Catch::Approx(1.0));  // empty mediator product
      CHECK(rp.R_Z(i, 1) == Catch::Approx(odds[i] * fr(i, 0)));
      CHECK(rp.R_Y[i] == Catch::Approx(fr(i, 1)));  // mediator product only
    }
  }

  SECTION("ratios are floored away from zero") {
    Eigen::VectorXd tiny = Eigen::VectorXd::Constant(n, 1e-12);
    Eigen::MatrixXd frz = Eigen::MatrixXd::Zero(n, 2);
    auto part = hand_partition({Level::a0, Level::a1}, Level::a0);
    auto ns = hand_nuisances(n, tiny, frz);
    RatioProducts rp = ratio_products(part, ns);
    CHECK(rp.fr_A.minCoeff() >= kRatioFloor);
    CHECK(rp.R_Z.minCoeff() >= kRatioFloor);
    CHECK(rp.R_Y.minCoeff() >= kRatioFloor);
  }
}

namespace {

struct FittedYinl {
  const Dgp* d;
  Dataset ds;
  NuisanceSet ns;
};

FittedYinl fit_yinl(Strategy s, int n, std::uint64_t seed,
                    const FoldPlan* folds = nullptr) {
  FittedYinl out;
  out.d = &dgp(DgpName::yinL);
  out.ds = generate(*out.d, n, seed);
  LearnerConfig cfg;
  out.ns = evaluate_nuisances(out.ds, out.d->binding, out.d->graph, out.d->part,
                              s, 0.0, cfg, folds);
  return out;
}

}  // namespace

TEST_CASE("fitted nuisances track the data generating law") {
  auto f = fit_yinl(Strategy::bayes, 50000, 2024);
  const auto& ds = f.ds;
  const auto& ns = f.ns;
  int n = ds.n();

  const auto& x = ds.col("X");
  const auto& m1 = ds.col("M1");
  const auto& m2 = ds.col("M2");
  const auto& l = ds.col("L");

  double pi_err = 0, mu_err = 0, b1_err = 0, b2_err = 0;
  for (int i = 0; i < n; ++i) {
    pi_err += std::abs(ns.pi[i] - expit(1.0 + x[i]));
    // E[Y | X, A=1, M, L] under the observed law
    mu_err += std::abs(ns.mu[i] - (3.0 + l[i] + m1[i] + m2[i] + 2.0 * x[i]));
    // sequential regressions at a0 = 0, a1 = 1
    b1_err += std::abs(ns.B(i, 0) - (4.0 + 9.0 * x[i]));
    b2_err += std::abs(ns.B(i, 1) - (4.0 + 2.0 * m1[i] + 2.0 * m2[i] + 3.0 * x[i]));
  }
  CHECK(pi_err / n < 0.01);
  CHECK(mu_err / n < 0.05);
  CHECK(b1_err / n < 0.10);
  CHECK(b2_err / n < 0.10);

  CHECK(ns.a0 == 0.0);
  CHECK(ns.a1 == 1.0);
  CHECK_FALSE(ns.binary_outcome);
  CHECK(ns.indicator(1.0).sum() == ds.col("A").sum());
}

TEST_CASE("dnorm ratio columns match the hand normal ratio") {
  auto f = fit_yinl(Strategy::dnorm, 50000, 77);
  const auto& ds = f.ds;
  const auto& ns = f.ns;

  // both sequence vertices sit at level a0 = 0, so the fitted ratios are
  // f(z | ., A=0) / f(z | ., A=1)

  // M | A, X is bivariate normal, cov [[2,1],[1,3]]; precision (1/5)[[3,-1],[-1,2]]
  auto log_ratio_m = [](double m1, double m2, double x) {
    auto kern = [&](double a) {
      double d1 = m1 - (1.0 + a + x);
      double d2 = m2 - (-1.0 - 0.5 * a + 2.0 * x);
      return -0.5 * (3.0 * d1 * d1 - 2.0 * d1 * d2 + 2.0 * d2 * d2) / 5.0;
    };
    return kern(0.0) - kern(1.0);
  };

  const auto& x = ds.col("X");
  const auto& m1 = ds.col("M1");
  const auto& m2 = ds.col("M2");
  double err = 0;
  int n = ds.n();
  for (int i = 0; i < n; ++i)
    err += std::abs(std::log(ns.fr(i, 0)) - log_ratio_m(m1[i], m2[i], x[i]));
  CHECK(err / n < 0.05);

  // L | A, M, X is normal with unit variance; the arm gap in the mean is 1
  const auto& l = ds.col("L");
  double err_l = 0;
  for (int i = 0; i < n; ++i) {
    double mean0 = 1.0 + m1[i] + m2[i] + x[i];
    double mean1 = mean0 + 1.0;
    double lr = -0.5 * ((l[i] - mean0) * (l[i] - mean0) -
                        (l[i] - mean1) * (l[i] - mean1));
    err_l += std::abs(std::log(ns.fr(i, 1)) - lr);
  }
  CHECK(err_l / n < 0.05);
}

TEST_CASE("outcome ratio weights have the importance sampling mean") {
  // E[I(A = a_Y) R_Y] telescopes to P(A = a_Y) when the per-vertex ratios are
  // the conditional ones, which is what dnorm and bayes estimate
  auto check = [](Strategy s, double margin) {
    auto f = fit_yinl(s, 20000, 5);
    RatioProducts rp = ratio_products(f.d->part, f.ns);
    Eigen::VectorXd ind =
        f.ns.indicator(f.ns.level_value(f.d->part.y_level));
    double lhs = ind.dot(rp.R_Y) / f.ns.n;
    double rhs = ind.mean();
    CHECK(lhs == Catch::Approx(rhs).margin(margin));
  };
  check(Strategy::bayes, 0.05);
  check(Strategy::dnorm, 0.05);
}

TEST_CASE("densratio refuses arms too small to fit") {
  const Dgp& d = dgp(DgpName::yinL);
  Dataset ds = generate(d, 50, 8);
  Dataset ds2;
  for (const auto& name : ds.col_names()) {
    if (name == "A") {
      Eigen::VectorXd a = Eigen::VectorXd::Ones(50);
      a[0] = a[1] = a[2] = 0.0;  // one arm of size 3
      ds2.add_column(name, a);
    } else {
      ds2.add_column(name, ds.col(name));
    }
  }
  LearnerConfig cfg;
  CHECK_THROWS_WITH(
      evaluate_nuisances(ds2, d.binding, d.graph, d.part, Strategy::densratio,
                         0.0, cfg),
      Catch::Matchers::ContainsSubstring("insufficient arm"));
}

TEST_CASE("cross fitting guards against single arm complements") {
  const Dgp& d = dgp(DgpName::yinL);
  Dataset ds = generate(d, 40, 3);
  // overwrite the treatment so one fold complement sees a single arm
  FoldPlan plan = FoldPlan::make(40, 2, 9);
  Dataset ds2;
  for (const auto& name : ds.col_names()) {
    if (name == "A") {
      Eigen::VectorXd a(40);
      for (int i = 0; i < 40; ++i)
        a[i] = plan.assign[i] == 0 ? 1.0 : 0.0;  // fold 1 complement is all ones
      ds2.add_column(name, a);
    } else {
      ds2.add_column(name, ds.col(name));
    }
  }
  LearnerConfig cfg;
  CHECK_THROWS_WITH(
      evaluate_nuisances(ds2, d.binding, d.graph, d.part, Strategy::bayes, 0.0,
                         cfg, &plan),
      Catch::Matchers::ContainsSubstring("lacks a treatment arm"));
}

TEST_CASE("weak overlap is reported in the diagnostics") {
  // a steep logistic propensity whose fitted values genuinely reach the
  // extremes; the linear weak-overlap DGPs smooth out under a logistic fit
  Admg g = pftest::binary_district_graph();
  CausalPartition part = partition_mlx(g, "A", "Y");
  Dataset ds = pftest::draw_binary_district(4000, 17, true);
  Binding b = default_binding(g, ds);
  LearnerConfig cfg;
  NuisanceSet ns = evaluate_nuisances(ds, b, g, part, Strategy::bayes, 0.0, cfg);
  bool flagged = false;
  for (const auto& msg : ns.diagnostics)
    if (msg.find("weak overlap") != std::string::npos) flagged = true;
  CHECK(flagged);

  const Dgp& d = dgp(DgpName::yinL);
  Dataset strong = generate(d, 4000, 17);
  NuisanceSet ns2 = evaluate_nuisances(strong, d.binding, d.graph, d.part,
                                       Strategy::bayes, 0.0, cfg);
  for (const auto& msg : ns2.diagnostics)
    CHECK(msg.find("weak overlap") == std::string::npos);
}

TEST_CASE("outcome level subsampling approximates the override fit") {
  const Dgp& d = dgp(DgpName::yinL);
  Dataset ds = generate(d, 30000, 21);
  LearnerConfig full;
  LearnerConfig sub;
  sub.fit_on_level_subsample = true;
  NuisanceSet nf =
      evaluate_nuisances(ds, d.binding, d.graph, d.part, Strategy::bayes, 0.0, full);
  NuisanceSet nsub =
      evaluate_nuisances(ds, d.binding, d.graph, d.part, Strategy::bayes, 0.0, sub);
  double gap = (nf.mu - nsub.mu).cwiseAbs().mean();
  CHECK(gap < 0.05);
  double gap_b1 = (nf.B.col(0) - nsub.B.col(0)).cwiseAbs().mean();
  CHECK(gap_b1 < 0.10);
}

TEST_CASE("nuisance evaluation validates its inputs") {
  const Dgp& d = dgp(DgpName::yinL);
  Dataset ds = generate(d, 100, 1);
  LearnerConfig cfg;
  CHECK_THROWS_WITH(
      evaluate_nuisances(ds, d.binding, d.graph, d.part, Strategy::bayes, 0.5, cfg),
      Catch::Matchers::ContainsSubstring("a0 must be 0 or 1"));
}

TEST_CASE("excluding a predictor misspecifies that side only") {
  const Dgp& d = dgp(DgpName::yinL);
  Dataset ds = generate(d, 30000, 33);
  LearnerConfig cfg;
  cfg.ratio_exclude = {"X"};
  NuisanceSet ns =
      evaluate_nuisances(ds, d.binding, d.graph, d.part, Strategy::bayes, 0.0, cfg);
  // pi no longer tracks expit(1 + x), but the outcome side is intact
  const auto& x = ds.col("X");
  const auto& m1 = ds.col("M1");
  const auto& m2 = ds.col("M2");
  double pi_err = 0, b2_err = 0;
  for (int i = 0; i < ds.n(); ++i) {
    pi_err += std::abs(ns.pi[i] - expit(1.0 + x[i]));
    b2_err +=
        std::abs(ns.B(i, 1) - (4.0 + 2.0 * m1[i] + 2.0 * m2[i] + 3.0 * x[i]));
  }
  CHECK(pi_err / ds.n() > 0.02);
  CHECK(b2_err / ds.n() < 0.10);
}
