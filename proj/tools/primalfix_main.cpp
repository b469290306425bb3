// primalfix command line: graph diagnostics, estimation, simulation, oracle

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "primalfix/estimators.hpp"
#include "primalfix/graph_json.hpp"
#include "primalfix/oracle.hpp"
#include "primalfix/simulation.hpp"

namespace pf = primalfix;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v, const char* sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(path + ": json parse error: " + e.what());
  }
  return j;
}

std::shared_ptr<pf::Learner> learner_from_string(const std::string& s) {
  if (s == "glm") return std::make_shared<pf::GlmLearner>();
  if (s == "stumps") return std::make_shared<pf::StumpBoostLearner>();
  throw std::invalid_argument("unknown learner: " + s + " (use glm or stumps)");
}

void fill_learner_config(pf::LearnerConfig& lc, const json& j) {
  if (j.contains("learner")) {
    const json& l = j.at("learner");
    if (l.is_object()) {
      fill_learner_config(lc, l);
    } else {
      auto fit = learner_from_string(l.get<std::string>());
      lc.regression_learner = fit;
      lc.probability_learner = fit;
    }
  }
  if (j.contains("basis"))
    lc.regression_basis = pf::basis_from_string(j.at("basis").get<std::string>());
  if (j.contains("degree")) lc.regression_degree = j.at("degree").get<int>();
  if (j.contains("ratio_basis"))
    lc.ratio_basis = pf::basis_from_string(j.at("ratio_basis").get<std::string>());
  else if (j.contains("basis"))
    lc.ratio_basis = lc.regression_basis;
  if (j.contains("ratio_degree"))
    lc.ratio_degree = j.at("ratio_degree").get<int>();
  else if (j.contains("degree"))
    lc.ratio_degree = lc.regression_degree;
  if (j.contains("regression_exclude"))
    lc.regression_exclude =
        j.at("regression_exclude").get<std::vector<std::string>>();
  if (j.contains("ratio_exclude"))
    lc.ratio_exclude = j.at("ratio_exclude").get<std::vector<std::string>>();
  if (j.contains("fit_on_level_subsample"))
    lc.fit_on_level_subsample = j.at("fit_on_level_subsample").get<bool>();
}

pf::TruthSpec parse_truth(const json& j) {
  pf::TruthSpec t;
  if (j.is_number()) {
    t.mode = pf::TruthSpec::Mode::value;
    t.value = j.get<double>();
    return t;
  }
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    if (s == "analytic") {
      t.mode = pf::TruthSpec::Mode::analytic;
      return t;
    }
    if (s.rfind("monte_carlo(", 0) == 0 && s.back() == ')') {
      t.mode = pf::TruthSpec::Mode::monte_carlo;
      t.mc_n = std::stoll(s.substr(12, s.size() - 13));
      if (t.mc_n < 1) throw std::invalid_argument("truth: draw count must be positive");
      return t;
    }
  }
  throw std::invalid_argument(
      "truth must be a number, \"analytic\", or \"monte_carlo(N)\"");
}

int cmd_graph(const std::string& path, const std::string& treatment,
              const std::string& outcome, const std::string& order_csv) {
  pf::ParsedGraph pg = pf::load_graph_json(path);
  const pf::Admg& g = pg.admg;
  if (pg.was_dag)
    std::cout << "latent projection of a hidden-variable DAG\n";

  std::vector<std::string> names;
  for (const auto& v : g.vertices()) names.push_back(v.name);
  std::cout << "vertices: " << join(names) << "\n";

  std::cout << "districts:";
  for (const auto& dis : g.districts()) {
    std::vector<std::string> ds;
    for (int v : dis) ds.push_back(g.name(v));
    std::cout << " {" << join(ds) << "}";
  }
  std::cout << "\n";

  pf::TopoOrder order;
  if (!order_csv.empty()) {
    std::vector<std::string> toks;
    std::stringstream ss(order_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) toks.push_back(tok);
    order = pf::TopoOrder::from(toks);
  } else {
    order = pf::topological_order(g, treatment, outcome);
  }
  std::cout << "topological order: " << join(order.order, " ") << "\n";

  bool fixable = pf::primal_fixable(g, treatment);
  if (!fixable) {
    std::vector<std::string> offending;
    auto dis = g.district_of(g.id(treatment));
    for (int c : g.children(g.id(treatment)))
      if (dis.count(c)) offending.push_back(g.name(c));
    std::cout << "primal fixable: no (offending children in the district: "
              << join(offending) << ")\n";
    std::cout << "mb-shielded: " << (pf::mb_shielded(g) ? "yes" : "no") << "\n";
    return 1;
  }
  std::cout << "primal fixable: yes\n";

  pf::CausalPartition part =
      pf::partition_mlx(g, treatment, outcome, order_csv.empty() ? nullptr : &order);
  std::cout << "partition: L = {" << join(part.district) << "}; M = {"
            << join(part.mediators) << "}; X = {" << join(part.pre) << "}\n";
  std::cout << "levels:";
  for (int k = 0; k < part.k(); ++k)
    std::cout << " " << part.z[k] << ":" << pf::level_name(part.z_levels[k]);
  std::cout << " " << outcome << ":" << pf::level_name(part.y_level) << "\n";
  std::cout << "mb-shielded: " << (pf::mb_shielded(g) ? "yes" : "no") << "\n";
  return 0;
}

struct EstimateArgs {
  std::string config, graph, data, treatment = "A", outcome = "Y";
  std::string estimator = "tmle", strategy = "bayes", basis, order_csv, out;
  double a0 = 0.0;
  bool ace = false;
  int crossfit = -1;
  std::uint64_t seed = 1;
  bool seed_given = false, a0_given = false, estimator_given = false,
       strategy_given = false, basis_given = false, treatment_given = false,
       outcome_given = false, out_given = false, ace_given = false,
       crossfit_given = false;
};

int cmd_estimate(const EstimateArgs& args) {
  json cfg = json::object();
  if (!args.config.empty()) cfg = load_json_file(args.config);
  auto str = [&](const char* key, const std::string& flag_val, bool flag_given,
                 const std::string& dflt) {
    if (flag_given) return flag_val;
    if (cfg.contains(key)) return cfg.at(key).get<std::string>();
    return dflt;
  };

  std::string graph_path = args.graph.empty() && cfg.contains("graph")
                               ? cfg.at("graph").get<std::string>()
                               : args.graph;
  std::string data_path = args.data.empty() && cfg.contains("data")
                              ? cfg.at("data").get<std::string>()
                              : args.data;
  if (graph_path.empty()) throw std::invalid_argument("estimate: --graph is required");
  if (data_path.empty()) throw std::invalid_argument("estimate: --data is required");

  std::string treatment = str("treatment", args.treatment, args.treatment_given, "A");
  std::string outcome = str("outcome", args.outcome, args.outcome_given, "Y");
  std::string est_name = str("estimator", args.estimator, args.estimator_given, "tmle");
  std::string strat_name = str("strategy", args.strategy, args.strategy_given, "bayes");
  std::string out_path = str("out", args.out, args.out_given, "");

  pf::EstimateOptions opt;
  opt.estimator = pf::estimator_from_string(est_name);
  opt.strategy = pf::strategy_from_string(strat_name);
  fill_learner_config(opt.learners, cfg);
  if (args.basis_given) {
    opt.learners.regression_basis = pf::basis_from_string(args.basis);
    opt.learners.ratio_basis = opt.learners.regression_basis;
  }
  opt.a0 = args.a0_given ? args.a0
                         : (cfg.contains("a0") ? cfg.at("a0").get<double>() : 0.0);
  bool ace = args.ace_given ? args.ace
                            : (cfg.contains("ace") && cfg.at("ace").get<bool>());
  opt.crossfit = args.crossfit_given
                     ? args.crossfit
                     : (cfg.contains("crossfit") ? cfg.at("crossfit").get<int>() : 0);
  std::uint64_t seed = args.seed_given
                           ? args.seed
                           : (cfg.contains("seed")
                                  ? cfg.at("seed").get<std::uint64_t>()
                                  : 1);
  opt.learners.seed = seed;
  opt.fold_seed = seed + 1;
  if (cfg.contains("tmle_max_iters"))
    opt.tmle.max_iters = cfg.at("tmle_max_iters").get<int>();
  if (cfg.contains("tmle_score_tolerance"))
    opt.tmle.score_tolerance = cfg.at("tmle_score_tolerance").get<double>();

  pf::ParsedGraph pg = pf::load_graph_json(graph_path);
  pf::Dataset ds = pf::load_csv(data_path);
  pf::Binding binding = pf::default_binding(pg.admg, ds);
  if (cfg.contains("binding"))
    for (const auto& [vertex, cols] : cfg.at("binding").items())
      binding.map[vertex] = cols.get<std::vector<std::string>>();

  pf::ValidationReport vr = pf::validate(ds, pg.admg, binding, treatment);
  if (!vr.ok()) {
    for (const auto& p : vr.problems) std::cerr << "error: " << p << "\n";
    return 2;
  }

  const pf::TopoOrder* order_ptr = nullptr;
  pf::TopoOrder order;
  std::vector<std::string> order_names;
  if (!args.order_csv.empty()) {
    std::stringstream ss(args.order_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) order_names.push_back(tok);
  } else if (cfg.contains("order")) {
    order_names = cfg.at("order").get<std::vector<std::string>>();
  }
  if (!order_names.empty()) {
    order = pf::TopoOrder::from(order_names);
    order_ptr = &order;
  }

  pf::CausalPartition part = pf::partition_mlx(pg.admg, treatment, outcome, order_ptr);

  json out = json::object();
  bool all_converged = true;
  auto run_arm = [&](double a0) {
    pf::EstimateOptions arm = opt;
    arm.a0 = a0;
    pf::EstimateReport r = pf::estimate(ds, binding, pg.admg, part, arm);
    all_converged = all_converged && r.converged;
    std::cout << r.estimator << "/" << r.strategy << " psi(" << a0
              << ") = " << r.psi;
    if (r.se) std::cout << " (se " << *r.se << ")";
    if (!r.converged) std::cout << " [not converged]";
    std::cout << "\n";
    return r;
  };

  if (ace) {
    pf::EstimateReport r0 = run_arm(0.0);
    pf::EstimateReport r1 = run_arm(1.0);
    pf::EstimateReport contrast = pf::ace(r1, r0);
    std::cout << "ace = " << contrast.psi;
    if (contrast.se) std::cout << " (se " << *contrast.se << ")";
    std::cout << "\n";
    out["arm0"] = pf::report_to_json(r0);
    out["arm1"] = pf::report_to_json(r1);
    out["ace"] = pf::report_to_json(contrast);
  } else {
    out = pf::report_to_json(run_arm(opt.a0));
  }

  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw std::invalid_argument("cannot write " + out_path);
    f << out.dump(2) << "\n";
  }
  return all_converged ? 0 : 1;
}

pf::ExperimentConfig parse_experiment(const json& j) {
  pf::ExperimentConfig cfg;
  cfg.dgp = pf::dgp_from_string(j.at("dgp").get<std::string>());
  if (j.contains("sample_sizes"))
    cfg.sample_sizes = j.at("sample_sizes").get<std::vector<int>>();
  if (j.contains("n")) cfg.sample_sizes = {j.at("n").get<int>()};
  cfg.replications = j.at("replications").get<int>();
  if (cfg.replications < 1)
    throw std::invalid_argument("replications must be at least 1");
  if (j.contains("a0")) cfg.a0 = j.at("a0").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  if (j.contains("truth")) cfg.truth = parse_truth(j.at("truth"));
  if (j.contains("control_variate"))
    cfg.true_eif_control = j.at("control_variate").get<bool>();
  if (!j.contains("estimators") || !j.at("estimators").is_array() ||
      j.at("estimators").empty())
    throw std::invalid_argument("config needs a non-empty estimators array");
  for (const auto& e : j.at("estimators")) {
    pf::EstimatorSpec spec;
    spec.estimator = pf::estimator_from_string(e.at("estimator").get<std::string>());
    spec.strategy = pf::strategy_from_string(e.at("strategy").get<std::string>());
    if (e.contains("crossfit")) spec.crossfit = e.at("crossfit").get<int>();
    fill_learner_config(spec.learners, e);
    if (e.contains("tmle_max_iters"))
      spec.tmle.max_iters = e.at("tmle_max_iters").get<int>();
    if (e.contains("tmle_score_tolerance"))
      spec.tmle.score_tolerance = e.at("tmle_score_tolerance").get<double>();
    cfg.estimators.push_back(std::move(spec));
  }
  return cfg;
}

int cmd_simulate(const std::string& config_path, const std::string& out_base,
                 int threads_flag, bool want_dat) {
  json j = load_json_file(config_path);
  pf::ExperimentConfig cfg = parse_experiment(j);
  if (threads_flag > 0) cfg.threads = threads_flag;

  pf::ExperimentResult res = pf::run_experiment(cfg);

  std::cout << "dgp " << pf::dgp_name(cfg.dgp) << ", a0 " << cfg.a0 << ", truth "
            << res.truth << "\n";
  for (const auto& row : res.rows) {
    std::cout << row.estimator << "/" << row.strategy;
    if (row.crossfit > 0) std::cout << "/cv" << row.crossfit;
    std::cout << " n=" << row.n << " bias=" << row.bias;
    if (!std::isnan(row.sd)) std::cout << " sd=" << row.sd;
    std::cout << " mse=" << row.mse;
    if (!std::isnan(row.coverage)) std::cout << " coverage=" << row.coverage;
    if (row.failures > 0) std::cout << " failures=" << row.failures;
    for (const auto& note : row.notes) std::cout << " [" << note << "]";
    std::cout << "\n";
  }

  if (!out_base.empty()) {
    pf::metrics_to_csv(res.rows, out_base + ".csv");
    std::ofstream jf(out_base + ".json");
    if (!jf) throw std::invalid_argument("cannot write " + out_base + ".json");
    jf << pf::metrics_to_json(res.rows).dump(2) << "\n";
    if (want_dat) pf::consistency_to_dat(res.rows, out_base + ".dat");
    std::cout << "wrote " << out_base << ".csv, " << out_base << ".json"
              << (want_dat ? ", " + out_base + ".dat" : "") << "\n";
  }
  return 0;
}

int cmd_oracle(const std::string& graph_path, const std::string& law_path,
               double a0, const std::string& treatment,
               const std::string& outcome) {
  pf::ParsedGraph pg = pf::load_graph_json(graph_path);
  pf::DiscreteLaw law = pf::law_from_json(load_json_file(law_path));
  pf::CausalPartition part = pf::partition_mlx(pg.admg, treatment, outcome);
  double psi = pf::brute_force_psi(law, pg.admg, part, a0);
  std::cout.precision(12);
  std::cout << "psi(" << a0 << ") = " << psi << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"average causal effect estimation under primal fixability"};
  app.require_subcommand(1);

  int default_threads = pf::default_threads();

  // graph
  auto* g_cmd = app.add_subcommand("graph", "print graph diagnostics");
  std::string g_graph, g_treatment = "A", g_outcome = "Y", g_order;
  g_cmd->add_option("--graph", g_graph, "graph json file")->required();
  g_cmd->add_option("--treatment", g_treatment, "treatment vertex (default A)");
  g_cmd->add_option("--outcome", g_outcome, "outcome vertex (default Y)");
  g_cmd->add_option("--order", g_order, "comma-separated topological order override");

  // estimate
  auto* e_cmd = app.add_subcommand("estimate", "estimate psi(a0) from a dataset");
  EstimateArgs ea;
  e_cmd->add_option("--config", ea.config, "json config file");
  e_cmd->add_option("--graph", ea.graph, "graph json file");
  e_cmd->add_option("--data", ea.data, "csv data file");
  auto* o_treat = e_cmd->add_option("--treatment", ea.treatment, "treatment vertex");
  auto* o_out = e_cmd->add_option("--outcome", ea.outcome, "outcome vertex");
  auto* o_a0 = e_cmd->add_option("--a0", ea.a0, "reference treatment level");
  auto* o_ace = e_cmd->add_flag("--ace", ea.ace, "estimate both arms and psi(1)-psi(0)");
  auto* o_est = e_cmd->add_option("--estimator", ea.estimator, "plugin|onestep|tmle");
  auto* o_strat = e_cmd->add_option("--strategy", ea.strategy, "dnorm|densratio|bayes");
  auto* o_basis = e_cmd->add_option("--basis", ea.basis,
                                    "main_terms|interactions|polynomial");
  auto* o_cf = e_cmd->add_option("--crossfit", ea.crossfit, "number of folds");
  auto* o_seed = e_cmd->add_option("--seed", ea.seed, "rng seed");
  auto* o_outp = e_cmd->add_option("--out", ea.out, "report json path");
  e_cmd->add_option("--order", ea.order_csv, "comma-separated topological order");

  // simulate
  auto* s_cmd = app.add_subcommand("simulate", "run a simulation experiment");
  std::string s_config, s_out;
  int s_threads = 0;
  bool s_dat = false;
  s_cmd->add_option("--config", s_config, "experiment json config")->required();
  s_cmd->add_option("--out", s_out, "output basename (.csv/.json appended)");
  s_cmd->add_option("--threads", s_threads, "worker threads (default PF_THREADS)")
      ->default_val(default_threads);
  s_cmd->add_flag("--dat", s_dat, "also write a gnuplot-friendly .dat file");

  // oracle
  auto* r_cmd = app.add_subcommand("oracle", "exact psi on a discrete joint table");
  std::string r_graph, r_law, r_treatment = "A", r_outcome = "Y";
  double r_a0 = 0.0;
  r_cmd->add_option("--graph", r_graph, "graph json file")->required();
  r_cmd->add_option("--law", r_law, "joint table json file")->required();
  r_cmd->add_option("--a0", r_a0, "reference treatment level");
  r_cmd->add_option("--treatment", r_treatment, "treatment vertex (default A)");
  r_cmd->add_option("--outcome", r_outcome, "outcome vertex (default Y)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g_cmd->parsed()) return cmd_graph(g_graph, g_treatment, g_outcome, g_order);
    if (e_cmd->parsed()) {
      ea.treatment_given = o_treat->count() > 0;
      ea.outcome_given = o_out->count() > 0;
      ea.a0_given = o_a0->count() > 0;
      ea.ace_given = o_ace->count() > 0;
      ea.estimator_given = o_est->count() > 0;
      ea.strategy_given = o_strat->count() > 0;
      ea.basis_given = o_basis->count() > 0;
      ea.crossfit_given = o_cf->count() > 0;
      ea.seed_given = o_seed->count() > 0;
      ea.out_given = o_outp->count() > 0;
      return cmd_estimate(ea);
    }
    if (s_cmd->parsed()) return cmd_simulate(s_config, s_out, s_threads, s_dat);
    if (r_cmd->parsed())
      return cmd_oracle(r_graph, r_law, r_a0, r_treatment, r_outcome);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
