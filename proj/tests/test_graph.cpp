#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "primalfix/graph.hpp"
#include "primalfix/graph_json.hpp"
#include "support.hpp"

using namespace primalfix;

namespace {

// the three district layouts used throughout: Y inside the treatment's
// district, the whole chain inside, and Y outside
Admg fig_a() {
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

Admg fig_b() {
  Admg g;
  g.add_vertex("X");
  g.add_vertex("A");
  g.add_vertex("M");
  g.add_vertex("L");
  g.add_vertex("Y");
  for (const char* v : {"A", "M", "L", "Y"}) g.add_di_edge("X", v);
  g.add_di_edge("A", "M");
  g.add_di_edge("M", "L");
  g.add_di_edge("L", "Y");
  g.add_bi_edge("A", "L");
  g.add_bi_edge("L", "Y");
  return g;
}

Admg fig_c() {
  Admg g;
  g.add_vertex("X");
  g.add_vertex("A");
  g.add_vertex("M");
  g.add_vertex("L");
  g.add_vertex("Y");
  for (const char* v : {"A", "M", "L", "Y"}) g.add_di_edge("X", v);
  g.add_di_edge("A", "M");
  g.add_di_edge("A", "Y");
  g.add_di_edge("M", "L");
  g.add_di_edge("L", "Y");
  g.add_bi_edge("A", "L");
  g.add_bi_edge("M", "Y");
  return g;
}

}  // namespace

TEST_CASE("admg basics and validation") {
  Admg g;
  g.add_vertex("A");
  g.add_vertex("B");
  g.add_di_edge("A", "B");
  g.add_bi_edge("A", "B");
  CHECK(g.size() == 2);
  CHECK(g.has_di_edge(g.id("A"), g.id("B")));
  CHECK(g.has_bi_edge(g.id("A"), g.id("B")));
  CHECK(g.adjacent(g.id("A"), g.id("B")));
  CHECK(g.acyclic());

  CHECK_THROWS_AS(g.add_vertex("A"), std::invalid_argument);
  CHECK_THROWS_AS(g.add_di_edge("A", "A"), std::invalid_argument);
  CHECK_THROWS_AS(g.add_vertex("Z", 0), std::invalid_argument);
  CHECK_THROWS_AS(g.id("missing"), std::invalid_argument);

  g.add_di_edge("B", "A");  // cycle
  CHECK_FALSE(g.acyclic());
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("districts are the bidirected components") {
  Admg g = fig_b();
  auto dis_a = g.district_of(g.id("A"));
  std::set<int> expect{g.id("A"), g.id("L"), g.id("Y")};
  CHECK(dis_a == expect);
  CHECK(g.district_of(g.id("M")) == std::set<int>{g.id("M")});
  CHECK(g.district_of(g.id("X")) == std::set<int>{g.id("X")});

  auto all = g.districts();
  std::set<int> seen;
  for (const auto& d : all)
    for (int v : d) CHECK(seen.insert(v).second);
  CHECK(seen.size() == static_cast<std::size_t>(g.size()));
}

TEST_CASE("topological order defers the treatment and ends at the outcome") {
  auto t = topological_order(fig_a(), "A", "Y");
  CHECK(t.order == std::vector<std::string>{"X", "A", "M", "L", "Y"});

  // lexicographic tie break among sources, treatment last among them
  Admg g;
  g.add_vertex("C");
  g.add_vertex("B");
  g.add_vertex("A");
  g.add_vertex("Y");
  g.add_di_edge("A", "Y");
  g.add_di_edge("B", "Y");
  g.add_di_edge("C", "Y");
  auto t2 = topological_order(g, "A", "Y");
  CHECK(t2.order == std::vector<std::string>{"B", "C", "A", "Y"});
  CHECK(t2.precedes("B", "A"));

  CHECK_THROWS_AS(topological_order(g, "A", "A"), std::invalid_argument);
  Admg h;
  h.add_vertex("A");
  h.add_vertex("Y");
  h.add_vertex("W");
  h.add_di_edge("A", "Y");
  h.add_di_edge("Y", "W");
  CHECK_THROWS_AS(topological_order(h, "A", "Y"), std::invalid_argument);
}

TEST_CASE("random graphs: order properties hold") {
  Rng rng(2024);
  int done = 0;
  while (done < 50) {
    auto fx = pftest::try_random_fixture(rng);
    if (!fx) continue;
    ++done;
    const Admg& g = fx->graph;
    auto t = topological_order(g, fx->treatment, fx->outcome);
    REQUIRE(t.order.size() == static_cast<std::size_t>(g.size()));
    CHECK(t.order.back() == fx->outcome);
    for (const auto& [u, v] : g.di_edges()) CHECK(t.precedes(u, v));
    // every non-descendant of the treatment comes first; the outcome is
    // exempt because it is pinned to the back of the order
    auto desc = g.descendants(g.id(fx->treatment));
    for (const auto& v : t.order) {
      if (v == fx->treatment || v == fx->outcome) continue;
      if (!desc.count(g.id(v))) CHECK(t.precedes(v, fx->treatment));
    }
    // deterministic
    auto t_again = topological_order(g, fx->treatment, fx->outcome);
    CHECK(t.order == t_again.order);
  }
}

TEST_CASE("markov blanket and pillow on the district chain") {
  Admg g = fig_a();
  CHECK(markov_blanket(g, "A") == std::vector<std::string>{"X", "M", "L", "Y"});
  CHECK(markov_blanket(g, "M") == std::vector<std::string>{"X", "A"});

  auto t = topological_order(g, "A", "Y");
  CHECK(markov_pillow(g, "A", t) == std::vector<std::string>{"X"});
  CHECK(markov_pillow(g, "M", t) == std::vector<std::string>{"X", "A"});
  CHECK(markov_pillow(g, "L", t) == std::vector<std::string>{"X", "A", "M"});
  CHECK(markov_pillow(g, "Y", t) == std::vector<std::string>{"X", "A", "M", "L"});
}

TEST_CASE("primal fixability") {
  CHECK(primal_fixable(fig_a(), "A"));
  CHECK(primal_fixable(fig_b(), "A"));
  CHECK(primal_fixable(fig_c(), "A"));

  Admg g;
  g.add_vertex("A");
  g.add_vertex("M");
  g.add_vertex("Y");
  g.add_di_edge("A", "M");
  g.add_di_edge("M", "Y");
  g.add_bi_edge("A", "M");  // child inside the district
  CHECK_FALSE(primal_fixable(g, "A"));
  CHECK_THROWS_WITH(partition_mlx(g, "A", "Y"),
                    Catch::Matchers::ContainsSubstring("primal fixable"));
}

TEST_CASE("mb-shielded recognition") {
  CHECK(mb_shielded(fig_a()));  // complete graph, trivially shielded
  CHECK(mb_shielded(fig_c()));
  // A and Y are non-adjacent but Y sits in mb(A) through the district
  CHECK_FALSE(mb_shielded(fig_b()));

  Admg chain;
  chain.add_vertex("X");
  chain.add_vertex("A");
  chain.add_vertex("Y");
  chain.add_di_edge("X", "A");
  chain.add_di_edge("A", "Y");
  CHECK(mb_shielded(chain));
}

TEST_CASE("partition fixtures for the three layouts") {
  auto pa = partition_mlx(fig_a(), "A", "Y");
  CHECK(pa.pre == std::vector<std::string>{"X"});
  CHECK(pa.mediators == std::vector<std::string>{"M", "L"});
  CHECK(pa.district == std::vector<std::string>{"A", "Y"});
  CHECK(pa.z == std::vector<std::string>{"M", "L"});
  CHECK(pa.z_levels == std::vector<Level>{Level::a0, Level::a0});
  CHECK(pa.y_level == Level::a1);

  auto pb = partition_mlx(fig_b(), "A", "Y");
  CHECK(pb.mediators == std::vector<std::string>{"M"});
  CHECK(pb.district == std::vector<std::string>{"A", "L", "Y"});
  CHECK(pb.z == std::vector<std::string>{"M", "L"});
  CHECK(pb.z_levels == std::vector<Level>{Level::a0, Level::a1});
  CHECK(pb.y_level == Level::a1);

  auto pc = partition_mlx(fig_c(), "A", "Y");
  CHECK(pc.mediators == std::vector<std::string>{"M", "Y"});
  CHECK(pc.district == std::vector<std::string>{"A", "L"});
  CHECK(pc.z == std::vector<std::string>{"M", "L"});
  CHECK(pc.z_levels == std::vector<Level>{Level::a0, Level::a1});
  CHECK(pc.y_level == Level::a0);
}

TEST_CASE("partition with a supplied order validates it") {
  Admg g = fig_a();
  auto order = TopoOrder::from({"X", "A", "M", "L", "Y"});
  auto p = partition_mlx(g, "A", "Y", &order);
  CHECK(p.z == std::vector<std::string>{"M", "L"});

  auto bad = TopoOrder::from({"A", "X", "M", "Y", "L"});
  CHECK_THROWS_AS(partition_mlx(g, "A", "Y", &bad), std::invalid_argument);
  auto not_last = TopoOrder::from({"X", "A", "M", "Y", "L"});
  CHECK_THROWS_AS(partition_mlx(g, "A", "Y", &not_last), std::invalid_argument);
}

TEST_CASE("random partitions cover the vertices consistently") {
  Rng rng(77);
  for (int t = 0; t < 40; ++t) {
    auto fx = pftest::random_fixture(rng);
    const auto& p = fx.part;
    std::set<std::string> all;
    for (const auto& v : p.pre) all.insert(v);
    for (const auto& v : p.mediators) all.insert(v);
    for (const auto& v : p.district) all.insert(v);
    CHECK(all.size() == static_cast<std::size_t>(fx.graph.size()));
    CHECK(p.in_district(p.treatment));
    for (std::size_t k = 0; k < p.z.size(); ++k) {
      bool in_l = p.in_district(p.z[k]);
      CHECK(p.z_levels[k] == (in_l ? Level::a1 : Level::a0));
    }
    CHECK((p.y_level == Level::a1) == p.in_district(p.outcome));
    // pillows only look backwards
    for (const auto& v : p.z)
      for (const auto& m : markov_pillow(fx.graph, v, p.order))
        CHECK(p.order.precedes(m, v));
  }
}

TEST_CASE("latent projection: directed paths and hidden common causes") {
  Dag d;
  d.add_vertex("V1");
  d.add_vertex("H1", 1, true);
  d.add_vertex("V2");
  d.add_vertex("V3");
  d.add_edge("V1", "H1");
  d.add_edge("H1", "V2");
  d.add_edge("H1", "V3");
  Admg p = latent_project(d);
  CHECK(p.size() == 3);
  CHECK(p.has_di_edge(p.id("V1"), p.id("V2")));
  CHECK(p.has_di_edge(p.id("V1"), p.id("V3")));
  CHECK(p.has_bi_edge(p.id("V2"), p.id("V3")));
  CHECK_FALSE(p.has_bi_edge(p.id("V1"), p.id("V2")));

  // hidden-through-hidden chains still project
  Dag d2;
  d2.add_vertex("A");
  d2.add_vertex("H1", 1, true);
  d2.add_vertex("H2", 1, true);
  d2.add_vertex("Y");
  d2.add_edge("A", "H1");
  d2.add_edge("H1", "H2");
  d2.add_edge("H2", "Y");
  Admg p2 = latent_project(d2);
  CHECK(p2.has_di_edge(p2.id("A"), p2.id("Y")));
  CHECK(p2.bi_edges().empty());
}

TEST_CASE("latent projection of the front-door problem") {
  auto cd = pftest::frontdoor_cpt_dag();
  Admg p = latent_project(cd.dag);
  CHECK(p.size() == 3);
  CHECK(p.has_di_edge(p.id("A"), p.id("M")));
  CHECK(p.has_di_edge(p.id("M"), p.id("Y")));
  CHECK(p.has_bi_edge(p.id("A"), p.id("Y")));
  CHECK(p.di_edges().size() == 2);
  CHECK(p.bi_edges().size() == 1);
  CHECK(primal_fixable(p, "A"));

  auto part = partition_mlx(p, "A", "Y");
  CHECK(part.mediators == std::vector<std::string>{"M"});
  CHECK(part.district == std::vector<std::string>{"A", "Y"});
}

TEST_CASE("merge vertices contracts a group") {
  Admg g = fig_a();
  Admg m = merge_vertices(g, {"M", "L"}, "ML");
  CHECK(m.size() == 4);
  CHECK(m.arity("ML") == 2);
  CHECK(m.has_di_edge(m.id("X"), m.id("ML")));
  CHECK(m.has_di_edge(m.id("A"), m.id("ML")));
  CHECK(m.has_di_edge(m.id("ML"), m.id("Y")));
  CHECK(m.has_bi_edge(m.id("A"), m.id("Y")));
  CHECK(primal_fixable(m, "A"));
  auto p = partition_mlx(m, "A", "Y");
  CHECK(p.z == std::vector<std::string>{"ML"});
  CHECK(p.z_levels == std::vector<Level>{Level::a0});

  // contracting across a directed path closes a cycle
  Admg h;
  h.add_vertex("A");
  h.add_vertex("B");
  h.add_vertex("C");
  h.add_di_edge("A", "B");
  h.add_di_edge("B", "C");
  CHECK_THROWS_AS(merge_vertices(h, {"A", "C"}, "AC"), std::invalid_argument);
  CHECK_THROWS_AS(merge_vertices(h, {}, "E"), std::invalid_argument);
  CHECK_THROWS_AS(merge_vertices(h, {"A", "A"}, "AA"), std::invalid_argument);
}

TEST_CASE("graph json round trip") {
  nlohmann::json j = graph_to_json(fig_b());
  auto parsed = parse_graph_json(j);
  CHECK_FALSE(parsed.was_dag);
  const Admg& g = parsed.admg;
  CHECK(g.size() == 5);
  CHECK(g.di_edges().size() == fig_b().di_edges().size());
  CHECK(g.bi_edges().size() == 2);
  CHECK(g.has_bi_edge(g.id("A"), g.id("L")));

  nlohmann::json hidden;
  hidden["vertices"] = nlohmann::json::array({"A", "U", "Y"});
  hidden["di_edges"] = nlohmann::json::array({nlohmann::json::array({"U", "A"}),
                                              nlohmann::json::array({"U", "Y"}),
                                              nlohmann::json::array({"A", "Y"})});
  hidden["hidden"] = nlohmann::json::array({"U"});
  auto proj = parse_graph_json(hidden);
  CHECK(proj.was_dag);
  CHECK(proj.admg.size() == 2);
  CHECK(proj.admg.has_bi_edge(proj.admg.id("A"), proj.admg.id("Y")));
}

TEST_CASE("merged arity follows the group total") {
  Admg g;
  g.add_vertex("X", 3);
  g.add_vertex("M", 2);
  g.add_vertex("L");
  g.add_di_edge("X", "M");
  g.add_di_edge("M", "L");
  Admg m = merge_vertices(g, {"M", "L"}, "ML");
  CHECK(m.arity("ML") == 3);
}
