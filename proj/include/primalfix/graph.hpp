#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace primalfix {

struct VertexId {
  std::string name;
  int arity = 1;
};

// Acyclic directed mixed graph: directed edges plus symmetric bidirected
// edges. Vertices carry an arity so a single node can stand for a block of
// data columns. The directed part must stay acyclic; validate() checks that
// along with self-loops and duplicate names.
class Admg {
 public:
  Admg() = default;

  explicit Admg(std::vector<VertexId> vertices) {
    for (auto& v : vertices) add_vertex(v.name, v.arity);
  }

  int add_vertex(const std::string& name, int arity = 1) {
    if (index_.count(name))
      throw std::invalid_argument("duplicate vertex: " + name);
    if (arity < 1) throw std::invalid_argument("arity must be >= 1: " + name);
    int id = static_cast<int>(vertices_.size());
    index_[name] = id;
    vertices_.push_back({name, arity});
    parents_.emplace_back();
    children_.emplace_back();
    siblings_.emplace_back();
    return id;
  }

  void add_di_edge(const std::string& u, const std::string& v) {
    int a = id(u), b = id(v);
    if (a == b) throw std::invalid_argument("self-loop: " + u);
    children_[a].insert(b);
    parents_[b].insert(a);
  }

  void add_bi_edge(const std::string& u, const std::string& v) {
    int a = id(u), b = id(v);
    if (a == b) throw std::invalid_argument("bidirected self-loop: " + u);
    siblings_[a].insert(b);
    siblings_[b].insert(a);
  }

  int size() const { return static_cast<int>(vertices_.size()); }

  bool has_vertex(const std::string& name) const { return index_.count(name) > 0; }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("unknown vertex: " + name);
    return it->second;
  }

  const VertexId& vertex(int v) const { return vertices_[v]; }
  const std::string& name(int v) const { return vertices_[v].name; }
  int arity(const std::string& n) const { return vertices_[id(n)].arity; }
  const std::vector<VertexId>& vertices() const { return vertices_; }

  const std::set<int>& parents(int v) const { return parents_[v]; }
  const std::set<int>& children(int v) const { return children_[v]; }
  const std::set<int>& siblings(int v) const { return siblings_[v]; }

  bool has_di_edge(int u, int v) const { return children_[u].count(v) > 0; }
  bool has_bi_edge(int u, int v) const { return siblings_[u].count(v) > 0; }
  bool adjacent(int u, int v) const {
    return has_di_edge(u, v) || has_di_edge(v, u) || has_bi_edge(u, v);
  }

  std::vector<std::pair<std::string, std::string>> di_edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (int u = 0; u < size(); ++u)
      for (int v : children_[u]) out.emplace_back(name(u), name(v));
    return out;
  }

  std::vector<std::pair<std::string, std::string>> bi_edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (int u = 0; u < size(); ++u)
      for (int v : siblings_[u])
        if (u < v) out.emplace_back(name(u), name(v));
    return out;
  }

  // descendants along directed edges, v included
  std::set<int> descendants(int v) const { return reach(v, children_); }
  std::set<int> ancestors(int v) const { return reach(v, parents_); }

  bool acyclic() const {
    std::vector<int> indeg(size(), 0);
    for (int v = 0; v < size(); ++v) indeg[v] = static_cast<int>(parents_[v].size());
    std::vector<int> stack;
    for (int v = 0; v < size(); ++v)
      if (indeg[v] == 0) stack.push_back(v);
    int seen = 0;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      ++seen;
      for (int w : children_[u])
        if (--indeg[w] == 0) stack.push_back(w);
    }
    return seen == size();
  }

  void validate() const {
    if (!acyclic())
      throw std::invalid_argument("directed part of the graph has a cycle");
  }

  // bidirected-connected component of v within `allowed` (nullptr = all)
  std::set<int> district_of(int v, const std::set<int>* allowed = nullptr) const {
    std::set<int> seen{v};
    std::vector<int> stack{v};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int w : siblings_[u]) {
        if (allowed && !allowed->count(w)) continue;
        if (seen.insert(w).second) stack.push_back(w);
      }
    }
    return seen;
  }

  std::vector<std::set<int>> districts() const {
    std::vector<std::set<int>> out;
    std::set<int> done;
    for (int v = 0; v < size(); ++v) {
      if (done.count(v)) continue;
      auto d = district_of(v);
      done.insert(d.begin(), d.end());
      out.push_back(std::move(d));
    }
    return out;
  }

  Admg induced(const std::set<int>& keep) const {
    Admg g;
    for (int v = 0; v < size(); ++v)
      if (keep.count(v)) g.add_vertex(name(v), vertices_[v].arity);
    for (int u = 0; u < size(); ++u) {
      if (!keep.count(u)) continue;
      for (int v : children_[u])
        if (keep.count(v)) g.add_di_edge(name(u), name(v));
      for (int v : siblings_[u])
        if (u < v && keep.count(v)) g.add_bi_edge(name(u), name(v));
    }
    return g;
  }

  std::vector<std::string> names(const std::set<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int v : ids) out.push_back(name(v));
    return out;
  }

 private:
  std::set<int> reach(int v, const std::vector<std::set<int>>& next) const {
    std::set<int> seen{v};
    std::vector<int> stack{v};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int w : next[u])
        if (seen.insert(w).second) stack.push_back(w);
    }
    return seen;
  }

  std::vector<VertexId> vertices_;
  std::map<std::string, int> index_;
  std::vector<std::set<int>> parents_, children_, siblings_;
};

// DAG over observed plus hidden vertices; latent_project() marginalizes the
// hidden ones into an Admg.
class Dag {
 public:
  Dag() = default;

  int add_vertex(const std::string& name, int arity = 1, bool hidden = false) {
    int v = g_.add_vertex(name, arity);
    if (hidden) hidden_.insert(v);
    return v;
  }

  void add_edge(const std::string& u, const std::string& v) { g_.add_di_edge(u, v); }

  const Admg& graph() const { return g_; }
  bool is_hidden(int v) const { return hidden_.count(v) > 0; }
  const std::set<int>& hidden() const { return hidden_; }

 private:
  Admg g_;
  std::set<int> hidden_;
};

// Latent projection onto the observed vertices:
//   (i)  o1 -> o2 when a directed path o1 ... o2 has all intermediates hidden
//   (ii) o1 <-> o2 when a collider-free path o1 <- ... -> o2 has all
//        intermediates hidden; equivalently some hidden h reaches both o1 and
//        o2 by directed paths whose interiors are hidden
inline Admg latent_project(const Dag& dag) {
  const Admg& g = dag.graph();
  g.validate();
  int n = g.size();

  auto hidden_reach = [&](int start) {
    // observed vertices reachable from `start` through hidden interiors
    std::set<int> out;
    std::set<int> seen;
    std::vector<int> stack;
    for (int w : g.children(start)) stack.push_back(w);
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      if (!dag.is_hidden(u)) {
        out.insert(u);
        continue;
      }
      if (!seen.insert(u).second) continue;
      for (int w : g.children(u)) stack.push_back(w);
    }
    return out;
  };

  Admg proj;
  for (int v = 0; v < n; ++v)
    if (!dag.is_hidden(v)) proj.add_vertex(g.name(v), g.vertex(v).arity);

  for (int v = 0; v < n; ++v) {
    if (dag.is_hidden(v)) continue;
    for (int w : hidden_reach(v)) proj.add_di_edge(g.name(v), g.name(w));
  }
  for (int h = 0; h < n; ++h) {
    if (!dag.is_hidden(h)) continue;
    auto span = hidden_reach(h);
    for (auto i = span.begin(); i != span.end(); ++i)
      for (auto j = std::next(i); j != span.end(); ++j)
        proj.add_bi_edge(g.name(*i), g.name(*j));
  }
  proj.validate();
  return proj;
}

struct TopoOrder {
  std::vector<std::string> order;
  std::map<std::string, int> pos;

  static TopoOrder from(std::vector<std::string> names) {
    TopoOrder t;
    t.order = std::move(names);
    for (int i = 0; i < static_cast<int>(t.order.size()); ++i)
      t.pos[t.order[i]] = i;
    return t;
  }

  bool precedes(const std::string& u, const std::string& v) const {
    return pos.at(u) < pos.at(v);
  }
};

// Topological order of the directed part with the treatment placed after all
// of its non-descendants and the outcome last. Ties break lexicographically:
// each step emits the smallest available source, deferring A while any other
// non-Y source exists.
inline TopoOrder topological_order(const Admg& g, const std::string& treatment,
                                   const std::string& outcome) {
  int a = g.id(treatment), y = g.id(outcome);
  if (a == y) throw std::invalid_argument("treatment equals outcome");
  if (!g.acyclic())
    throw std::invalid_argument("directed part of the graph has a cycle");
  if (g.descendants(y).size() > 1)
    throw std::invalid_argument("outcome has descendants: " + outcome);

  std::vector<int> indeg(g.size(), 0);
  for (int v = 0; v < g.size(); ++v)
    indeg[v] = static_cast<int>(g.parents(v).size());

  auto by_name = [&](int u, int v) { return g.name(u) < g.name(v); };
  std::set<int, decltype(by_name)> avail(by_name);
  for (int v = 0; v < g.size(); ++v)
    if (indeg[v] == 0 && v != y) avail.insert(v);

  std::vector<std::string> out;
  while (!avail.empty()) {
    int pick = -1;
    for (int v : avail) {
      if (v == a && avail.size() > 1) continue;
      pick = v;
      break;
    }
    if (pick == -1) pick = a;
    avail.erase(pick);
    out.push_back(g.name(pick));
    for (int w : g.children(pick))
      if (--indeg[w] == 0 && w != y) avail.insert(w);
  }
  if (static_cast<int>(out.size()) != g.size() - 1)
    throw std::invalid_argument("graph has no admissible topological order");
  out.push_back(outcome);
  return TopoOrder::from(out);
}

// mb(v) = dis(v) and the parents of dis(v), minus v itself
inline std::set<int> markov_blanket(const Admg& g, int v,
                                    const std::set<int>* allowed = nullptr) {
  std::set<int> mb;
  auto dis = g.district_of(v, allowed);
  for (int d : dis) {
    mb.insert(d);
    for (int p : g.parents(d)) {
      if (allowed && !allowed->count(p)) continue;
      mb.insert(p);
    }
  }
  mb.erase(v);
  return mb;
}

inline std::vector<std::string> markov_blanket(const Admg& g,
                                               const std::string& v) {
  return g.names(markov_blanket(g, g.id(v)));
}

// mp(v) = Markov blanket of v in the induced subgraph on v and the vertices
// preceding it in the order
inline std::set<int> markov_pillow(const Admg& g, int v, const TopoOrder& tau) {
  int cut = tau.pos.at(g.name(v));
  std::set<int> allowed;
  for (int i = 0; i <= cut; ++i) allowed.insert(g.id(tau.order[i]));
  return markov_blanket(g, v, &allowed);
}

inline std::vector<std::string> markov_pillow(const Admg& g,
                                              const std::string& v,
                                              const TopoOrder& tau) {
  return g.names(markov_pillow(g, g.id(v), tau));
}

inline bool primal_fixable(const Admg& g, const std::string& treatment) {
  int a = g.id(treatment);
  auto dis = g.district_of(a);
  for (int c : g.children(a))
    if (dis.count(c)) return false;
  return true;
}

// every pair of vertices where one lies in the other's Markov blanket is
// adjacent
inline bool mb_shielded(const Admg& g) {
  std::vector<std::set<int>> mbs(g.size());
  for (int v = 0; v < g.size(); ++v) mbs[v] = markov_blanket(g, v);
  for (int u = 0; u < g.size(); ++u)
    for (int v = u + 1; v < g.size(); ++v) {
      if (g.adjacent(u, v)) continue;
      if (mbs[u].count(v) || mbs[v].count(u)) return false;
    }
  return true;
}

enum class Level { a0, a1 };

inline const char* level_name(Level l) { return l == Level::a0 ? "a0" : "a1"; }

// Treatment-centric split of the vertices:
//   X = vertices before A in the order
//   L = the treatment's district members from A onward, A included
//   M = the remaining post-treatment vertices
// Z lists the post-treatment vertices other than A and Y in order; each Z_k
// carries level a0 when it sits in M and a1 when it sits in L, and Y carries
// a1 exactly when Y is in L.
struct CausalPartition {
  std::string treatment, outcome;
  TopoOrder order;
  std::vector<std::string> pre;        // X
  std::vector<std::string> mediators;  // M
  std::vector<std::string> district;   // L
  std::vector<std::string> z;          // Z_1 ... Z_K
  std::vector<Level> z_levels;
  Level y_level = Level::a0;

  int k() const { return static_cast<int>(z.size()); }

  bool in_district(const std::string& v) const {
    return std::find(district.begin(), district.end(), v) != district.end();
  }
  bool in_mediators(const std::string& v) const {
    return std::find(mediators.begin(), mediators.end(), v) != mediators.end();
  }
};

inline CausalPartition partition_mlx(const Admg& g, const std::string& treatment,
                                     const std::string& outcome,
                                     const TopoOrder* order = nullptr) {
  if (!primal_fixable(g, treatment))
    throw std::invalid_argument("treatment is not primal fixable: " + treatment);
  CausalPartition p;
  p.treatment = treatment;
  p.outcome = outcome;
  p.order = order ? *order : topological_order(g, treatment, outcome);
  if (p.order.pos.size() != static_cast<std::size_t>(g.size()))
    throw std::invalid_argument("order does not cover the graph");
  if (order) {
    for (const auto& [u, v] : g.di_edges())
      if (!p.order.precedes(u, v))
        throw std::invalid_argument("supplied order violates edge " + u + " -> " + v);
    if (p.order.order.back() != outcome)
      throw std::invalid_argument("supplied order must end with the outcome");
  }

  auto dis = g.district_of(g.id(treatment));
  int apos = p.order.pos.at(treatment);
  for (const auto& v : p.order.order) {
    if (p.order.pos.at(v) < apos) {
      p.pre.push_back(v);
      continue;
    }
    if (dis.count(g.id(v)))
      p.district.push_back(v);
    else
      p.mediators.push_back(v);
    if (v != treatment && v != outcome) {
      p.z.push_back(v);
      p.z_levels.push_back(dis.count(g.id(v)) ? Level::a1 : Level::a0);
    }
  }
  p.y_level = dis.count(g.id(outcome)) ? Level::a1 : Level::a0;
  return p;
}

// contract `group` into one vertex whose arity is the group total; parallel
// edges collapse, internal edges vanish, and a resulting directed cycle is an
// error
inline Admg merge_vertices(const Admg& g, const std::vector<std::string>& group,
                           const std::string& merged_name) {
  if (group.empty()) throw std::invalid_argument("merge group is empty");
  std::set<int> grp;
  int arity = 0;
  for (const auto& n : group) {
    if (!grp.insert(g.id(n)).second)
      throw std::invalid_argument("duplicate vertex in merge group: " + n);
    arity += g.vertex(g.id(n)).arity;
  }
  int anchor = *grp.begin();
  for (int v : grp) anchor = std::min(anchor, v);

  Admg out;
  for (int v = 0; v < g.size(); ++v) {
    if (v == anchor)
      out.add_vertex(merged_name, arity);
    else if (!grp.count(v))
      out.add_vertex(g.name(v), g.vertex(v).arity);
  }
  auto label = [&](int v) {
    return grp.count(v) ? merged_name : g.name(v);
  };
  std::set<std::pair<std::string, std::string>> di, bi;
  for (int u = 0; u < g.size(); ++u) {
    for (int v : g.children(u)) {
      if (grp.count(u) && grp.count(v)) continue;
      di.insert({label(u), label(v)});
    }
    for (int v : g.siblings(u)) {
      if (u >= v) continue;
      if (grp.count(u) && grp.count(v)) continue;
      bi.insert({label(u), label(v)});
    }
  }
  for (auto& e : di) out.add_di_edge(e.first, e.second);
  for (auto& e : bi) out.add_bi_edge(e.first, e.second);
  if (!out.acyclic())
    throw std::invalid_argument("merging creates a directed cycle");
  return out;
}

}  // namespace primalfix
