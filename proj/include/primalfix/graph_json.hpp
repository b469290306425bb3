#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "primalfix/graph.hpp"

namespace primalfix {

// Graph files look like
//   {"vertices": [{"name": "X", "arity": 1}, ...],
//    "di_edges": [["X", "A"], ...],
//    "bi_edges": [["A", "Y"], ...],
//    "hidden":   ["U", ...]}
// A nonempty "hidden" list marks a DAG over observed plus hidden vertices,
// which is latent-projected onto the observed ones; such inputs cannot carry
// bidirected edges. Plain string entries in "vertices" mean arity 1.
struct ParsedGraph {
  Admg admg;
  bool was_dag = false;
};

inline ParsedGraph parse_graph_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("vertices"))
    throw std::invalid_argument("graph json: missing \"vertices\"");

  std::vector<VertexId> verts;
  for (const auto& v : j.at("vertices")) {
    if (v.is_string()) {
      verts.push_back({v.get<std::string>(), 1});
    } else {
      VertexId id;
      id.name = v.at("name").get<std::string>();
      id.arity = v.value("arity", 1);
      verts.push_back(id);
    }
  }

  std::set<std::string> hidden;
  if (j.contains("hidden"))
    for (const auto& h : j.at("hidden")) hidden.insert(h.get<std::string>());

  auto edge_list = [&](const char* key) {
    std::vector<std::pair<std::string, std::string>> out;
    if (!j.contains(key)) return out;
    for (const auto& e : j.at(key)) {
      if (!e.is_array() || e.size() != 2)
        throw std::invalid_argument(std::string("graph json: bad edge in ") + key);
      out.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    return out;
  };
  auto di = edge_list("di_edges");
  auto bi = edge_list("bi_edges");

  ParsedGraph out;
  if (!hidden.empty()) {
    if (!bi.empty())
      throw std::invalid_argument("graph json: hidden vertices require a DAG without bi_edges");
    Dag dag;
    for (const auto& v : verts)
      dag.add_vertex(v.name, v.arity, hidden.count(v.name) > 0);
    for (const auto& h : hidden)
      if (!dag.graph().has_vertex(h))
        throw std::invalid_argument("graph json: hidden vertex not declared: " + h);
    for (const auto& e : di) dag.add_edge(e.first, e.second);
    out.admg = latent_project(dag);
    out.was_dag = true;
  } else {
    Admg g(verts);
    for (const auto& e : di) g.add_di_edge(e.first, e.second);
    for (const auto& e : bi) g.add_bi_edge(e.first, e.second);
    g.validate();
    out.admg = std::move(g);
  }
  return out;
}

inline ParsedGraph load_graph_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open graph file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("graph json parse error: " + std::string(e.what()));
  }
  return parse_graph_json(j);
}

inline nlohmann::json graph_to_json(const Admg& g) {
  nlohmann::json j;
  j["vertices"] = nlohmann::json::array();
  for (const auto& v : g.vertices())
    j["vertices"].push_back({{"name", v.name}, {"arity", v.arity}});
  j["di_edges"] = nlohmann::json::array();
  for (const auto& e : g.di_edges()) j["di_edges"].push_back({e.first, e.second});
  j["bi_edges"] = nlohmann::json::array();
  for (const auto& e : g.bi_edges()) j["bi_edges"].push_back({e.first, e.second});
  return j;
}

}  // namespace primalfix
