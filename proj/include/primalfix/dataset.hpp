#pragma once

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "primalfix/graph.hpp"

namespace primalfix {

enum class ColumnKind { continuous, binary };

// Column-major numeric table. Vertices map onto columns through a Binding;
// a vertex of arity k owns k columns.
class Dataset {
 public:
  int n() const { return cols_.empty() ? 0 : static_cast<int>(cols_[0].size()); }
  int ncol() const { return static_cast<int>(cols_.size()); }

  void add_column(const std::string& name, Eigen::VectorXd values) {
    if (index_.count(name))
      throw std::invalid_argument("duplicate column: " + name);
    if (!cols_.empty() && values.size() != cols_[0].size())
      throw std::invalid_argument("column length mismatch: " + name);
    index_[name] = ncol();
    names_.push_back(name);
    cols_.push_back(std::move(values));
  }

  bool has_column(const std::string& name) const { return index_.count(name) > 0; }

  int column_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("unknown column: " + name);
    return it->second;
  }

  const Eigen::VectorXd& col(int i) const { return cols_[i]; }
  const Eigen::VectorXd& col(const std::string& name) const {
    return cols_[column_index(name)];
  }
  const std::string& col_name(int i) const { return names_[i]; }
  const std::vector<std::string>& col_names() const { return names_; }

  ColumnKind kind(int i) const {
    const auto& v = cols_[i];
    for (int r = 0; r < v.size(); ++r)
      if (v[r] != 0.0 && v[r] != 1.0) return ColumnKind::continuous;
    return ColumnKind::binary;
  }
  ColumnKind kind(const std::string& name) const { return kind(column_index(name)); }

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::VectorXd> cols_;
  std::map<std::string, int> index_;
};

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open data file: " + path);

  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || std::isspace(static_cast<unsigned char>(cell.back()))))
        cell.pop_back();
      std::size_t b = 0;
      while (b < cell.size() && std::isspace(static_cast<unsigned char>(cell[b]))) ++b;
      out.push_back(cell.substr(b));
    }
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
  };

  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty data file: " + path);
  auto header = split(line);
  if (header.empty()) throw std::invalid_argument("empty header: " + path);

  std::vector<std::vector<double>> data(header.size());
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    auto cells = split(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("row " + std::to_string(row) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " +
                                  std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN")
        throw std::invalid_argument("row " + std::to_string(row) + ", column " +
                                    header[c] + ": missing value");
      double val = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), val);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw std::invalid_argument("row " + std::to_string(row) + ", column " +
                                    header[c] + ": not numeric: " + cell);
      data[c].push_back(val);
    }
  }

  Dataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    Eigen::VectorXd col = Eigen::Map<Eigen::VectorXd>(data[c].data(),
                                                      static_cast<int>(data[c].size()));
    ds.add_column(header[c], col);
  }
  return ds;
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write data file: " + path);
  char buf[64];
  for (int c = 0; c < ds.ncol(); ++c)
    out << (c ? "," : "") << ds.col_name(c);
  out << "\n";
  for (int r = 0; r < ds.n(); ++r) {
    for (int c = 0; c < ds.ncol(); ++c) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), ds.col(c)[r],
                                   std::chars_format::general, 17);
      if (c) out << ",";
      out.write(buf, p - buf);
    }
    out << "\n";
  }
}

// vertex name -> data columns, in component order
struct Binding {
  std::map<std::string, std::vector<std::string>> map;

  const std::vector<std::string>& columns(const std::string& vertex) const {
    auto it = map.find(vertex);
    if (it == map.end())
      throw std::invalid_argument("vertex has no bound columns: " + vertex);
    return it->second;
  }
};

// arity 1 binds to the equally named column; arity k to name1 ... namek
inline Binding default_binding(const Admg& g, const Dataset& ds) {
  Binding b;
  for (const auto& v : g.vertices()) {
    std::vector<std::string> cols;
    if (v.arity == 1 && ds.has_column(v.name)) {
      cols.push_back(v.name);
    } else {
      for (int i = 1; i <= v.arity; ++i) cols.push_back(v.name + std::to_string(i));
    }
    b.map[v.name] = std::move(cols);
  }
  return b;
}

struct ValidationReport {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

inline ValidationReport validate(const Dataset& ds, const Admg& g,
                                 const Binding& binding,
                                 const std::string& treatment) {
  ValidationReport rep;
  for (const auto& v : g.vertices()) {
    auto it = binding.map.find(v.name);
    if (it == binding.map.end()) {
      rep.problems.push_back("vertex " + v.name + " has no column binding");
      continue;
    }
    if (static_cast<int>(it->second.size()) != v.arity)
      rep.problems.push_back("vertex " + v.name + " binds " +
                             std::to_string(it->second.size()) + " columns, arity is " +
                             std::to_string(v.arity));
    for (const auto& c : it->second)
      if (!ds.has_column(c))
        rep.problems.push_back("vertex " + v.name + ": column " + c + " not in data");
  }
  auto it = binding.map.find(treatment);
  if (it != binding.map.end() && it->second.size() == 1 &&
      ds.has_column(it->second[0])) {
    if (ds.kind(it->second[0]) != ColumnKind::binary)
      rep.problems.push_back("treatment column " + it->second[0] + " is not binary 0/1");
  } else if (g.has_vertex(treatment) && g.arity(treatment) != 1) {
    rep.problems.push_back("treatment " + treatment + " must have arity 1");
  }
  return rep;
}

enum class Basis { main_terms, interactions, polynomial };

inline Basis basis_from_string(const std::string& s) {
  if (s == "main_terms") return Basis::main_terms;
  if (s == "interactions") return Basis::interactions;
  if (s.rfind("polynomial", 0) == 0) return Basis::polynomial;
  throw std::invalid_argument("unknown basis: " + s);
}

inline const char* basis_name(Basis b) {
  switch (b) {
    case Basis::main_terms: return "main_terms";
    case Basis::interactions: return "interactions";
    case Basis::polynomial: return "polynomial";
  }
  return "";
}

// Basis-expanded regression design over bound vertex columns.
//   main_terms     1 + p columns (with intercept)
//   interactions   adds the p(p-1)/2 pairwise products
//   polynomial(d)  adds powers 2..d of every column
// An override pins one vertex (the treatment) to a constant before the
// expansion, so interaction and power terms see the pinned value.
struct DesignSpec {
  std::vector<std::string> predictors;
  Basis basis = Basis::main_terms;
  int degree = 2;
  bool intercept = true;

  int column_count_for(int p) const {
    int cols = intercept ? 1 : 0;
    switch (basis) {
      case Basis::main_terms: return cols + p;
      case Basis::interactions: return cols + p + p * (p - 1) / 2;
      case Basis::polynomial: return cols + p * degree;
    }
    return cols;
  }
};

inline Eigen::MatrixXd design_matrix(const Dataset& ds, const Binding& binding,
                                     const DesignSpec& spec,
                                     const std::string& override_vertex = "",
                                     double override_value = 0.0) {
  int n = ds.n();
  std::vector<Eigen::VectorXd> raw;
  for (const auto& vertex : spec.predictors) {
    for (const auto& cname : binding.columns(vertex)) {
      if (vertex == override_vertex)
        raw.push_back(Eigen::VectorXd::Constant(n, override_value));
      else
        raw.push_back(ds.col(cname));
    }
  }
  int p = static_cast<int>(raw.size());
  Eigen::MatrixXd X(n, spec.column_count_for(p));
  int c = 0;
  if (spec.intercept) X.col(c++).setOnes();
  for (const auto& r : raw) X.col(c++) = r;
  if (spec.basis == Basis::interactions) {
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j)
        X.col(c++) = raw[i].cwiseProduct(raw[j]);
  } else if (spec.basis == Basis::polynomial) {
    for (int i = 0; i < p; ++i) {
      Eigen::VectorXd pw = raw[i];
      for (int d = 2; d <= spec.degree; ++d) {
        pw = pw.cwiseProduct(raw[i]);
        X.col(c++) = pw;
      }
    }
  }
  return X;
}

}  // namespace primalfix
