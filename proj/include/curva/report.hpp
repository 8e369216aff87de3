#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "curva/error.hpp"
#include "curva/scenario.hpp"

namespace curva {

using ordered_json = nlohmann::ordered_json;

inline ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

inline ordered_json grid_json(const ScenarioSpec& spec) {
  const DomainSpec& g = spec.domain;
  return {{"kind", to_string(g.kind)}, {"n", g.n},         {"r_in", g.r_in},
          {"r_out", g.r_out},         {"n_r", g.n_r},     {"n_theta", g.n_theta},
          {"h", (g.r_out - g.r_in) / (g.n_r - 1)}};
}

// Fixed top-level keys: scenario, grid, c, eta1, errors, residuals, constants, runtime_s.
inline ordered_json report_json(const ScenarioSpec& spec, double c, double eta1, const CurvatureReport& rep,
                                const ordered_json& constants, bool record_runtime) {
  ordered_json j;
  j["scenario"] = to_string(spec.tag);
  j["grid"] = grid_json(spec);
  j["c"] = c;
  j["eta1"] = number_or_null(eta1);
  j["errors"] = {{"interior_sup", rep.interior_sup},
                 {"interior_l2", rep.interior_l2},
                 {"boundary_sup", rep.boundary_sup},
                 {"boundary_l2", rep.boundary_l2}};
  j["residuals"] = {{"interior", rep.res_interior}, {"boundary", rep.res_boundary}};
  j["constants"] = constants;
  j["runtime_s"] = record_runtime ? number_or_null(rep.runtime_s) : ordered_json(nullptr);
  return j;
}

inline ordered_json constants_json(const CertifiedResult& r, const std::vector<CertifyProbe>* transcript = nullptr) {
  ordered_json k = ordered_json::object();
  for (const auto& [name, value] : r.constants) k[name] = number_or_null(value);
  k["iterations"] = static_cast<int>(r.trace.steps.size());
  k["provenance"] = {{"lower", to_string(r.pair.lower)}, {"upper", to_string(r.pair.upper)}};
  if (transcript) {
    ordered_json t = ordered_json::array();
    for (const CertifyProbe& p : *transcript) {
      ordered_json e = {{"c", p.c}, {"ok", p.ok}};
      if (!p.ok) {
        e["code"] = p.code;
        e["stage"] = p.stage;
      }
      t.push_back(e);
    }
    k["bisection"] = t;
  }
  return k;
}

inline ordered_json report_json(const CertifiedResult& r, const ScenarioSpec& spec, bool record_runtime,
                                const std::vector<CertifyProbe>* transcript = nullptr) {
  return report_json(spec, r.c, r.eta1, r.report, constants_json(r, transcript), record_runtime);
}

inline std::string solution_csv(const Domain& d, const Field& u, const Field& target) {
  std::ostringstream os;
  os.precision(17);
  os << "node,r,theta,u,target\n";
  for (int k = 0; k < d.nodes(); ++k)
    os << k << ',' << d.grid.r[k] << ',' << d.grid.theta[k] << ',' << u[k] << ',' << target[k] << '\n';
  return os.str();
}

struct StoredSolution {
  Field u;
  Field target;
};

inline StoredSolution read_solution_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "node,r,theta,u,target")
    fail(ErrorCode::ParseError, "read_solution", "expected header 'node,r,theta,u,target'");
  std::vector<double> u, t;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(row, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorCode::ParseError, "read_solution", "line " + std::to_string(lineno) + ": malformed number");
      }
    }
    if (vals.size() != 5 || static_cast<size_t>(vals[0]) != u.size())
      fail(ErrorCode::ParseError, "read_solution", "line " + std::to_string(lineno) + ": malformed row");
    u.push_back(vals[3]);
    t.push_back(vals[4]);
  }
  StoredSolution s{Field(static_cast<Eigen::Index>(u.size())), Field(static_cast<Eigen::Index>(t.size()))};
  for (size_t i = 0; i < u.size(); ++i) {
    s.u[static_cast<Eigen::Index>(i)] = u[i];
    s.target[static_cast<Eigen::Index>(i)] = t[i];
  }
  return s;
}

// Temp file in the target directory, then rename.
inline void write_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::InvalidArgument, "write_output", "cannot open " + tmp.string());
    out << content;
    if (!out) fail(ErrorCode::InvalidArgument, "write_output", "cannot write " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ParseError, "read_file", "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace curva
