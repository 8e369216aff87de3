#include <cstdio>
#include <cstdlib>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "curva/curva.hpp"

namespace {

using namespace curva;

bool is_usage_error(ErrorCode c) {
  return c == ErrorCode::ParseError || c == ErrorCode::UnknownKey || c == ErrorCode::ExpressionError;
}

int thread_cap() {
  const char* env = std::getenv("CURVA_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty()) std::cout << content;
  else write_atomic(path, content);
}

int cmd_eigen(const RunConfig& cfg) {
  const Domain d = scenario_domain(cfg.spec);
  const EigenResult e = conformal_eigenpair(d);
  std::printf("eta1 = %.12g\n", e.eta);
  std::printf("beta,eta_beta\n");
  for (double b : cfg.betas) std::printf("%.6g,%.12g\n", b, conformal_eigenpair(d, b).eta);
  return 0;
}

void write_run_outputs(const RunConfig& cfg, const CertifiedResult& r, const std::vector<CertifyProbe>* transcript) {
  if (!cfg.output.trace.empty()) write_atomic(cfg.output.trace, trace_csv(r.trace));
  if (!cfg.output.solution.empty())
    write_atomic(cfg.output.solution, solution_csv(scenario_domain(cfg.spec), r.u, r.composed));
  emit(cfg.output.report, report_json(r, cfg.spec, cfg.output.record_runtime, transcript).dump(2) + "\n");
}

int cmd_solve(const RunConfig& cfg, double c) {
  const CertifiedResult r = run_scenario(cfg.spec, c);
  write_run_outputs(cfg, r, nullptr);
  std::fprintf(stderr, "certified c = %.6g after %zu steps; interior error %.3e, boundary error %.3e\n", r.c,
               r.trace.steps.size(), r.report.interior_sup, r.report.boundary_sup);
  return 0;
}

int cmd_certify(const RunConfig& cfg, double c_hi) {
  const CertifyOutcome out = certify_max_c(cfg.spec, c_hi);
  write_run_outputs(cfg, out.result, &out.transcript);
  std::fprintf(stderr, "c* = %.6g after %zu probes\n", out.c_star, out.transcript.size());
  return 0;
}

int cmd_verify(const RunConfig& cfg, const std::string& solution, const std::string& report, double c) {
  const StoredSolution s = read_solution_csv(read_file(solution));
  const Domain d = scenario_domain(cfg.spec);
  if (s.u.size() != d.nodes())
    fail(ErrorCode::ParseError, "read_solution", "solution has " + std::to_string(s.u.size()) + " nodes, grid has " +
                                                     std::to_string(d.nodes()));
  const CurvatureReport rep = residual_and_curvature_report(s.u, d, s.target, sample_boundary(d.grid, cfg.spec.boundary),
                                                            c, cfg.spec.report_floor);
  const double eta = d.n() == 2 ? std::numeric_limits<double>::quiet_NaN() : conformal_eigenpair(d).eta;
  emit(report, report_json(cfg.spec, c, eta, rep, ordered_json::object(), false).dump(2) + "\n");
  return 0;
}

struct SweepRow {
  int level = 0;
  ScenarioSpec spec;
  std::string line;
};

int cmd_sweep(const RunConfig& cfg, double c, int levels) {
  std::vector<SweepRow> rows(levels);
  for (int l = 0; l < levels; ++l) {
    rows[l].level = l;
    rows[l].spec = cfg.spec;
    rows[l].spec.domain.n_r = (cfg.spec.domain.n_r - 1) * (1 << l) + 1;
    if (is_polar(cfg.spec.domain.kind)) rows[l].spec.domain.n_theta = cfg.spec.domain.n_theta * (1 << l);
  }
  auto run = [c](SweepRow& row) {
    const DomainSpec& g = row.spec.domain;
    std::ostringstream os;
    os.precision(17);
    os << row.level << ',' << g.n_r << ',' << g.n_theta << ',' << (g.r_out - g.r_in) / (g.n_r - 1) << ',';
    try {
      const CertifiedResult r = run_scenario(row.spec, c);
      os << "certified," << r.trace.steps.size() << ',' << r.report.interior_sup << ',' << r.report.interior_l2 << ','
         << r.report.boundary_sup << ',' << r.report.res_interior << ',' << r.report.res_boundary << ','
         << r.u.maxCoeff() << ',' << r.u.minCoeff();
    } catch (const Failure& f) {
      os << to_string(f.code()) << ",,,,,,,,";
    }
    row.line = os.str();
  };
  const int cap = thread_cap();
  for (int start = 0; start < levels; start += cap) {
    std::vector<std::future<void>> jobs;
    for (int l = start; l < std::min(levels, start + cap); ++l)
      jobs.push_back(std::async(cap > 1 ? std::launch::async : std::launch::deferred, run, std::ref(rows[l])));
    for (auto& j : jobs) j.get();
  }
  std::string csv =
      "level,n_r,n_theta,h,status,iterations,interior_sup,interior_l2,boundary_sup,res_interior,res_boundary,u_max,"
      "u_min\n";
  for (const SweepRow& r : rows) csv += r.line + "\n";
  emit(cfg.output.sweep, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prescribed curvature solver: eigenvalues, monotone iteration, certification"};
  app.require_subcommand(1);
  std::string config, solution, report;
  double c = std::numeric_limits<double>::quiet_NaN();
  double c_hi = std::numeric_limits<double>::quiet_NaN();
  int levels = 0;

  CLI::App* eigen = app.add_subcommand("eigen", "print the first eigenvalue and the perturbed-eigenvalue table");
  CLI::App* solve = app.add_subcommand("solve", "run one scenario; write trace CSV and report JSON");
  CLI::App* certify = app.add_subcommand("certify", "bisect for the largest certifiable boundary scale c");
  CLI::App* verify = app.add_subcommand("verify", "recompute the curvature report for a stored solution");
  CLI::App* sweep = app.add_subcommand("sweep", "grid-refinement study CSV");
  for (CLI::App* sub : {eigen, solve, certify, verify, sweep})
    sub->add_option("--config", config, "JSON run configuration")->required();
  for (CLI::App* sub : {solve, verify, sweep}) sub->add_option("--c", c, "boundary scale (overrides the config)");
  certify->add_option("--c-hi", c_hi, "upper end of the bisection interval (overrides the config)");
  verify->add_option("--solution", solution, "solution CSV written by solve")->required();
  verify->add_option("--report", report, "report JSON path (default: stdout)");
  sweep->add_option("--levels", levels, "number of refinement levels (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    const RunConfig cfg = parse_config(read_file(config));
    const double cc = std::isnan(c) ? cfg.c : c;
    if (*eigen) return cmd_eigen(cfg);
    if (*solve) return cmd_solve(cfg, cc);
    if (*certify) return cmd_certify(cfg, std::isnan(c_hi) ? cfg.c_hi : c_hi);
    if (*verify) return cmd_verify(cfg, solution, report, cc);
    if (*sweep) return cmd_sweep(cfg, cc, levels > 0 ? levels : cfg.sweep_levels);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.what() << "\n";
    return is_usage_error(f.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
