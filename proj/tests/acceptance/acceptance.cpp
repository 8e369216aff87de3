// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is the number of failures.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "curva/curva.hpp"

using namespace curva;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

RunConfig load(const std::string& name) { return parse_config(read_file(std::string(CURVA_CONFIG_DIR) + "/" + name)); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string joined(const std::ostringstream& os) {
  std::string s = os.str();
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "; ") == 0) s.resize(s.size() - 2);
  return s;
}

std::string failure_line(const Failure& f) { return std::string("run failed: ") + f.what(); }

// Results certified by criteria 2 and 7, checked again by criterion 3.
struct CertifiedRun {
  std::string name;
  ScenarioSpec spec;
  CertifiedResult result;
};
std::vector<CertifiedRun> certified;

Outcome hyperbolic_disk() {
  const RunConfig cfg = load("hyperbolic_disk.json");
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const CertifiedResult r = run_scenario(cfg.spec, cfg.c);
    const Domain d = scenario_domain(cfg.spec);
    const Field exact = sample(d.grid, [](double x, double y) { return std::log(2.0 / (1.0 - x * x - y * y)); });
    const double err = (r.u - exact).lpNorm<Eigen::Infinity>();
    const double t = seconds_since(t0);
    certified.push_back({"hyperbolic disk", cfg.spec, r});
    return {err <= 1e-3 && t <= 60.0, "sup error " + fmt("%.3e", err) + ", runtime " + fmt("%.1f s", t)};
  } catch (const Failure& f) {
    return {false, failure_line(f) + " (after " + fmt("%.1f s", seconds_since(t0)) + ")"};
  }
}

Outcome ball_round_trip() {
  const RunConfig cfg = load("ball_negative.json");
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const CertifyOutcome out = certify_max_c(cfg.spec, cfg.c_hi);
    const double t = seconds_since(t0);
    const CurvatureReport& rep = out.result.report;
    certified.push_back({"negative ball", cfg.spec, out.result});
    return {rep.interior_sup <= 1e-3 && rep.boundary_sup <= 1e-3 && t <= 30.0,
            "c* = " + fmt("%g", out.c_star) + ", interior error " + fmt("%.3e", rep.interior_sup) +
                ", boundary error " + fmt("%.3e", rep.boundary_sup) + ", runtime " + fmt("%.2f s", t)};
  } catch (const Failure& f) {
    return {false, failure_line(f)};
  }
}

Outcome scheme_properties() {
  if (certified.empty()) return {false, "no certified run to check"};
  std::ostringstream os;
  bool pass = true;
  for (const CertifiedRun& run : certified) {
    const CertifiedResult& r = run.result;
    const double tol = run.spec.tol;
    double worst_step = -std::numeric_limits<double>::infinity();
    for (const StepRecord& s : r.trace.steps) worst_step = std::max(worst_step, s.violation);
    const Domain d = scenario_domain(run.spec);
    const Field H = sample_boundary(d.grid, run.spec.boundary);
    const NonlinearProblem p =
        d.n() == 2 ? gauss_problem(d, r.composed, H, r.c) : yamabe_problem(d, r.composed, H, r.c);
    SchemeOptions opt;
    opt.tol = tol;
    opt.q = gamma_exponent(d.n());
    opt.A_multiplier = 2.0;
    const IterationTrace doubled = run_scheme(p, d, r.pair.u_minus, r.pair.u_plus, opt);
    const double shift = (doubled.u - r.u).lpNorm<Eigen::Infinity>();
    const bool ok = worst_step <= 10.0 * LinearSolver::kTolerance && r.trace.min_gap_lower >= -10.0 * tol &&
                    r.trace.max_gap_upper <= 10.0 * tol && r.report.res_interior <= 100.0 * tol &&
                    r.report.res_boundary <= 100.0 * tol && shift <= 5.0 * tol;
    pass = pass && ok;
    os << run.name << ": max step increase " << fmt("%.1e", worst_step) << ", gaps " << fmt("%.1e", r.trace.min_gap_lower)
       << "/" << fmt("%.1e", r.trace.max_gap_upper) << ", residuals " << fmt("%.1e", r.report.res_interior) << "/"
       << fmt("%.1e", r.report.res_boundary) << ", 2A shift " << fmt("%.1e", shift) << "; ";
  }
  return {pass, joined(os)};
}

// phi'' + phi'/r + eta phi = 0 on the unit disk, returns phi'(1) + b phi(1).
double robin_mismatch(double eta, double b) {
  const int steps = 20000;
  const double r0 = 1e-4, h = (1.0 - r0) / steps;
  double r = r0, y = 1.0 - eta * r0 * r0 / 4.0, z = -eta * r0 / 2.0;
  auto f = [eta](double rr, double yy, double zz) { return std::pair{zz, -zz / rr - eta * yy}; };
  for (int i = 0; i < steps; ++i) {
    const auto [k1y, k1z] = f(r, y, z);
    const auto [k2y, k2z] = f(r + h / 2, y + h / 2 * k1y, z + h / 2 * k1z);
    const auto [k3y, k3z] = f(r + h / 2, y + h / 2 * k2y, z + h / 2 * k2z);
    const auto [k4y, k4z] = f(r + h, y + h * k3y, z + h * k3z);
    y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
    z += h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z);
    r += h;
  }
  return z + b * y;
}

Outcome eigen_suite() {
  const Domain disk = build_domain({DomainKind::Disk2D, 2, 0.0, 1.0, 65, 64, nullptr});
  const EigenResult neu = principal_eigenpair(disk, 1.0, Field::Zero(disk.nodes()), Field::Zero(disk.nb()));
  const double spread = (neu.phi.maxCoeff() - neu.phi.minCoeff()) / neu.phi.maxCoeff();
  const bool neumann_ok = std::abs(neu.eta) <= 1e-8 && spread <= 1e-8;

  const Field V = sample(disk.grid, [](double x, double y) { return 2.0 + std::cos(3.0 * x) * y; });
  const Field b = constant_boundary(disk.grid, 0.5);
  const double shift_err = std::abs(principal_eigenpair(disk, 1.0, (V.array() - 5.0).matrix(), b).eta -
                                    (principal_eigenpair(disk, 1.0, V, b).eta - 5.0));

  double lo = 1.0, hi = 2.0, flo = robin_mismatch(lo, 1.0);
  for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
    const double mid = 0.5 * (lo + hi), fm = robin_mismatch(mid, 1.0);
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  const double oracle = 0.5 * (lo + hi);
  auto robin = [](int nr) {
    const Domain d = build_domain({DomainKind::Disk2D, 2, 0.0, 1.0, nr, 16, nullptr});
    return principal_eigenpair(d, 1.0, Field::Zero(d.nodes()), constant_boundary(d.grid, 1.0)).eta;
  };
  const double e1 = robin(513), e2 = robin(1025);
  const double robin_err = std::abs((4.0 * e2 - e1) / 3.0 - oracle);

  const Domain ball = with_normal_form(build_domain({DomainKind::RadialBall, 3, 0.0, 10.0, 201, 1, nullptr}), -1.0, 1.0);
  const double eta1 = conformal_eigenpair(ball).eta;
  double prev = eta1, first = 0.0;
  bool monotone = true;
  for (int i = 1; i <= 20; ++i) {
    const double e = conformal_eigenpair(ball, 0.005 * i).eta;
    if (i == 1) first = e;
    monotone = monotone && e >= prev - 1e-10;
    prev = e;
  }
  const bool sign_ok = !(eta1 < 0.0) || first < 0.0;
  return {neumann_ok && shift_err <= 1e-8 && robin_err <= 1e-6 && monotone && sign_ok,
          "Neumann eta " + fmt("%.1e", neu.eta) + ", shift error " + fmt("%.1e", shift_err) + ", Robin " +
              fmt("%.10f", (4.0 * e2 - e1) / 3.0) + " vs oracle " + fmt("%.10f", oracle) + " (error " +
              fmt("%.1e", robin_err) + "), beta sweep " + (monotone ? "nondecreasing" : "NOT monotone") +
              ", eta_1 " + fmt("%.4f", eta1) + " -> eta_{1,0.005} " + fmt("%.4f", first)};
}

Field random_smooth(const Grid& g, std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const double c0 = U(rng), c1 = U(rng), c2 = U(rng), c3 = U(rng), k = 1.0 + 2.0 * std::abs(U(rng));
  return sample(g, [=](double x, double y) {
    return amplitude * (c0 * std::sin(k * x) + c1 * std::cos(k * y) + c2 * x * y + c3 * (x * x + y * y));
  });
}

Outcome transform_equivalence() {
  std::ostringstream os;
  bool pass = true;
  for (int n : {3, 2}) {
    const Domain d = n == 3 ? with_normal_form(build_domain({DomainKind::RadialBall, 3, 0.0, 1.0, 41, 1, nullptr}), -1.0, 0.5)
                            : with_normal_form(build_domain({DomainKind::Disk2D, 2, 0.0, 1.0, 17, 16, nullptr}), -1.0, 0.0);
    std::mt19937_64 rng(n == 3 ? 3 : 5);
    long agree = 0, total = 0, strays = 0;
    double round_trip = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Field base = random_smooth(d.grid, rng, n == 3 ? 0.4 : 0.5);
      const Field u = n == 3 ? Field(base.array().exp()) : base;
      const Field S = random_smooth(d.grid, rng, 2.0);
      const Field H = trace(d.grid, random_smooth(d.grid, rng, 2.0));
      const Field w = kw_transform(u, {n, Direction::UtoW});
      const Field back = kw_transform(w, {n, Direction::WtoU});
      round_trip = std::max(round_trip, ((back - u).array() / u.array().abs().max(1.0)).abs().maxCoeff());
      const FormResiduals ur = u_form_residuals(d, u, S, H), wr = w_form_residuals(d, w, S, H);
      auto check = [&](double a, double b) {
        ++total;
        if ((a > 0) == (b < 0) && a != 0.0 && b != 0.0) {
          ++agree;
        } else if (std::abs(a) <= 1e-9 || std::abs(b) <= 1e-9) {
          ++agree;
        } else {
          ++strays;
        }
      };
      for (int k = 0; k < d.nodes(); ++k)
        if (!d.grid.on_boundary(k)) check(ur.interior[k], wr.interior[k]);
      for (int s = 0; s < d.nb(); ++s) check(ur.boundary[s], wr.boundary[s]);
    }
    const double rate = static_cast<double>(agree) / total;
    pass = pass && rate >= 0.999 && strays == 0 && round_trip <= 1e-14;
    os << "n=" << n << ": agreement " << fmt("%.4f", rate) << " over " << total << " nodes, round trip "
       << fmt("%.1e", round_trip) << "; ";
  }
  return {pass, joined(os)};
}

Outcome conformal_invariance() {
  auto disk = [](int m) {
    const Domain d = build_domain({DomainKind::Disk2D, 2, 0.0, 1.0, 16 * m + 1, 16 * m, nullptr});
    return conformal_invariance_check(d, sample(d.grid, [](double x, double y) { return 1.0 + (x * x + y * y) / 4.0; }),
                                      sample(d.grid, [](double x, double y) { return x * (x * x + y * y); }), 3);
  };
  const double e1 = disk(1), e2 = disk(2), e4 = disk(4), e8 = disk(8);
  const double o1 = std::log2(e1 / e2), o2 = std::log2(e2 / e4), o3 = std::log2(e4 / e8);
  return {std::min({o1, o2, o3}) >= 1.8, "discrepancy " + fmt("%.2e", e1) + " -> " + fmt("%.2e", e8) + ", orders " +
                                             fmt("%.3f", o1) + ", " + fmt("%.3f", o2) + ", " + fmt("%.3f", o3)};
}

Outcome plateau_pipeline() {
  const RunConfig cfg = load("annulus_band.json");
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const CertifyOutcome out = certify_max_c(cfg.spec, cfg.c_hi);
    const double t = seconds_since(t0);
    const CertifiedResult& r = out.result;
    const Domain d = scenario_domain(cfg.spec);
    GammaOptions gopt;
    gopt.seed = cfg.spec.seed;
    const GammaEstimate gamma =
        estimate_gamma(d, 1.0, constant(d.grid, 2.0), Field::Zero(d.nb()), cfg.spec.gamma_probes, gopt);
    const double A = r.constants.at("A");
    const PlateauResult plateau = build_plateau_function(d, r.composed, A, gamma, Branch::Gauss);
    bool bound_ok = true;
    for (int k = 0; k < d.nodes(); ++k) bound_ok = bound_ok && -2.0 * r.composed[k] >= plateau.F[k];
    const bool budget_ok = plateau.norm <= plateau.budget;
    const bool errors_ok = r.report.interior_sup <= 5e-3 && r.report.boundary_sup <= 5e-3;
    certified.push_back({"annulus band", cfg.spec, r});
    return {r.diffeo.has_value() && bound_ok && budget_ok && errors_ok && t <= 120.0,
            "diffeo (alpha " + fmt("%g", r.diffeo->alpha) + ", s " + fmt("%g", r.diffeo->s) + "), -2K o phi >= F " +
                (bound_ok ? "holds" : "FAILS") + ", ||F - A|| " + fmt("%.3g", plateau.norm) + " <= budget " +
                fmt("%.3g", plateau.budget) + ", c* = " + fmt("%.6g", out.c_star) + ", errors " +
                fmt("%.2e", r.report.interior_sup) + "/" + fmt("%.2e", r.report.boundary_sup) + ", runtime " +
                fmt("%.1f s", t)};
  } catch (const Failure& f) {
    return {false, failure_line(f)};
  }
}

// -8 (u'' + 2u'/r) = S u^5 on (r0, r1) with zero end values, shot from r0.
double shoot_end(double slope, double r0, double r1, int steps, const std::function<double(double)>& S,
                 std::vector<double>* path = nullptr) {
  const double h = (r1 - r0) / steps;
  double r = r0, y = 0.0, z = slope;
  auto f = [&](double rr, double yy, double zz) {
    return std::pair{zz, -2.0 * zz / rr - S(rr) * std::pow(std::max(yy, 0.0), 5.0) / 8.0};
  };
  if (path) path->assign(1, 0.0);
  for (int i = 0; i < steps; ++i) {
    const auto [k1y, k1z] = f(r, y, z);
    const auto [k2y, k2z] = f(r + h / 2, y + h / 2 * k1y, z + h / 2 * k1z);
    const auto [k3y, k3z] = f(r + h / 2, y + h / 2 * k2y, z + h / 2 * k2z);
    const auto [k4y, k4z] = f(r + h, y + h * k3y, z + h * k3z);
    y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
    z += h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z);
    r += h;
    if (path) path->push_back(y);
  }
  return y;
}

Outcome positive_case() {
  const RunConfig cfg = load("positive_ball.json");
  const Domain d = scenario_domain(cfg.spec);
  const Field S = sample(d.grid, cfg.spec.interior);
  std::ostringstream os;
  // Local Dirichlet solution against shooting.
  Mask omega(d.nodes(), 0);
  for (int k = 0; k < d.nodes(); ++k) omega[k] = d.grid.r[k] > 0.1 + 1e-9 && d.grid.r[k] < 0.5 - 1e-9;
  bool local_ok = false;
  try {
    const LocalDirichletResult local = solve_local_dirichlet(d, S, omega);
    auto Sfn = [&](double r) { return cfg.spec.interior(r, 0.0); };
    const int steps = 40000;
    double lo = 1e-3, hi = lo;
    while (shoot_end(hi, 0.1, 0.5, steps, Sfn) > 0.0) {
      lo = hi;
      hi *= 2.0;
    }
    for (int i = 0; i < 100 && hi - lo > 1e-13 * hi; ++i) {
      const double mid = 0.5 * (lo + hi);
      (shoot_end(mid, 0.1, 0.5, steps, Sfn) > 0.0 ? lo : hi) = mid;
    }
    std::vector<double> path;
    shoot_end(0.5 * (lo + hi), 0.1, 0.5, steps, Sfn, &path);
    const double h = 1.0 / (d.grid.n_r - 1);
    double peak = 0.0, err = 0.0;
    for (int k = 0; k < d.nodes(); ++k) {
      const double r = d.grid.r[k];
      if (r < 0.1 - 1e-12 || r > 0.5 + 1e-12) continue;
      const double oracle = path[static_cast<size_t>(std::lround((r - 0.1) / h * (steps / 400.0)))];
      peak = std::max(peak, oracle);
      err = std::max(err, std::abs(local.u[k] - oracle));
    }
    local_ok = err / peak <= 1e-4;
    os << "local Dirichlet vs shooting " << fmt("%.2e", err / peak) << " relative (" << local.iterations
       << " iterations)";
  } catch (const Failure& f) {
    os << "local Dirichlet " << failure_line(f);
  }
  bool run_ok = false;
  try {
    const CertifiedResult r = run_scenario(cfg.spec, cfg.c_hi);
    run_ok = r.report.interior_sup <= 5e-3 && r.report.boundary_sup <= 5e-3;
    os << "; errors " << fmt("%.2e", r.report.interior_sup) << "/" << fmt("%.2e", r.report.boundary_sup);
  } catch (const Failure& f) {
    os << "; glued pair " << failure_line(f);
  }
  return {local_ok && run_ok, os.str()};
}

Outcome negative_controls() {
  std::ostringstream os;
  bool pass = true;
  // Corrupted solution.
  {
    const RunConfig cfg = load("ball_negative.json");
    const CertifiedResult r = run_scenario(cfg.spec, 1.0);
    const Domain d = scenario_domain(cfg.spec);
    Field bumped = r.u;
    for (int k = 0; k < d.nodes(); ++k) bumped[k] *= 1.0 + 0.01 * std::exp(-std::pow(d.grid.r[k] - 9.0, 2));
    const CurvatureReport a = residual_and_curvature_report(r.u, cfg.spec, 1.0);
    const CurvatureReport b = residual_and_curvature_report(bumped, cfg.spec, 1.0);
    const bool up = b.interior_sup > a.interior_sup && b.interior_l2 > a.interior_l2 &&
                    b.boundary_sup > a.boundary_sup && b.boundary_l2 > a.boundary_l2 &&
                    b.res_interior > a.res_interior && b.res_boundary > a.res_boundary;
    pass = pass && up;
    os << "corrupted errors " << (up ? "all increase" : "NOT all increase");
  }
  // Neg tag with S > 0.
  {
    RunConfig cfg = load("ball_negative.json");
    cfg.spec.interior = [](double, double) { return 1.0; };
    std::string code = "none", stage;
    try {
      run_scenario(cfg.spec, 1.0);
    } catch (const Failure& f) {
      code = to_string(f.code());
      stage = f.stage();
    }
    const bool ok = code == "ClassificationError" && stage == "classify";
    pass = pass && ok;
    os << "; Neg with S > 0: " << code << " at " << stage;
  }
  // NegativeIntegral search with S > 0.
  {
    const Domain d = build_domain({DomainKind::Disk2D, 2, 0.0, 1.0, 33, 32, nullptr});
    const Field S = sample(d.grid, [](double x, double y) { return 1.0 + x * x + y; });
    std::string code = "none";
    try {
      search_diffeomorphism(d, S, Objective::NegativeIntegral);
    } catch (const Failure& f) {
      code = to_string(f.code());
    }
    pass = pass && code == "SearchFailed";
    os << "; search on S > 0: " << code;
  }
  return {pass, joined(os)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CURVA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("curva_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::string names[2];
  for (int i = 0; i < 2; ++i) {
    const std::string tag = std::to_string(i);
    const std::string text = R"j({
  "domain": {"kind": "Annulus2D", "r_in": 0.5, "r_out": 1.0, "n_r": 65, "n_theta": 64},
  "scenario": "TwoD_Diffeo",
  "interior": "-1 + 4*max(0, 1 - ((r - 0.5)/0.5 - 0.925)^2/0.0036)",
  "boundary": "1",
  "normal_form": {"interior": -1, "boundary": 0},
  "c": 0.03,
  "tolerances": {"iteration": 1e-8, "certify": 5e-3},
  "output": {"trace": ")j" + (dir / ("trace" + tag + ".csv")).string() +
                             R"(", "report": ")" + (dir / ("report" + tag + ".json")).string() + R"("}
})";
    names[i] = (dir / ("config" + tag + ".json")).string();
    write_atomic(names[i], text);
  }
  const int s0 = run_cli("solve --config " + names[0]);
  const int s1 = run_cli("solve --config " + names[1]);
  bool same = false;
  if (s0 == 0 && s1 == 0) {
    same = read_file((dir / "trace0.csv").string()) == read_file((dir / "trace1.csv").string()) &&
           read_file((dir / "report0.json").string()) == read_file((dir / "report1.json").string());
  }
  fs::remove_all(dir);
  return {same, "annulus solve at c = 0.03 twice: exit " + std::to_string(s0) + "/" + std::to_string(s1) +
                    (same ? ", trace and report byte-identical" : ", outputs differ")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  // Order matters: criterion 3 re-checks the runs certified by 1, 2 and 7.
  const std::vector<Criterion> criteria{
      {1, "hyperbolic disk reproduction", hyperbolic_disk},
      {2, "round-trip curvature certification", ball_round_trip},
      {7, "plateau and diffeomorphism pipeline", plateau_pipeline},
      {3, "monotone scheme properties", scheme_properties},
      {4, "eigen suite", eigen_suite},
      {5, "transformation equivalence", transform_equivalence},
      {6, "conformal invariance order", conformal_invariance},
      {8, "positive case", positive_case},
      {9, "negative controls", negative_controls},
      {10, "determinism", determinism},
  };
  std::vector<std::string> lines(11);
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("unexpected exception: ") + e.what()};
    }
    failures += !o.pass;
    lines[c.id] = std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + " (" + c.name +
                  "): " + o.detail;
    std::fprintf(stderr, "%s\n", lines[c.id].c_str());
  }
  for (int i = 1; i <= 10; ++i) std::printf("%s\n", lines[i].c_str());
  return failures;
}
