#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "curva/builders.hpp"
#include "curva/elliptic.hpp"
#include "curva/monotone.hpp"
#include "curva/scenario_spec.hpp"
#include "curva/verify.hpp"

namespace curva {

struct CertifiedResult {
  Field u;
  double c = 0.0;
  CaseTag tag = CaseTag::Neg_Sneg_Hneg;
  double eta1 = 0.0;
  IterationTrace trace;
  CurvatureReport report;
  SubSuperPair pair;
  BracketReport bracket;
  Field composed;  // prescribed interior function after any diffeomorphism
  std::optional<DiffeoParams> diffeo;
  std::map<std::string, double> constants;
};

struct ClassifiedScenario {
  Domain d;
  Field S;  // S or K at nodes
  Field H;  // H or sigma at boundary slots
  double eta1 = 0.0;
};

// Checks the tag against n, the sign pattern of the prescribed data and the sign of
// the first eigenvalue. Sign checks run before any solve.
inline ClassifiedScenario classify(const ScenarioSpec& spec) {
  const char* stage = "classify";
  if (!spec.interior || !spec.boundary)
    fail(ErrorCode::InvalidArgument, stage, "prescribed interior and boundary functions are required");
  const bool two = is_two_dimensional(spec.tag);
  if (two != (spec.domain.n == 2))
    fail(ErrorCode::ClassificationError, stage,
         std::string(to_string(spec.tag)) + " does not match n = " + std::to_string(spec.domain.n));
  ClassifiedScenario out;
  out.d = scenario_domain(spec);
  out.S = sample(out.d.grid, spec.interior);
  out.H = sample_boundary(out.d.grid, spec.boundary);
  const double lo = out.S.minCoeff(), hi = out.S.maxCoeff();
  auto reject = [&](const std::string& why) {
    fail(ErrorCode::ClassificationError, stage, std::string(to_string(spec.tag)) + ": " + why);
  };
  switch (spec.tag) {
    case CaseTag::Neg_Sneg_Hneg:
      if (hi >= 0.0) reject("S must be negative everywhere");
      if (out.H.maxCoeff() > 0.0) reject("H must be nonpositive everywhere");
      break;
    case CaseTag::Neg_Sneg_Hpos:
      if (hi >= 0.0) reject("S must be negative everywhere");
      if (out.H.maxCoeff() <= 0.0) reject("H must be positive somewhere");
      break;
    case CaseTag::Neg_Smixed:
    case CaseTag::TwoD_Kmixed:
      if (!(lo < 0.0 && hi > 0.0)) reject("the interior function must change sign");
      break;
    case CaseTag::Neg_Diffeo:
    case CaseTag::TwoD_Diffeo:
    case CaseTag::Zero_Diffeo:
      if (!(lo < 0.0)) reject("the interior function must be negative somewhere");
      break;
    case CaseTag::TwoD_Kneg:
      if (hi >= 0.0) reject("K must be negative everywhere");
      break;
    case CaseTag::Pos_Spos:
      if (!(hi > 0.0)) reject("S must be positive somewhere");
      break;
  }
  out.eta1 = std::numeric_limits<double>::quiet_NaN();
  if (two) return out;
  out.eta1 = conformal_eigenpair(out.d).eta;
  constexpr double zero_band = 1e-8;
  const bool neg = spec.tag == CaseTag::Neg_Sneg_Hneg || spec.tag == CaseTag::Neg_Sneg_Hpos ||
                   spec.tag == CaseTag::Neg_Smixed || spec.tag == CaseTag::Neg_Diffeo;
  if (neg && !(out.eta1 < -zero_band)) reject("first eigenvalue " + std::to_string(out.eta1) + " is not negative");
  if (spec.tag == CaseTag::Zero_Diffeo && std::abs(out.eta1) > zero_band)
    reject("first eigenvalue " + std::to_string(out.eta1) + " is not zero");
  if (spec.tag == CaseTag::Pos_Spos && !(out.eta1 > zero_band))
    reject("first eigenvalue " + std::to_string(out.eta1) + " is not positive");
  return out;
}

namespace detail {

inline double beta_or(const ScenarioSpec& s, double fallback) { return std::isnan(s.beta) ? fallback : s.beta; }

inline GammaEstimate scenario_gamma(const ScenarioSpec& spec, const Domain& d, double potential, double a) {
  GammaOptions opt;
  opt.seed = spec.seed;
  return estimate_gamma(d, a, Field::Constant(d.nodes(), potential), Field::Zero(d.nb()), spec.gamma_probes, opt);
}

// Composed interior data for the plateau pipelines: searched when the tag asks for a
// diffeomorphism, the identity otherwise.
inline Field plateau_target(const ScenarioSpec& spec, const Domain& d, const Field& S, double factor, double A,
                            double budget, double q, CertifiedResult& res) {
  if (spec.tag != CaseTag::Neg_Diffeo && spec.tag != CaseTag::TwoD_Diffeo) return S;
  const double floor = factor * S.maxCoeff();
  SearchTarget t;
  t.A = A;
  t.factor = factor;
  t.max_bad_volume = floor < A ? std::pow(budget / (A - floor), q) : volume(d);
  const SearchResult sr = search_diffeomorphism(d, S, Objective::SuperlevelVolume, t);
  res.diffeo = sr.params;
  res.constants["diffeo_alpha"] = sr.params.alpha;
  res.constants["diffeo_s"] = sr.params.s;
  res.constants["diffeo_objective"] = sr.objective;
  return sr.composed;
}

inline double default_plateau_level(const ScenarioSpec& spec, const Field& S, double factor) {
  return std::isnan(spec.A) ? 0.5 * (factor * S).maxCoeff() : spec.A;
}

// Largest constant on a quarter-unit grid satisfying both super-solution inequalities
// of the two-dimensional problem on a general background.
inline double constant_gauss_supersolution(const Domain& d, const NonlinearProblem& p) {
  for (int k = 400; k >= -400; --k) {
    const double C = 0.25 * k;
    bool ok = true;
    for (int i = 0; i < d.nodes() && ok; ++i)
      if (!d.grid.on_boundary(i)) ok = p.F(i, C) <= 0.0;
    for (int s = 0; s < d.nb() && ok; ++s) ok = p.G(s, C) <= 0.0;
    if (ok) return C;
  }
  fail(ErrorCode::NoConstantWorks, "constant_supersolution", "no constant in [-100, 100] is a super-solution");
}

inline Mask shell_mask(const Domain& d, double r_in, double r_out) {
  Mask m(d.nodes(), 0);
  for (int k = 0; k < d.nodes(); ++k)
    m[k] = !d.grid.on_boundary(k) && d.grid.r[k] > r_in && d.grid.r[k] < r_out;
  return m;
}

}  // namespace detail

inline CertifiedResult run_scenario(const ScenarioSpec& spec, double c) {
  if (!(c > 0.0) || !std::isfinite(c)) fail(ErrorCode::InvalidArgument, "run_scenario", "c must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  ClassifiedScenario cs = classify(spec);
  const Domain& d = cs.d;
  const int n = d.n();
  CertifiedResult res;
  res.c = c;
  res.tag = spec.tag;
  res.eta1 = cs.eta1;
  res.composed = cs.S;
  SchemeOptions sopt;
  sopt.tol = spec.tol;
  sopt.q = gamma_exponent(n);

  switch (spec.tag) {
    case CaseTag::Neg_Sneg_Hneg:
    case CaseTag::Neg_Sneg_Hpos: {
      const double beta = detail::beta_or(spec, 0.05);
      const EigenSubsolution sub = eigen_subsolution(d, cs.S, cs.H, beta, c);
      const double C = constant_supersolution(d, cs.S, cs.H, c, sub.u.maxCoeff());
      res.pair = {sub.u, constant(d.grid, C), Provenance::EigenScaled, Provenance::Constant, {}};
      res.pair.constants = {{"beta", beta}, {"eta_beta", sub.eta}, {"delta", sub.delta}, {"C", C}};
      break;
    }
    case CaseTag::Neg_Smixed:
    case CaseTag::Neg_Diffeo: {
      if (!spec.normal_form.enabled)
        fail(ErrorCode::NotApplicable, "run_scenario", "the plateau pipeline needs normal-form data");
      const double p = yamabe_p(n), lambda = spec.normal_form.interior, factor = 2.0 - p;
      const GammaEstimate gamma = detail::scenario_gamma(spec, d, factor * lambda, yamabe_a(n));
      sopt.gamma = gamma.gamma;
      const double A = detail::default_plateau_level(spec, cs.S, factor);
      const double budget = plateau_budget(Branch::Yamabe, n, A, gamma, lambda);
      res.composed = detail::plateau_target(spec, d, cs.S, factor, A, budget, gamma.q, res);
      const PlateauResult plateau = build_plateau_function(d, res.composed, A, gamma, Branch::Yamabe, lambda);
      const SupersolutionResult sup = build_negative_supersolution(d, res.composed, plateau.F, plateau.A, gamma);
      const double beta = detail::beta_or(spec, 0.05);
      const EigenSubsolution sub =
          detail::scaled_eigen_subsolution(d, res.composed, cs.H, beta, c, &sup.u_plus, "eigen_subsolution");
      res.pair = {sub.u, sup.u_plus, Provenance::EigenScaled, Provenance::KWTransformPipeline, {}};
      res.pair.constants = {{"gamma", gamma.gamma},         {"A", plateau.A},      {"plateau_norm", plateau.norm},
                            {"plateau_budget", plateau.budget}, {"ramp_width", plateau.ramp_width},
                            {"delta", sup.delta},           {"delta_prime", sup.delta_prime},
                            {"beta", beta},                 {"eta_beta", sub.eta}, {"sub_delta", sub.delta}};
      break;
    }
    case CaseTag::TwoD_Kneg:
    case CaseTag::TwoD_Kmixed:
    case CaseTag::TwoD_Diffeo: {
      if (!d.metric.normal_form) {
        // General background: constant super-solution and the shifted Poisson sub-solution.
        if (spec.tag != CaseTag::TwoD_Kneg)
          fail(ErrorCode::NotApplicable, "run_scenario", "sign-changing K needs the K_g = -1 normal form");
        const NonlinearProblem prob = gauss_problem(d, cs.S, cs.H, c);
        const double C = detail::constant_gauss_supersolution(d, prob);
        const Field up = constant(d.grid, C);
        const Subsolution2D sub = build_2d_subsolution(d, cs.S, cs.H, c, up);
        res.pair = {sub.u_minus, up, Provenance::TwoDPipeline, Provenance::Constant, {}};
        res.pair.constants = {{"C", C}, {"C1", sub.C1}, {"kappa", sub.kappa}, {"neumann_C", sub.C}};
        break;
      }
      const double factor = -2.0;
      const GammaEstimate gamma = detail::scenario_gamma(spec, d, 2.0, 1.0);
      sopt.gamma = gamma.gamma;
      const double A = detail::default_plateau_level(spec, cs.S, factor);
      const double budget = plateau_budget(Branch::Gauss, n, A, gamma, -1.0);
      res.composed = detail::plateau_target(spec, d, cs.S, factor, A, budget, gamma.q, res);
      const PlateauResult plateau = build_plateau_function(d, res.composed, A, gamma, Branch::Gauss);
      const SupersolutionResult sup = build_2d_supersolution(d, res.composed, plateau.F, plateau.A, gamma);
      const Subsolution2D sub = build_2d_subsolution(d, res.composed, cs.H, c, sup.u_plus);
      res.pair = {sub.u_minus, sup.u_plus, Provenance::TwoDPipeline, Provenance::TwoDPipeline, {}};
      res.pair.constants = {{"gamma", gamma.gamma},       {"A", plateau.A},        {"plateau_norm", plateau.norm},
                            {"plateau_budget", plateau.budget}, {"ramp_width", plateau.ramp_width},
                            {"delta", sup.delta},         {"delta_prime", sup.delta_prime},
                            {"C1", sub.C1},               {"neumann_C", sub.C}};
      break;
    }
    case CaseTag::Zero_Diffeo: {
      const SearchResult sr = search_diffeomorphism(d, cs.S, Objective::NegativeIntegral);
      res.diffeo = sr.params;
      res.constants["diffeo_alpha"] = sr.params.alpha;
      res.constants["diffeo_s"] = sr.params.s;
      res.constants["diffeo_objective"] = sr.objective;
      res.composed = sr.composed;
      const ZeroCasePair zp = zero_case_pair(d, res.composed, cs.H, c);
      res.pair = zp.pair;
      break;
    }
    case CaseTag::Pos_Spos: {
      const double R = spec.domain.r_out;
      const double r_in = std::isnan(spec.omega_r_in) ? 0.1 * R : spec.omega_r_in;
      const double r_out = std::isnan(spec.omega_r_out) ? 0.5 * R : spec.omega_r_out;
      const LocalDirichletResult local = solve_local_dirichlet(d, cs.S, detail::shell_mask(d, r_in, r_out));
      const double beta = detail::beta_or(spec, -0.05);
      const double k = beta_factor(n);
      const EigenResult ep = perturbed_eigenvalue(d, yamabe_a(n), d.metric.R, k * d.metric.hb, beta);
      if (!(ep.eta > 0.0))
        fail(ErrorCode::NotApplicable, "run_scenario", "perturbed eigenvalue is not positive");
      const NonlinearProblem prob = yamabe_problem(d, cs.S, cs.H, c);
      double delta = 0.0;
      for (int m = 0; m <= 200 && delta == 0.0; ++m) {
        const double t = std::ldexp(1.0, -m);
        const detail::Violation v = detail::violation(prob, d, Field(t * ep.phi), -1.0);
        if (v.interior <= spec.tol && v.boundary <= spec.tol) delta = t;
      }
      if (delta == 0.0)
        fail(ErrorCode::NotApplicable, "run_scenario", "no delta makes delta * phi a super-solution");
      res.pair = glue_positive_pair(local.u, ep.phi, delta);
      res.pair.constants["multiplier"] = local.multiplier;
      res.pair.constants["eta_beta"] = ep.eta;
      res.pair.constants["beta"] = beta;
      break;
    }
  }

  const NonlinearProblem prob = n == 2 ? gauss_problem(d, res.composed, cs.H, c)
                                       : yamabe_problem(d, res.composed, cs.H, c);
  res.bracket = validate_bracket(res.pair, prob, d, 1e-8, n >= 3);
  if (!res.bracket.pass) fail(ErrorCode::BracketViolation, "validate_bracket", describe(res.bracket));
  res.trace = run_scheme(prob, d, res.pair.u_minus, res.pair.u_plus, sopt);
  res.u = res.trace.u;
  res.report = residual_and_curvature_report(res.u, d, res.composed, cs.H, c, spec.report_floor);
  res.report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [key, value] : res.pair.constants) res.constants[key] = value;
  if (!(res.report.interior_sup <= spec.certify_tol && res.report.boundary_sup <= spec.certify_tol)) {
    fail(ErrorCode::CertificationFailed, "verification",
         "curvature errors " + std::to_string(res.report.interior_sup) + " (interior), " +
             std::to_string(res.report.boundary_sup) + " (boundary) exceed " + std::to_string(spec.certify_tol));
  }
  return res;
}

struct CertifyProbe {
  double c = 0.0;
  bool ok = false;
  std::string code;
  std::string stage;
  std::string detail;
};

struct CertifyOutcome {
  double c_star = 0.0;
  CertifiedResult result;
  std::vector<CertifyProbe> transcript;
};

constexpr int kBisectionSteps = 12;

// Bisection on (0, c_hi], assuming certifiability is monotone in c; the final candidate
// is re-run once.
inline CertifyOutcome certify_max_c(const ScenarioSpec& spec, double c_hi) {
  if (!(c_hi > 0.0) || !std::isfinite(c_hi)) fail(ErrorCode::InvalidArgument, "certify_max_c", "c_hi must be positive");
  classify(spec);
  CertifyOutcome out;
  auto probe = [&](double c) {
    CertifyProbe p;
    p.c = c;
    try {
      run_scenario(spec, c);
      p.ok = true;
    } catch (const Failure& f) {
      p.code = to_string(f.code());
      p.stage = f.stage();
      p.detail = f.detail();
    }
    out.transcript.push_back(p);
    return p.ok;
  };
  double lo = 0.0;
  if (probe(c_hi)) {
    lo = c_hi;
  } else {
    double hi = c_hi;
    for (int i = 0; i < kBisectionSteps; ++i) {
      const double mid = 0.5 * (lo + hi);
      (probe(mid) ? lo : hi) = mid;
    }
  }
  if (lo == 0.0) {
    const CertifyProbe& last = out.transcript.back();
    fail(ErrorCode::AllFailed, "certify_max_c",
         "no c in (0, " + std::to_string(c_hi) + "] certifies; last probe c = " + std::to_string(last.c) + " failed " +
             last.code + " at " + last.stage + ": " + last.detail);
  }
  out.c_star = lo;
  out.result = run_scenario(spec, lo);
  return out;
}

}  // namespace curva
