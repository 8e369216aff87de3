#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "curva/elliptic.hpp"
#include "curva/error.hpp"
#include "curva/grid.hpp"
#include "curva/monotone.hpp"

namespace curva {

enum class Provenance {
  EigenScaled,
  Constant,
  KWTransformPipeline,
  TwoDPipeline,
  GluedPositiveCase,
  ZeroCasePerturbation,
  Manual,
};

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::EigenScaled: return "EigenScaled";
    case Provenance::Constant: return "Constant";
    case Provenance::KWTransformPipeline: return "KWTransformPipeline";
    case Provenance::TwoDPipeline: return "TwoDPipeline";
    case Provenance::GluedPositiveCase: return "GluedPositiveCase";
    case Provenance::ZeroCasePerturbation: return "ZeroCasePerturbation";
    case Provenance::Manual: return "Manual";
  }
  return "?";
}

struct SubSuperPair {
  Field u_minus;
  Field u_plus;
  Provenance lower = Provenance::Manual;
  Provenance upper = Provenance::Manual;
  std::map<std::string, double> constants;
};

// ---------------------------------------------------------------------------
// Bracket validation

struct BracketReport {
  bool pass = false;
  double tolerance = 1e-8;
  double sub_interior = 0.0;    // worst normalized violations, >= 0
  double sub_boundary = 0.0;
  double super_interior = 0.0;
  double super_boundary = 0.0;
  double ordering = 0.0;        // max(u_minus - u_plus)
  bool positivity_ok = true;
  int worst_node = -1;
  std::string worst_kind;
  double worst = 0.0;
};

namespace detail {

struct Violation {
  double interior = 0.0;
  double boundary = 0.0;
  double worst = 0.0;
  int node = -1;
  bool at_boundary = false;
};

// Normalized one-sided violation; sign +1 checks a sub-solution, -1 a super-solution.
inline Violation violation(const NonlinearProblem& p, const Domain& d, const Field& u, double sign) {
  Violation v;
  const Field lap = -p.scale * (d.metric.lap * u);
  const Field dn = d.metric.nrm * u;
  auto note = [&](double x, int k, bool b) {
    if (x > v.worst) {
      v.worst = x;
      v.node = k;
      v.at_boundary = b;
    }
  };
  for (int k = 0; k < d.nodes(); ++k) {
    if (d.grid.on_boundary(k)) continue;
    const double f = p.F(k, u[k]);
    const double x = sign * (lap[k] - f) / (1.0 + std::abs(lap[k]) + std::abs(f));
    v.interior = std::max(v.interior, x);
    note(x, k, false);
  }
  for (int s = 0; s < d.nb(); ++s) {
    const int k = d.grid.boundary[s];
    const double gv = p.G(s, u[k]);
    const double x = sign * (dn[s] + p.sigma * u[k] - gv) /
                     (1.0 + std::abs(dn[s]) + std::abs(p.sigma * u[k]) + std::abs(gv));
    v.boundary = std::max(v.boundary, x);
    note(x, k, true);
  }
  return v;
}

}  // namespace detail

inline BracketReport validate_bracket(const SubSuperPair& pair, const NonlinearProblem& p, const Domain& d,
                                      double tolerance = 1e-8, bool yamabe_positivity = false) {
  BracketReport rep;
  rep.tolerance = tolerance;
  const detail::Violation lo = detail::violation(p, d, pair.u_minus, 1.0);
  const detail::Violation hi = detail::violation(p, d, pair.u_plus, -1.0);
  rep.sub_interior = lo.interior;
  rep.sub_boundary = lo.boundary;
  rep.super_interior = hi.interior;
  rep.super_boundary = hi.boundary;
  if (lo.worst >= hi.worst) {
    rep.worst = lo.worst;
    rep.worst_node = lo.node;
    rep.worst_kind = lo.at_boundary ? "sub/boundary" : "sub/interior";
  } else {
    rep.worst = hi.worst;
    rep.worst_node = hi.node;
    rep.worst_kind = hi.at_boundary ? "super/boundary" : "super/interior";
  }
  int gk = 0;
  rep.ordering = (pair.u_minus - pair.u_plus).maxCoeff(&gk);
  if (rep.ordering > 1e-12 && rep.ordering >= rep.worst) {
    rep.worst = rep.ordering;
    rep.worst_node = gk;
    rep.worst_kind = "ordering";
  }
  if (yamabe_positivity)
    rep.positivity_ok = pair.u_minus.minCoeff() >= 0.0 && pair.u_minus.maxCoeff() > 0.0 && pair.u_plus.minCoeff() > 0.0;
  rep.pass = rep.sub_interior <= tolerance && rep.sub_boundary <= tolerance && rep.super_interior <= tolerance &&
             rep.super_boundary <= tolerance && rep.ordering <= 1e-12 && rep.positivity_ok;
  return rep;
}

inline std::string describe(const BracketReport& r) {
  std::ostringstream os;
  os << "sub(int " << r.sub_interior << ", bnd " << r.sub_boundary << ") super(int " << r.super_interior << ", bnd "
     << r.super_boundary << ") ordering " << r.ordering << "; worst " << r.worst_kind << " at node " << r.worst_node;
  if (!r.positivity_ok) os << "; positivity violated";
  return os.str();
}

// ---------------------------------------------------------------------------
// Eigenfunction sub-solution and constant super-solution (n >= 3, negative case)

struct EigenSubsolution {
  Field u;
  double delta = 0.0;
  double eta = 0.0;
  Field phi;
};

namespace detail {

inline void require_yamabe(const Domain& d, const char* stage) {
  if (d.n() < 3) fail(ErrorCode::NotApplicable, stage, "requires n >= 3");
}

inline bool sub_inequalities_hold(const NonlinearProblem& p, const Domain& d, const Field& u, double tol) {
  const Violation v = violation(p, d, u, 1.0);
  return v.interior <= tol && v.boundary <= tol;
}

// Largest delta = 2^-k with delta * phi a sub-solution below `upper`.
inline EigenSubsolution scaled_eigen_subsolution(const Domain& d, const Field& S, const Field& H, double beta,
                                                 double c, const Field* upper, const char* stage) {
  require_yamabe(d, stage);
  const int n = d.n();
  const double p = yamabe_p(n);
  const EigenResult ep = perturbed_eigenvalue(d, yamabe_a(n), d.metric.R, beta_factor(n) * d.metric.hb, beta);
  if (ep.eta >= 0.0)
    fail(ErrorCode::NotApplicable, stage, "perturbed eigenvalue " + std::to_string(ep.eta) + " is not negative");
  const NonlinearProblem prob = yamabe_problem(d, S, H, c);
  const Field& phi = ep.phi;
  const double inf_phi = phi.minCoeff();
  const double sup_phi = phi.maxCoeff();
  const double sup_S = S.cwiseAbs().maxCoeff();
  for (int k = 0; k <= 200; ++k) {
    const double delta = std::ldexp(1.0, -k);
    // |eta| inf phi >= delta^{p-2} sup|S| sup phi^{p-1} makes eta phi <= delta^{p-2} S phi^{p-1} nodewise.
    if (std::abs(ep.eta) * inf_phi < std::pow(delta, p - 2.0) * sup_S * std::pow(sup_phi, p - 1.0)) continue;
    bool boundary_ok = true;
    for (int s = 0; s < d.nb() && boundary_ok; ++s) {
      const double ph = delta * phi[d.grid.boundary[s]];
      boundary_ok = -beta * ph <= c * H[s] * std::pow(ph, 0.5 * p);
    }
    if (!boundary_ok) continue;
    const Field u = delta * phi;
    if (upper && (u - *upper).maxCoeff() > 0.0) continue;
    if (!sub_inequalities_hold(prob, d, u, 1e-8)) continue;
    return {u, delta, ep.eta, phi};
  }
  fail(ErrorCode::NotApplicable, stage, "no delta in 2^0..2^-200 satisfies the sub-solution inequalities");
}

}  // namespace detail

inline EigenSubsolution eigen_subsolution(const Domain& d, const Field& S, const Field& H, double beta, double c) {
  if (S.maxCoeff() >= 0.0) fail(ErrorCode::NotApplicable, "eigen_subsolution", "S must be negative everywhere");
  return detail::scaled_eigen_subsolution(d, S, H, beta, c, nullptr, "eigen_subsolution");
}

inline double constant_supersolution(const Domain& d, const Field& S, const Field& H, double c, double at_least = 0.0) {
  detail::require_yamabe(d, "constant_supersolution");
  const NonlinearProblem prob = yamabe_problem(d, S, H, c);
  const int k0 = at_least > 0.0 ? static_cast<int>(std::ceil(std::log2(at_least))) : -40;
  for (int k = k0; k <= 60; ++k) {
    const double C = std::ldexp(1.0, k);
    if (C < at_least) continue;
    bool ok = true;
    for (int i = 0; i < d.nodes() && ok; ++i)
      if (!d.grid.on_boundary(i)) ok = prob.F(i, C) <= 0.0;
    for (int s = 0; s < d.nb() && ok; ++s) ok = prob.G(s, C) <= 0.0;
    if (ok) return C;
  }
  fail(ErrorCode::NoConstantWorks, "constant_supersolution", "no power-of-two constant satisfies both inequalities");
}

// ---------------------------------------------------------------------------
// Transformation lemma

enum class Direction { UtoW, WtoU };

struct TransformParams {
  int n = 3;
  Direction direction = Direction::UtoW;
  double exponent() const { return n == 2 ? -2.0 : 2.0 - yamabe_p(n); }
};

inline Field kw_transform(const Field& v, const TransformParams& t) {
  const bool positive_needed = t.n >= 3 || t.direction == Direction::WtoU;
  if (positive_needed && v.minCoeff() <= 0.0)
    fail(ErrorCode::NonPositiveInput, "kw_transform", "input must be strictly positive");
  const double e = t.exponent();
  if (t.n == 2)
    return t.direction == Direction::UtoW ? Field((e * v.array()).exp()) : Field(v.array().log() / e);
  return t.direction == Direction::UtoW ? Field(v.array().pow(e)) : Field(v.array().pow(1.0 / e));
}

// Residuals of the u-form super-solution inequalities (>= 0 for a super-solution).
struct FormResiduals {
  Field interior;  // zero at boundary nodes
  Field boundary;
};

inline FormResiduals u_form_residuals(const Domain& d, const Field& u, const Field& S, const Field& H) {
  FormResiduals r{Field::Zero(d.nodes()), Field::Zero(d.nb())};
  const Field lap = d.metric.lap * u;
  const Field dn = d.metric.nrm * u;
  if (d.n() == 2) {
    for (int k = 0; k < d.nodes(); ++k)
      if (!d.grid.on_boundary(k)) r.interior[k] = -lap[k] + d.metric.R[k] - S[k] * std::exp(2.0 * u[k]);
    for (int s = 0; s < d.nb(); ++s) {
      const double ub = u[d.grid.boundary[s]];
      r.boundary[s] = dn[s] + d.metric.hb[s] - H[s] * std::exp(ub);
    }
    return r;
  }
  const double a = yamabe_a(d.n()), p = yamabe_p(d.n()), k2 = 2.0 / (p - 2.0);
  for (int k = 0; k < d.nodes(); ++k)
    if (!d.grid.on_boundary(k))
      r.interior[k] = -a * lap[k] + d.metric.R[k] * u[k] - S[k] * std::pow(u[k], p - 1.0);
  for (int s = 0; s < d.nb(); ++s) {
    const double ub = u[d.grid.boundary[s]];
    r.boundary[s] = dn[s] + k2 * d.metric.hb[s] * ub - k2 * H[s] * std::pow(ub, 0.5 * p);
  }
  return r;
}

namespace detail {

// Bregman divergence of w = g(u) where g(u) = u^{2-p} (n >= 3) or e^{-2u} (n = 2).
inline double bregman(int n, double ue, double ui) {
  if (n == 2) {
    const double gi = std::exp(-2.0 * ui);
    return std::exp(-2.0 * ue) - gi + 2.0 * gi * (ue - ui);
  }
  const double e = 2.0 - yamabe_p(n);
  const double gi = std::pow(ui, e);
  return std::pow(ue, e) - gi - e * std::pow(ui, e - 1.0) * (ue - ui);
}

}  // namespace detail

// Edgewise discretization of D |grad w|^2 / w (n >= 3) or |grad w|^2 / w (n = 2) that
// keeps the transformation lemma exact at the discrete level.
inline Field gradient_term(const Domain& d, const Field& w) {
  const int n = d.n();
  const Field u = kw_transform(w, {n, Direction::WtoU});
  const double scale = n == 2 ? 1.0 : yamabe_a(n);
  Field q = Field::Zero(d.nodes());
  for (int k = 0; k < d.nodes(); ++k) {
    if (d.grid.on_boundary(k)) continue;
    for (SpMat::InnerIterator it(d.metric.lap, k); it; ++it)
      if (it.col() != k) q[k] += scale * it.value() * detail::bregman(n, u[it.col()], u[k]);
  }
  return q;
}

// Normal derivative of w minus the Bregman correction of the one-sided stencil.
inline Field w_normal_derivative(const Domain& d, const Field& w) {
  const int n = d.n();
  const Field u = kw_transform(w, {n, Direction::WtoU});
  Field out = d.metric.nrm * w;
  for (int s = 0; s < d.nb(); ++s) {
    const int kb = d.grid.boundary[s];
    for (SpMat::InnerIterator it(d.metric.nrm, s); it; ++it)
      if (it.col() != kb) out[s] -= it.value() * detail::bregman(n, u[it.col()], u[kb]);
  }
  return out;
}

// Residuals of the w-form inequalities (<= 0 for a super-solution in u).
inline FormResiduals w_form_residuals(const Domain& d, const Field& w, const Field& S, const Field& H,
                                      bool structure_preserving = true) {
  const int n = d.n();
  FormResiduals r{Field::Zero(d.nodes()), Field::Zero(d.nb())};
  const Field lap = d.metric.lap * w;
  Field q;
  Field dn;
  if (structure_preserving) {
    q = gradient_term(d, w);
    dn = w_normal_derivative(d, w);
  } else {
    const double D = n == 2 ? 1.0 : (yamabe_p(n) - 1.0) * yamabe_a(n) / (yamabe_p(n) - 2.0);
    const Field g2 = gradient_norm(d, w).cwiseAbs2();
    q = D * g2.cwiseQuotient(w);
    dn = d.metric.nrm * w;
  }
  if (n == 2) {
    for (int k = 0; k < d.nodes(); ++k)
      if (!d.grid.on_boundary(k)) r.interior[k] = -lap[k] - 2.0 * w[k] * d.metric.R[k] + q[k] + 2.0 * S[k];
    for (int s = 0; s < d.nb(); ++s) {
      const double wb = w[d.grid.boundary[s]];
      r.boundary[s] = dn[s] - 2.0 * wb * d.metric.hb[s] + 2.0 * H[s] * std::sqrt(wb);
    }
    return r;
  }
  const double a = yamabe_a(n), p = yamabe_p(n);
  for (int k = 0; k < d.nodes(); ++k)
    if (!d.grid.on_boundary(k))
      r.interior[k] = -a * lap[k] + (2.0 - p) * d.metric.R[k] * w[k] + q[k] - (2.0 - p) * S[k];
  for (int s = 0; s < d.nb(); ++s) {
    const double wb = w[d.grid.boundary[s]];
    r.boundary[s] = dn[s] - 2.0 * d.metric.hb[s] * wb + 2.0 * H[s] * std::sqrt(wb);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Super-solutions from the transformed problem

struct SupersolutionResult {
  Field u_plus;
  Field w;
  double delta = 0.0;
  double delta_prime = 0.0;
  double w_min = 0.0;
  double w_max = 0.0;
  double grad_max = 0.0;
  double q_max = 0.0;
  double norm_F_minus_A = 0.0;
  double budget = 0.0;
};

namespace detail {

inline double constant_value(const Field& f, const char* stage, const char* what) {
  if (f.size() == 0) return 0.0;
  const double v = f[0];
  if ((f.array() - v).abs().maxCoeff() > 1e-12 * std::max(1.0, std::abs(v)))
    fail(ErrorCode::NotApplicable, stage, std::string(what) + " must be constant (normal form)");
  return v;
}

}  // namespace detail

// Negative-case super-solution: w solves -a Lap w + (2-p) lambda w = F - delta,
// dw/dnu = delta', and u_plus = w^{1/(2-p)}.
inline SupersolutionResult build_negative_supersolution(const Domain& d, const Field& S, const Field& F, double A,
                                                        const GammaEstimate& gamma) {
  const char* stage = "build_negative_supersolution";
  detail::require_yamabe(d, stage);
  const int n = d.n();
  const double a = yamabe_a(n), p = yamabe_p(n), D = (p - 1.0) * a / (p - 2.0);
  const double lambda = detail::constant_value(d.metric.R, stage, "R_g");
  if (!(lambda < 0.0)) fail(ErrorCode::NotApplicable, stage, "normal form needs R_g = lambda < 0");
  if (!(A > 0.0)) fail(ErrorCode::ConditionFailed, stage, "A must be positive");
  const double q = gamma.q;
  SupersolutionResult res;
  const double denom = 1.0 + (D + 1.0) * (2.0 - p) * lambda;
  res.budget = A / (2.0 * gamma.gamma * denom);
  res.norm_F_minus_A = lq_norm(d, (F.array() - A).matrix(), q);
  for (int k = 0; k < d.nodes(); ++k)
    if ((2.0 - p) * S[k] < F[k] - 1e-12 * std::max(1.0, std::abs(F[k])))
      fail(ErrorCode::ConditionFailed, stage, "(2-p) S >= F fails at node " + std::to_string(k));
  if (res.norm_F_minus_A > res.budget)
    fail(ErrorCode::ConditionFailed, stage,
         "||F - A||_q = " + std::to_string(res.norm_F_minus_A) + " exceeds budget " + std::to_string(res.budget));

  res.delta = A / denom;
  res.delta_prime = -res.delta / (2.0 * gamma.gamma * std::pow(volume(d), 1.0 / q));
  RobinProblem rp{a, Field::Constant(d.nodes(), (2.0 - p) * lambda), Field::Zero(d.nb()),
                  (F.array() - res.delta).matrix(), Field::Constant(d.nb(), res.delta_prime)};
  res.w = solve_linear_robin(rp, d).u;
  res.w_min = res.w.minCoeff();
  res.w_max = res.w.maxCoeff();
  res.grad_max = gradient_norm(d, res.w).maxCoeff();
  const double dl = res.delta;
  if (!(res.w_min >= D * dl && res.w_max <= (D + 2.0) * dl && res.grad_max <= dl)) {
    std::ostringstream os;
    os << "need " << D * dl << " <= w <= " << (D + 2.0) * dl << " and |grad w| <= " << dl << ", got w in [" << res.w_min
       << ", " << res.w_max << "], |grad w| <= " << res.grad_max;
    fail(ErrorCode::BoundsCheckFailed, stage, os.str());
  }
  res.q_max = gradient_term(d, res.w).maxCoeff();
  if (res.q_max > dl)
    fail(ErrorCode::BoundsCheckFailed, stage, "discrete gradient term " + std::to_string(res.q_max) + " exceeds delta");
  res.u_plus = kw_transform(res.w, {n, Direction::WtoU});
  const FormResiduals ur = u_form_residuals(d, res.u_plus, S, Field::Zero(d.nb()));
  if (ur.interior.minCoeff() < -1e-10)
    fail(ErrorCode::BoundsCheckFailed, stage, "interior super-solution inequality fails by " +
                                                  std::to_string(-ur.interior.minCoeff()));
  return res;
}

// Two-dimensional super-solution on the K_g = -1, sigma_g = 0 normal form.
// delta = A/5 makes w - 2 delta solve the equation with right-hand side F - A.
inline SupersolutionResult build_2d_supersolution(const Domain& d, const Field& K, const Field& F, double A,
                                                  const GammaEstimate& gamma) {
  const char* stage = "build_2d_supersolution";
  if (d.n() != 2) fail(ErrorCode::NotApplicable, stage, "requires n = 2");
  const double Kg = detail::constant_value(d.metric.R, stage, "K_g");
  const double sg = detail::constant_value(d.metric.hb, stage, "sigma_g");
  if (Kg != -1.0 || sg != 0.0) fail(ErrorCode::NotApplicable, stage, "requires K_g = -1 and sigma_g = 0");
  if (!(A > 0.0)) fail(ErrorCode::ConditionFailed, stage, "A must be positive");
  SupersolutionResult res;
  const double q = 3.0;
  res.budget = A / (10.0 * gamma.gamma);
  res.norm_F_minus_A = lq_norm(d, (F.array() - A).matrix(), q);
  for (int k = 0; k < d.nodes(); ++k)
    if (-2.0 * K[k] < F[k] - 1e-12 * std::max(1.0, std::abs(F[k])))
      fail(ErrorCode::ConditionFailed, stage, "-2K >= F fails at node " + std::to_string(k));
  if (res.norm_F_minus_A > res.budget)
    fail(ErrorCode::ConditionFailed, stage,
         "||F - A||_3 = " + std::to_string(res.norm_F_minus_A) + " exceeds budget " + std::to_string(res.budget));
  res.delta = A / 5.0;
  res.delta_prime = -res.delta / (2.0 * gamma.gamma * std::pow(volume(d), 1.0 / q));
  RobinProblem rp{1.0, Field::Constant(d.nodes(), 2.0), Field::Zero(d.nb()), (F.array() - res.delta).matrix(),
                  Field::Constant(d.nb(), res.delta_prime)};
  res.w = solve_linear_robin(rp, d).u;
  res.w_min = res.w.minCoeff();
  res.w_max = res.w.maxCoeff();
  res.grad_max = gradient_norm(d, res.w).maxCoeff();
  const double dl = res.delta;
  if (!(res.w_min >= dl && res.w_max <= 3.0 * dl && res.grad_max <= dl)) {
    std::ostringstream os;
    os << "need " << dl << " <= w <= " << 3.0 * dl << " and |grad w| <= " << dl << ", got w in [" << res.w_min << ", "
       << res.w_max << "], |grad w| <= " << res.grad_max;
    fail(ErrorCode::BoundsCheckFailed, stage, os.str());
  }
  res.q_max = gradient_term(d, res.w).maxCoeff();
  if (res.q_max > dl)
    fail(ErrorCode::BoundsCheckFailed, stage, "discrete gradient term " + std::to_string(res.q_max) + " exceeds delta");
  res.u_plus = kw_transform(res.w, {2, Direction::WtoU});
  const FormResiduals ur = u_form_residuals(d, res.u_plus, K, Field::Zero(d.nb()));
  if (ur.interior.minCoeff() < -1e-10)
    fail(ErrorCode::BoundsCheckFailed, stage, "interior super-solution inequality fails by " +
                                                  std::to_string(-ur.interior.minCoeff()));
  return res;
}

struct Subsolution2D {
  Field u_minus;
  double C = 0.0;
  double C1 = 0.0;
  double kappa = 0.0;
  double multiplier = 0.0;
  int shifts = 0;
};

// -Lap u0 = kappa with du0/dnu = C, kappa = 1/2 - max K_g (1/2 on the normal form),
// then u_minus = u0 + C1 for the first C1 in 0, -1, -2, ... satisfying all inequalities.
inline Subsolution2D build_2d_subsolution(const Domain& d, const Field& K, const Field& sigma, double c,
                                          const Field& u_plus) {
  const char* stage = "build_2d_subsolution";
  if (d.n() != 2) fail(ErrorCode::NotApplicable, stage, "requires n = 2");
  Subsolution2D out;
  out.kappa = -d.metric.R.maxCoeff() - 0.5;
  const double vol = volume(d), len = d.metric.area.sum();
  out.C = -out.kappa * vol / len;
  RobinProblem rp{1.0, Field::Zero(d.nodes()), Field::Zero(d.nb()), Field::Constant(d.nodes(), out.kappa),
                  Field::Constant(d.nb(), out.C)};
  const RobinSolution u0 = solve_linear_robin(rp, d, true);
  out.multiplier = u0.multiplier;
  const NonlinearProblem prob = gauss_problem(d, K, sigma, c);
  for (int step = 0; step <= 200; ++step) {
    const double C1 = -static_cast<double>(step);
    const Field um = (u0.u.array() + C1).matrix();
    if ((um - u_plus).maxCoeff() > 0.0) continue;
    const SignedResiduals r = signed_residuals(prob, d, um);
    if (r.interior.maxCoeff() <= 0.0 && r.boundary.maxCoeff() <= 0.0) {
      out.u_minus = um;
      out.C1 = C1;
      out.shifts = step;
      return out;
    }
  }
  fail(ErrorCode::NoShiftWorks, stage, "no shift C1 in 0..-200 satisfies the sub-solution inequalities");
}

// ---------------------------------------------------------------------------
// Plateau function

enum class Branch { Yamabe, Gauss };

struct PlateauResult {
  Field F;
  Mask U, V;
  double A = 0.0;
  double norm = 0.0;    // ||F - A||_q
  double budget = 0.0;
  int ramp_width = 0;
  double floor_value = 0.0;  // value of F outside U
  bool degenerate = false;
};

namespace detail {

inline std::vector<std::vector<int>> neighbours(const Grid& g) {
  std::vector<std::vector<int>> nb(g.n_nodes);
  const int N = g.n_r - 1;
  for (int k = 0; k < g.n_nodes; ++k) {
    const int i = g.ring[k], j = g.slot[k];
    if (g.center() && i == 0) {
      for (int jj = 0; jj < g.n_theta; ++jj) nb[k].push_back(g.id(1, jj));
      continue;
    }
    if (i < N) nb[k].push_back(g.id(i + 1, j));
    if (i > 0) nb[k].push_back(g.id(i - 1, j));
    if (g.polar()) {
      nb[k].push_back(g.id(i, j + 1));
      nb[k].push_back(g.id(i, j - 1));
    }
  }
  return nb;
}

inline Mask erode(const Mask& m, const std::vector<std::vector<int>>& nb) {
  Mask out(m.size(), 0);
  for (size_t k = 0; k < m.size(); ++k) {
    if (!m[k]) continue;
    bool keep = true;
    for (int e : nb[k]) keep = keep && m[e];
    out[k] = keep;
  }
  return out;
}

}  // namespace detail

// Budget on ||F - A||_q: A / (2 gamma (1 + (D+1)(2-p) lambda)) for n >= 3 and A / (10 gamma) for n = 2.
inline double plateau_budget(Branch branch, int n, double A, const GammaEstimate& gamma, double lambda) {
  if (branch == Branch::Gauss) return A / (10.0 * gamma.gamma);
  const double p = yamabe_p(n), D = (p - 1.0) * yamabe_a(n) / (p - 2.0);
  return A / (2.0 * gamma.gamma * (1.0 + (D + 1.0) * (2.0 - p) * lambda));
}

inline PlateauResult build_plateau_function(const Domain& d, const Field& composed, double A,
                                            const GammaEstimate& gamma, Branch branch, double lambda = -1.0,
                                            int max_ramp = 3) {
  const char* stage = "build_plateau_function";
  const int n = d.n();
  const double factor = branch == Branch::Gauss ? -2.0 : 2.0 - yamabe_p(n);
  const Field T = factor * composed;
  PlateauResult res;
  res.floor_value = T.minCoeff();
  const double q = gamma.q;
  if (composed.maxCoeff() < 0.0) {
    res.degenerate = true;
    res.A = res.floor_value;
    res.F = Field::Constant(d.nodes(), res.A);
    res.U.assign(d.nodes(), 1);
    res.V = res.U;
    res.budget = plateau_budget(branch, n, res.A, gamma, lambda);
    return res;
  }
  if (!(A > 0.0) || A >= T.maxCoeff())
    fail(ErrorCode::InvalidArgument, stage, "A must lie in (0, max of the composed bound)");
  res.A = A;
  res.budget = plateau_budget(branch, n, A, gamma, lambda);
  const auto nb = detail::neighbours(d.grid);
  Mask U0(d.nodes(), 0);
  for (int k = 0; k < d.nodes(); ++k) U0[k] = T[k] > A;
  res.U = detail::erode(U0, nb);
  if (std::none_of(res.U.begin(), res.U.end(), [](char c) { return c; }))
    fail(ErrorCode::BudgetInfeasible, stage, "superlevel region vanishes after erosion");

  auto build = [&](int width, Mask& V) {
    std::vector<int> depth(d.nodes(), 0);
    Mask cur = res.U;
    for (int k = 0; k < d.nodes(); ++k) depth[k] = cur[k] ? 1 : 0;
    for (int w = 1; w <= width; ++w) {
      cur = detail::erode(cur, nb);
      for (int k = 0; k < d.nodes(); ++k)
        if (cur[k]) depth[k] = w + 1;
    }
    V = cur;
    Field F(d.nodes());
    for (int k = 0; k < d.nodes(); ++k) {
      if (!res.U[k]) F[k] = res.floor_value;
      else if (V[k]) F[k] = A;
      else F[k] = res.floor_value + (A - res.floor_value) * depth[k] / (width + 1.0);
    }
    return F;
  };
  for (int width = max_ramp; width >= 0; --width) {
    Mask V;
    Field F = build(width, V);
    const double norm = lq_norm(d, (F.array() - A).matrix(), q);
    if (norm <= res.budget && std::any_of(V.begin(), V.end(), [](char c) { return c; })) {
      res.F = std::move(F);
      res.V = std::move(V);
      res.norm = norm;
      res.ramp_width = width;
      return res;
    }
    if (width == 0) res.norm = norm;
  }
  fail(ErrorCode::BudgetInfeasible, stage,
       "||F - A||_q = " + std::to_string(res.norm) + " exceeds budget " + std::to_string(res.budget));
}

// ---------------------------------------------------------------------------
// Local Dirichlet problem

struct LocalDirichletResult {
  Field u;
  double multiplier = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

// Minimizes a int |grad u|^2 + int R u^2 over int S |u|^p = 1 on the mask with zero
// data outside, by projected Sobolev-gradient steps, then rescales by the multiplier.
inline LocalDirichletResult solve_local_dirichlet(const Domain& d, const Field& S, const Mask& omega,
                                                  double step = 1.0, int max_iter = 20000) {
  const char* stage = "solve_local_dirichlet";
  detail::require_yamabe(d, stage);
  const int n = d.n();
  const double a = yamabe_a(n), p = yamabe_p(n);
  std::vector<int> idx, pos(d.nodes(), -1);
  for (int k = 0; k < d.nodes(); ++k) {
    if (!omega[k]) continue;
    if (d.grid.on_boundary(k)) fail(ErrorCode::InvalidArgument, stage, "subdomain must avoid the boundary");
    if (!(S[k] > 0.0)) fail(ErrorCode::InvalidArgument, stage, "S must be positive on the subdomain");
    pos[k] = static_cast<int>(idx.size());
    idx.push_back(k);
  }
  const int m = static_cast<int>(idx.size());
  if (m < 3) fail(ErrorCode::MinimizerDegenerate, stage, "subdomain has fewer than three nodes");
  Triplets t;
  for (int r = 0; r < m; ++r) {
    const int k = idx[r];
    for (SpMat::InnerIterator it(d.metric.lap, k); it; ++it)
      if (pos[it.col()] >= 0) t.emplace_back(r, pos[it.col()], -a * it.value());
    t.emplace_back(r, r, d.metric.R[k]);
  }
  SpMat L(m, m);
  L.setFromTriplets(t.begin(), t.end());
  const LinearSolver solver(L, stage);
  Field w(m), s(m);
  for (int r = 0; r < m; ++r) {
    w[r] = d.metric.vol[idx[r]];
    s[r] = S[idx[r]];
  }
  auto constraint = [&](const Field& v) { return w.dot((s.array() * v.array().abs().pow(p)).matrix()); };
  Field v = Field::Ones(m);
  v /= std::pow(constraint(v), 1.0 / p);
  LocalDirichletResult out;
  double mu = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    const Field Lv = L * v;
    mu = w.dot(v.cwiseProduct(Lv));
    const Field z = solver.solve((s.array() * v.array().pow(p - 1.0)).matrix());
    Field next = ((1.0 - step) * v + step * mu * z).cwiseMax(0.0);
    const double cn = constraint(next);
    if (!(cn > 0.0) || !std::isfinite(cn)) fail(ErrorCode::MinimizerDegenerate, stage, "iterate collapsed to zero");
    next /= std::pow(cn, 1.0 / p);
    const double change = (next - v).lpNorm<Eigen::Infinity>();
    v = next;
    out.iterations = it;
    if (change <= 1e-14 * v.lpNorm<Eigen::Infinity>()) break;
  }
  mu = w.dot(v.cwiseProduct(L * v));
  if (!(mu > 0.0)) fail(ErrorCode::MinimizerDegenerate, stage, "nonpositive Rayleigh quotient");
  const double kappa = std::pow(mu, 1.0 / (p - 2.0));
  const Field u = kappa * v;
  int support = 0;
  for (int r = 0; r < m; ++r) support += u[r] > 1e-3 * u.maxCoeff();
  if (support < 3) fail(ErrorCode::MinimizerDegenerate, stage, "minimizer concentrates on fewer than three nodes");
  out.u = Field::Zero(d.nodes());
  for (int r = 0; r < m; ++r) out.u[idx[r]] = u[r];
  out.multiplier = mu;
  out.residual = (L * u - (s.array() * u.array().pow(p - 1.0)).matrix()).lpNorm<Eigen::Infinity>();
  if (out.residual > 1e-8 * std::max(1.0, u.maxCoeff()))
    fail(ErrorCode::MinimizerDegenerate, stage, "residual " + std::to_string(out.residual) + " above 1e-8");
  return out;
}

// u_plus = delta phi; u_minus = t u0 with the largest t = 2^-m ordering the pair.
inline SubSuperPair glue_positive_pair(const Field& u0, const Field& phi, double delta) {
  if (u0.maxCoeff() <= 0.0)
    fail(ErrorCode::InvalidArgument, "glue_positive_pair", "u0 vanishes identically; the sub-solution must be nontrivial");
  const Field up = delta * phi;
  for (int m = 0; m <= 40; ++m) {
    const double t = std::ldexp(1.0, -m);
    if ((t * u0 - up).maxCoeff() <= 0.0) {
      SubSuperPair pair{t * u0, up, Provenance::GluedPositiveCase, Provenance::EigenScaled, {}};
      pair.constants["t"] = t;
      pair.constants["delta"] = delta;
      return pair;
    }
  }
  fail(ErrorCode::CannotOrder, "glue_positive_pair", "no t in 2^0..2^-40 orders the pair");
}

// ---------------------------------------------------------------------------
// Diffeomorphism search

enum class Objective { NegativeIntegral, SuperlevelVolume };

struct DiffeoParams {
  double alpha = 0.0;  // rotation angle
  double s = 0.0;      // radial exponent offset: t -> t^{1+s}
};

struct SearchTarget {
  double A = 0.0;            // SuperlevelVolume threshold on factor * S
  double factor = 1.0;       // (2-p) or -2
  double max_bad_volume = 0.0;  // allowed Vol{factor * S o phi <= A}
};

struct SearchResult {
  Field composed;
  DiffeoParams params;
  double objective = 0.0;
  int tried = 0;
};

inline const std::vector<double>& squeeze_family() {
  static const std::vector<double> s{0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 9.0, -0.25, -0.5, -0.75, -0.9};
  return s;
}

inline Field compose(const Domain& d, const Field& S, const DiffeoParams& prm) {
  const Grid& g = d.grid;
  const double r0 = g.r0, R = g.spec.r_out;
  Field out(d.nodes());
  for (int k = 0; k < d.nodes(); ++k) {
    const double t = std::clamp((g.r[k] - r0) / (R - r0), 0.0, 1.0);
    const double rr = r0 + (R - r0) * std::pow(t, 1.0 + prm.s);
    const double th = g.theta[k] + prm.alpha;
    out[k] = interpolate(g, S, rr * std::cos(th), rr * std::sin(th));
  }
  return out;
}

inline SearchResult search_diffeomorphism(const Domain& d, const Field& S, Objective objective,
                                          const SearchTarget& target = {}) {
  const int rotations = d.grid.polar() ? 8 : 1;
  SearchResult best;
  best.objective = objective == Objective::NegativeIntegral ? std::numeric_limits<double>::infinity()
                                                            : -std::numeric_limits<double>::infinity();
  const double vol = volume(d);
  int tried = 0;
  for (double s : squeeze_family()) {
    for (int rot = 0; rot < rotations; ++rot) {
      const DiffeoParams prm{rot * 2.0 * std::numbers::pi / rotations, s};
      const Field c = compose(d, S, prm);
      ++tried;
      double value;
      bool ok;
      if (objective == Objective::NegativeIntegral) {
        value = integrate(c, Region::Interior, d);
        ok = value < 0.0;
        if (value < best.objective) best = {c, prm, value, tried};
      } else {
        value = 0.0;
        for (int k = 0; k < d.nodes(); ++k)
          if (target.factor * c[k] > target.A) value += d.metric.vol[k];
        ok = vol - value <= target.max_bad_volume;
        if (value > best.objective) best = {c, prm, value, tried};
      }
      if (ok) return {c, prm, value, tried};
    }
  }
  std::ostringstream os;
  os << "family exhausted after " << tried << " maps; best objective " << best.objective << " at alpha "
     << best.params.alpha << ", s " << best.params.s;
  fail(ErrorCode::SearchFailed, "search_diffeomorphism", os.str());
}

// ---------------------------------------------------------------------------
// Zero case

struct ZeroCasePair {
  SubSuperPair pair;
  Field v;
  double m = 0.0;
  double eps = 0.0;
};

namespace detail {

// Violation relative to the size of the terms themselves, so that tiny fields
// cannot pass on the absolute floor of the normalized check.
inline double scale_free_violation(const NonlinearProblem& p, const Domain& d, const Field& u, double sign) {
  const Field lap = -p.scale * (d.metric.lap * u);
  const Field dn = d.metric.nrm * u;
  double worst = 0.0;
  auto rel = [](double x, double size) { return size > 0.0 ? x / size : 0.0; };
  for (int k = 0; k < d.nodes(); ++k) {
    if (d.grid.on_boundary(k)) continue;
    const double f = p.F(k, u[k]);
    worst = std::max(worst, rel(sign * (lap[k] - f), std::abs(lap[k]) + std::abs(f)));
  }
  for (int s = 0; s < d.nb(); ++s) {
    const int k = d.grid.boundary[s];
    const double lhs = dn[s] + p.sigma * u[k], gv = p.G(s, u[k]);
    worst = std::max(worst, rel(sign * (lhs - gv), std::abs(lhs) + std::abs(gv)));
  }
  return worst;
}

}  // namespace detail

// u_{+-} = m +- eps v with -a Lap v = S - mean(S), dv/dnu = 0 and v shifted to min 0
// so the pair can be ordered; first (m, eps) on the power-of-two grid whose pair passes
// validation and the scale-free check.
inline ZeroCasePair zero_case_pair(const Domain& d, const Field& S, const Field& H, double c) {
  const char* stage = "zero_case_pair";
  detail::require_yamabe(d, stage);
  const double mean = integrate(S, Region::Interior, d) / volume(d);
  if (!(mean < 0.0)) fail(ErrorCode::NotApplicable, stage, "needs a negative mean of S");
  RobinProblem rp{yamabe_a(d.n()), Field::Zero(d.nodes()), Field::Zero(d.nb()), (S.array() - mean).matrix(),
                  Field::Zero(d.nb())};
  Field v = solve_linear_robin(rp, d, true).u;
  v.array() -= v.minCoeff();
  const NonlinearProblem prob = yamabe_problem(d, S, H, c);
  BracketReport best;
  best.worst = std::numeric_limits<double>::infinity();
  double best_relative = std::numeric_limits<double>::infinity();
  for (int i = -10; i <= 10; ++i) {
    const double m = std::ldexp(1.0, i);
    for (int j = 0; j >= -30; --j) {
      const double eps = std::ldexp(1.0, j);
      SubSuperPair pair{(m - eps * v.array()).matrix(), (m + eps * v.array()).matrix(),
                        Provenance::ZeroCasePerturbation, Provenance::ZeroCasePerturbation, {}};
      if (pair.u_minus.minCoeff() <= 0.0) continue;
      const BracketReport rep = validate_bracket(pair, prob, d, 1e-8, true);
      const double relative = std::max(detail::scale_free_violation(prob, d, pair.u_minus, 1.0),
                                       detail::scale_free_violation(prob, d, pair.u_plus, -1.0));
      best_relative = std::min(best_relative, relative);
      if (rep.pass && relative <= 1e-8) {
        pair.constants["m"] = m;
        pair.constants["eps"] = eps;
        return {pair, v, m, eps};
      }
      if (rep.worst < best.worst) best = rep;
    }
  }
  std::ostringstream os;
  os << "no (m, eps) pair validates; best scale-free violation " << best_relative << "; best: " << describe(best);
  fail(ErrorCode::NotApplicable, stage, os.str());
}

}  // namespace curva
