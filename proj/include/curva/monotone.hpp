#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "curva/elliptic.hpp"
#include "curva/error.hpp"
#include "curva/grid.hpp"

namespace curva {

using NodeMap = std::function<double(int, double)>;

// -scale Lap_g u = F(x, u) in M,  du/dnu + sigma u = G(x, u) on the boundary.
// F is indexed by node, G by boundary slot.
struct NonlinearProblem {
  double scale = 1.0;
  NodeMap F, dF;
  NodeMap G, dG;
  double sigma = 0.0;
  std::string label;
};

// Yamabe form: F = -R_g u + S u^{p-1}, G = -(2/(p-2)) h_g u + (2/(p-2)) c H u^{p/2}.
// Powers act on max(u, 0).
inline NonlinearProblem yamabe_problem(const Domain& d, const Field& S, const Field& H, double c) {
  const int n = d.n();
  const double p = yamabe_p(n), k = 2.0 / (p - 2.0);
  const Field R = d.metric.R, hb = d.metric.hb;
  const Field cH = c * H;
  NonlinearProblem pr;
  pr.scale = yamabe_a(n);
  pr.label = "yamabe";
  pr.F = [R, S, p](int i, double u) { return -R[i] * u + S[i] * std::pow(std::max(u, 0.0), p - 1.0); };
  pr.dF = [R, S, p](int i, double u) { return -R[i] + (p - 1.0) * S[i] * std::pow(std::max(u, 0.0), p - 2.0); };
  pr.G = [hb, cH, p, k](int s, double u) { return -k * hb[s] * u + k * cH[s] * std::pow(std::max(u, 0.0), 0.5 * p); };
  pr.dG = [hb, cH, p, k](int s, double u) {
    return -k * hb[s] + k * cH[s] * 0.5 * p * std::pow(std::max(u, 0.0), 0.5 * p - 1.0);
  };
  return pr;
}

// Gauss form: F = -K_g + K e^{2u}, G = -sigma_g + c sigma e^{u}.
inline NonlinearProblem gauss_problem(const Domain& d, const Field& K, const Field& sig, double c) {
  const Field Kg = d.metric.R, sg = d.metric.hb;
  const Field cs = c * sig;
  NonlinearProblem pr;
  pr.scale = 1.0;
  pr.label = "gauss";
  pr.F = [Kg, K](int i, double u) { return -Kg[i] + K[i] * std::exp(2.0 * u); };
  pr.dF = [K](int i, double u) { return 2.0 * K[i] * std::exp(2.0 * u); };
  pr.G = [sg, cs](int s, double u) { return -sg[s] + cs[s] * std::exp(u); };
  pr.dG = [cs](int s, double u) { return cs[s] * std::exp(u); };
  return pr;
}

struct IterationConstants {
  double A = 0.0;
  double B = 0.0;
  double C = 0.0;
  double D1 = 0.0;
  double D2 = 0.0;
  double u_lo = 0.0;
  double u_hi = 0.0;
};

constexpr int kDerivativeSamples = 256;
constexpr double kMargin = 1.1;
constexpr double kAFloor = 1e-6;

inline IterationConstants derive_iteration_constants(const NonlinearProblem& p, const Domain& d, const Field& u_minus,
                                                     const Field& u_plus) {
  const double gap = (u_minus - u_plus).maxCoeff();
  if (gap > 1e-12)
    fail(ErrorCode::BracketViolation, "derive_iteration_constants",
         "u_minus exceeds u_plus by " + std::to_string(gap));
  IterationConstants c;
  c.u_lo = u_minus.minCoeff();
  c.u_hi = u_plus.maxCoeff();
  double worst_F = -std::numeric_limits<double>::infinity(), worst_G = worst_F;
  for (int m = 0; m < kDerivativeSamples; ++m) {
    const double u = c.u_lo + (c.u_hi - c.u_lo) * m / (kDerivativeSamples - 1);
    for (int k = 0; k < d.nodes(); ++k) {
      if (d.grid.on_boundary(k)) continue;
      worst_F = std::max(worst_F, -p.dF(k, u));
      c.C = std::max(c.C, std::abs(p.F(k, u)));
    }
    for (int s = 0; s < d.nb(); ++s) {
      worst_G = std::max(worst_G, p.sigma - p.dG(s, u));
      c.D1 = std::max(c.D1, std::abs(p.G(s, u)));
      c.D2 = std::max(c.D2, std::abs(p.dG(s, u)));
    }
  }
  c.A = std::max(kAFloor, kMargin * worst_F);
  c.B = std::max(0.0, kMargin * worst_G);
  return c;
}

struct Residuals {
  double interior = 0.0;
  double boundary = 0.0;
};

// Signed residuals: interior -scale Lap u - F(u), boundary du/dnu + sigma u - G(u).
struct SignedResiduals {
  Field interior;  // per node, zero at boundary nodes
  Field boundary;  // per slot
};

inline SignedResiduals signed_residuals(const NonlinearProblem& p, const Domain& d, const Field& u) {
  SignedResiduals r{-p.scale * (d.metric.lap * u), d.metric.nrm * u};
  for (int k = 0; k < d.nodes(); ++k) r.interior[k] = d.grid.on_boundary(k) ? 0.0 : r.interior[k] - p.F(k, u[k]);
  for (int s = 0; s < d.nb(); ++s) {
    const double ub = u[d.grid.boundary[s]];
    r.boundary[s] += p.sigma * ub - p.G(s, ub);
  }
  return r;
}

inline Residuals nonlinear_residuals(const NonlinearProblem& p, const Domain& d, const Field& u) {
  const SignedResiduals r = signed_residuals(p, d, u);
  return {r.interior.lpNorm<Eigen::Infinity>(), r.boundary.lpNorm<Eigen::Infinity>()};
}

// Factored operator of one iteration step: (-scale Lap + A) in M, (d/dnu + B) on the boundary.
class IterationOperator {
 public:
  IterationOperator(const NonlinearProblem& p, const IterationConstants& c, const Domain& d)
      : p_(p),
        c_(c),
        d_(d),
        solver_(robin_matrix(d, p.scale, Field::Constant(d.nodes(), c.A), Field::Constant(d.nb(), c.B)),
                "iterate_once") {}

  Field step(const Field& u_prev) const {
    Field rhs(d_.nodes());
    for (int k = 0; k < d_.nodes(); ++k) rhs[k] = c_.A * u_prev[k] + p_.F(k, u_prev[k]);
    for (int s = 0; s < d_.nb(); ++s) {
      const int k = d_.grid.boundary[s];
      rhs[k] = (c_.B - p_.sigma) * u_prev[k] + p_.G(s, u_prev[k]);
    }
    return solver_.solve(rhs);
  }

 private:
  const NonlinearProblem& p_;
  IterationConstants c_;
  const Domain& d_;
  LinearSolver solver_;
};

inline Field iterate_once(const NonlinearProblem& p, const IterationConstants& c, const Field& u_prev, const Domain& d) {
  if (!u_prev.allFinite()) fail(ErrorCode::InvalidArgument, "iterate_once", "non-finite input field");
  return IterationOperator(p, c, d).step(u_prev);
}

struct StepRecord {
  int k = 0;
  double increment = 0.0;
  double min_u = 0.0;
  double max_u = 0.0;
  double res_interior = 0.0;
  double res_boundary = 0.0;
  double violation = 0.0;  // max(u_k - u_{k-1}), should be <= 0
  double ratio = 0.0;      // increment / previous increment
};

// Smallness conditions on G; evaluated with the empirical gamma, advisory only.
struct SmallnessAdvisory {
  bool evaluated = false;
  double first = 0.0;
  double second = 0.0;
  bool satisfied = false;
};

struct IterationTrace {
  std::vector<StepRecord> steps;
  bool converged = false;
  std::string verdict;
  Field u;
  IterationConstants constants;
  SmallnessAdvisory advisory;
  double min_gap_lower = 0.0;  // min over steps of min(u_k - u_minus)
  double max_gap_upper = 0.0;  // max over steps of max(u_k - u_plus)
  double max_violation = -std::numeric_limits<double>::infinity();
};

struct SchemeOptions {
  double tol = 1e-8;
  int max_iter = 5000;
  double solver_tol = LinearSolver::kTolerance;
  double A_multiplier = 1.0;   // scales the derived A (robustness checks)
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double q = 3.0;
};

inline SmallnessAdvisory smallness_advisory(const NonlinearProblem& p, const Domain& d, const IterationConstants& c,
                                            const Field& u_minus, const Field& u_plus, double gamma, double q) {
  SmallnessAdvisory a;
  if (!std::isfinite(gamma)) return a;
  const double vq = std::pow(volume(d), 1.0 / q);
  double g1 = 0.0;
  for (int s = 0; s < d.nb(); ++s) {
    const double ub = u_plus[d.grid.boundary[s]];
    g1 = std::max(g1, std::abs((c.B - p.sigma) * ub + p.G(s, ub)));
  }
  const double umax = std::max(u_plus.cwiseAbs().maxCoeff(), u_minus.cwiseAbs().maxCoeff());
  const double m0 = gamma * ((c.A * umax + c.C) * vq + 1.0);
  a.evaluated = true;
  a.first = g1 * vq;
  a.second = (c.B - p.sigma) * m0 + c.D1 * vq + c.D2 * m0;
  a.satisfied = a.first <= 1.0 && a.second <= 1.0;
  return a;
}

// Monotone iteration from u_plus. Stops when the increment and the geometric tail
// estimate increment * rho / (1 - rho) both fall below tol.
inline IterationTrace run_scheme(const NonlinearProblem& p, const Domain& d, const Field& u_minus, const Field& u_plus,
                                 const SchemeOptions& opt = {}) {
  IterationTrace tr;
  tr.constants = derive_iteration_constants(p, d, u_minus, u_plus);
  tr.constants.A *= opt.A_multiplier;
  tr.advisory = smallness_advisory(p, d, tr.constants, u_minus, u_plus, opt.gamma, opt.q);
  const IterationOperator op(p, tr.constants, d);
  Field u = u_plus;
  double prev_inc = std::numeric_limits<double>::quiet_NaN();
  tr.min_gap_lower = (u - u_minus).minCoeff();
  tr.max_gap_upper = (u - u_plus).maxCoeff();
  for (int k = 1; k <= opt.max_iter; ++k) {
    const Field next = op.step(u);
    const Field diff = next - u;
    StepRecord rec;
    rec.k = k;
    rec.increment = diff.lpNorm<Eigen::Infinity>();
    rec.violation = diff.maxCoeff();
    rec.min_u = next.minCoeff();
    rec.max_u = next.maxCoeff();
    const Residuals res = nonlinear_residuals(p, d, next);
    rec.res_interior = res.interior;
    rec.res_boundary = res.boundary;
    rec.ratio = std::isfinite(prev_inc) && prev_inc > 0.0 ? rec.increment / prev_inc : 0.0;
    tr.steps.push_back(rec);
    tr.max_violation = std::max(tr.max_violation, rec.violation);
    tr.min_gap_lower = std::min(tr.min_gap_lower, (next - u_minus).minCoeff());
    tr.max_gap_upper = std::max(tr.max_gap_upper, (next - u_plus).maxCoeff());

    const double vscale = std::max(1.0, next.lpNorm<Eigen::Infinity>());
    if (rec.violation > 10.0 * opt.solver_tol * vscale) {
      tr.u = next;
      std::ostringstream os;
      os << "step " << k << " increased u by " << rec.violation << "; refine the grid";
      fail(ErrorCode::MonotonicityBroken, "run_scheme", os.str());
    }
    if (tr.min_gap_lower < -10.0 * opt.tol || tr.max_gap_upper > 10.0 * opt.tol) {
      std::ostringstream os;
      os << "iterate left the bracket at step " << k << " (lower gap " << tr.min_gap_lower << ", upper gap "
         << tr.max_gap_upper << ")";
      fail(ErrorCode::BracketEscape, "run_scheme", os.str());
    }
    u = next;
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() * vscale;
    const double rho = rec.ratio;
    const double tail = rho > 0.0 && rho < 1.0 ? rec.increment * rho / (1.0 - rho) : rec.increment;
    if (rec.increment <= floor || (rec.increment < opt.tol && rho < 1.0 && tail < opt.tol)) {
      tr.converged = true;
      tr.verdict = "converged";
      tr.u = u;
      return tr;
    }
    prev_inc = rec.increment;
  }
  tr.u = u;
  fail(ErrorCode::MaxIterExceeded, "run_scheme", "no convergence within " + std::to_string(opt.max_iter) + " steps");
}

inline std::string trace_csv(const IterationTrace& tr) {
  std::ostringstream os;
  os.precision(17);
  os << "k,increment,min_u,max_u,res_interior,res_boundary\n";
  for (const StepRecord& r : tr.steps)
    os << r.k << ',' << r.increment << ',' << r.min_u << ',' << r.max_u << ',' << r.res_interior << ','
       << r.res_boundary << '\n';
  return os.str();
}

}  // namespace curva
