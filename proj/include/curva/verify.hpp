#pragma once

#include <cmath>
#include <limits>

#include "curva/elliptic.hpp"
#include "curva/error.hpp"
#include "curva/grid.hpp"
#include "curva/monotone.hpp"
#include "curva/scenario_spec.hpp"

namespace curva {

struct CurvatureReport {
  double interior_sup = 0.0;
  double interior_l2 = 0.0;
  double boundary_sup = 0.0;
  double boundary_l2 = 0.0;
  double res_interior = 0.0;
  double res_boundary = 0.0;
  int n_r = 0;
  int n_theta = 0;
  double runtime_s = std::numeric_limits<double>::quiet_NaN();
};

// Realized curvatures of u against (S, cH) or (K, c sigma). Interior errors use the
// interior nodes where S >= floor; boundary nodes satisfy the boundary relation instead.
inline CurvatureReport residual_and_curvature_report(const Field& u, const Domain& d, const Field& S, const Field& H,
                                                     double c,
                                                     double floor = -std::numeric_limits<double>::infinity()) {
  const int n = d.n();
  if (n >= 3 && u.minCoeff() <= 0.0)
    fail(ErrorCode::NonPositiveConformalFactor, "residual_and_curvature_report", "u must be positive for n >= 3");
  CurvatureReport rep;
  rep.n_r = d.grid.n_r;
  rep.n_theta = d.grid.n_theta;
  const CurvaturePair cv = conformal_curvatures(u, d);
  double l2 = 0.0;
  for (int k = 0; k < d.nodes(); ++k) {
    if (d.grid.on_boundary(k) || S[k] < floor) continue;
    const double e = std::abs(cv.interior[k] - S[k]);
    rep.interior_sup = std::max(rep.interior_sup, e);
    l2 += d.metric.vol[k] * e * e;
  }
  rep.interior_l2 = std::sqrt(l2);
  l2 = 0.0;
  for (int s = 0; s < d.nb(); ++s) {
    const double e = std::abs(cv.boundary[s] - c * H[s]);
    rep.boundary_sup = std::max(rep.boundary_sup, e);
    l2 += d.metric.area[s] * e * e;
  }
  rep.boundary_l2 = std::sqrt(l2);
  const NonlinearProblem p = n == 2 ? gauss_problem(d, S, H, c) : yamabe_problem(d, S, H, c);
  const Residuals r = nonlinear_residuals(p, d, u);
  rep.res_interior = r.interior;
  rep.res_boundary = r.boundary;
  return rep;
}

inline CurvatureReport residual_and_curvature_report(const Field& u, const ScenarioSpec& spec, double c,
                                                     const Field* composed = nullptr) {
  const Domain d = scenario_domain(spec);
  const Field S = composed ? *composed : sample(d.grid, spec.interior);
  return residual_and_curvature_report(u, d, S, sample_boundary(d.grid, spec.boundary), c, spec.report_floor);
}

// Sup over interior nodes of |Box_hat v - phi^{1-p} Box(phi v)| with hat g = phi^{p-2} g,
// using the exponents of dimension n (which may differ from the grid's own dimension).
inline double conformal_invariance_check(const Domain& d, const Field& phi, const Field& v, int n) {
  if (phi.minCoeff() <= 0.0)
    fail(ErrorCode::NonPositiveConformalFactor, "conformal_invariance_check", "phi must be positive");
  const bool gauss = n == 2;
  const double a = gauss ? 1.0 : yamabe_a(n), p = gauss ? 2.0 : yamabe_p(n);
  const Field& R = d.metric.R;
  const Field lap_phi = d.metric.lap * phi;
  const Field lap_phiv = d.metric.lap * Field(phi.cwiseProduct(v));
  const Field lap_v = d.metric.lap * v;
  double worst = 0.0;
  for (int k = 0; k < d.nodes(); ++k) {
    if (d.grid.on_boundary(k)) continue;
    double div = 0.0;
    for (SpMat::InnerIterator it(d.metric.lap, k); it; ++it) {
      const int e = static_cast<int>(it.col());
      if (e == k) continue;
      const double w = gauss ? 1.0 : 0.5 * (phi[k] * phi[k] + phi[e] * phi[e]);
      div += it.value() * w * (v[e] - v[k]);
    }
    const double pk = std::pow(phi[k], 1.0 - p);
    double hat, ref;
    if (gauss) {
      hat = -std::pow(phi[k], -2.0) * div;
      ref = -std::pow(phi[k], -2.0) * lap_v[k];
    } else {
      const double R_hat = pk * (-a * lap_phi[k] + R[k] * phi[k]);
      hat = -a * std::pow(phi[k], -p) * div + R_hat * v[k];
      ref = pk * (-a * lap_phiv[k] + R[k] * phi[k] * v[k]);
    }
    worst = std::max(worst, std::abs(hat - ref));
  }
  return worst;
}

}  // namespace curva
