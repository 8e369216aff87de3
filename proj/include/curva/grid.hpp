#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "curva/error.hpp"

namespace curva {

using Field = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplets = std::vector<Eigen::Triplet<double>>;
using Mask = std::vector<char>;

inline double yamabe_a(int n) { return 4.0 * (n - 1) / (n - 2); }
inline double yamabe_p(int n) { return 2.0 * n / (n - 2); }

// Area of the unit sphere S^{n-1}.
inline double sphere_area(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

enum class DomainKind { Disk2D, Annulus2D, RadialBall, RadialAnnulus };

inline bool is_polar(DomainKind k) { return k == DomainKind::Disk2D || k == DomainKind::Annulus2D; }
inline bool has_inner_boundary(DomainKind k) {
  return k == DomainKind::Annulus2D || k == DomainKind::RadialAnnulus;
}

inline const char* to_string(DomainKind k) {
  switch (k) {
    case DomainKind::Disk2D: return "Disk2D";
    case DomainKind::Annulus2D: return "Annulus2D";
    case DomainKind::RadialBall: return "RadialBall";
    case DomainKind::RadialAnnulus: return "RadialAnnulus";
  }
  return "?";
}

// Cartesian point function. Radial kinds evaluate it at (r, 0).
using PointFn = std::function<double(double x, double y)>;

struct DomainSpec {
  DomainKind kind = DomainKind::Disk2D;
  int n = 2;
  double r_in = 0.0;
  double r_out = 1.0;
  int n_r = 64;
  int n_theta = 64;
  // Empty for the Euclidean metric; otherwise v with g = e^{2v} g_E (n = 2) or v^{p-2} g_E (n >= 3).
  PointFn conformal_factor;
};

struct Edge {
  int to;
  double c;
};

using NormalStencil = std::array<std::pair<int, double>, 3>;

// Node-based polar or radial grid with a finite-volume Laplacian stencil.
struct Grid {
  DomainSpec spec;
  int n = 2;
  int n_r = 0;
  int n_theta = 1;
  double r0 = 0.0;
  double h = 0.0;
  double dtheta = 0.0;
  int n_nodes = 0;
  Field r, theta, x, y;
  std::vector<int> ring, slot;
  std::vector<int> bindex;    // node -> boundary slot, -1 for interior nodes
  std::vector<int> boundary;  // slot -> node
  Field outward;              // slot -> +1 outer, -1 inner
  Field cell_volume;          // Euclidean dual-cell volume per node
  Field face_area;            // Euclidean boundary measure per slot
  std::vector<std::vector<Edge>> edges;  // Euclidean Laplacian: sum c (u_to - u_k)
  std::vector<NormalStencil> normal;     // outward one-sided derivative per slot

  bool polar() const { return is_polar(spec.kind); }
  bool center() const {
    return spec.kind == DomainKind::Disk2D || spec.kind == DomainKind::RadialBall;
  }
  int n_boundary() const { return static_cast<int>(boundary.size()); }
  bool on_boundary(int k) const { return bindex[k] >= 0; }

  int id(int i, int j) const {
    if (!polar()) return i;
    if (spec.kind == DomainKind::Disk2D) {
      if (i == 0) return 0;
      return 1 + (i - 1) * n_theta + ((j % n_theta) + n_theta) % n_theta;
    }
    return i * n_theta + ((j % n_theta) + n_theta) % n_theta;
  }
};

inline Grid make_grid(const DomainSpec& s) {
  if (!(s.r_out > s.r_in) || s.r_in < 0.0) fail(ErrorCode::InvalidDomain, "build_domain", "require r_out > r_in >= 0");
  if (s.n_r < 16) fail(ErrorCode::InvalidDomain, "build_domain", "N_r must be at least 16");
  if (is_polar(s.kind)) {
    if (s.n_theta < 16) fail(ErrorCode::InvalidDomain, "build_domain", "N_theta must be at least 16");
    if (s.n != 2) fail(ErrorCode::InvalidDomain, "build_domain", "polar kinds are two-dimensional");
  } else if (s.n < 3) {
    fail(ErrorCode::InvalidDomain, "build_domain", "radial kinds need n >= 3");
  }
  if (has_inner_boundary(s.kind) && !(s.r_in > 0.0))
    fail(ErrorCode::InvalidDomain, "build_domain", "annular kinds need r_in > 0");

  Grid g;
  g.spec = s;
  g.n = s.n;
  g.n_r = s.n_r;
  g.n_theta = is_polar(s.kind) ? s.n_theta : 1;
  g.r0 = has_inner_boundary(s.kind) ? s.r_in : 0.0;
  g.spec.r_in = g.r0;
  g.h = (s.r_out - g.r0) / (s.n_r - 1);
  g.dtheta = 2.0 * std::numbers::pi / g.n_theta;
  const int N = s.n_r - 1;
  const bool disk = s.kind == DomainKind::Disk2D;
  g.n_nodes = disk ? 1 + N * g.n_theta : s.n_r * g.n_theta;

  g.r.resize(g.n_nodes);
  g.theta.resize(g.n_nodes);
  g.x.resize(g.n_nodes);
  g.y.resize(g.n_nodes);
  g.ring.assign(g.n_nodes, 0);
  g.slot.assign(g.n_nodes, 0);
  g.bindex.assign(g.n_nodes, -1);
  g.cell_volume.resize(g.n_nodes);
  g.edges.assign(g.n_nodes, {});

  const double h = g.h, R = s.r_out, dth = g.dtheta;
  const int n = g.n;
  auto rad = [&](int i) { return g.r0 + i * h; };
  auto face_lo = [&](int i) { return std::max(rad(i) - 0.5 * h, g.r0); };
  auto face_hi = [&](int i) { return std::min(rad(i) + 0.5 * h, R); };

  for (int i = 0; i <= N; ++i) {
    const int jmax = (disk && i == 0) || !g.polar() ? 1 : g.n_theta;
    for (int j = 0; j < jmax; ++j) {
      const int k = g.id(i, j);
      g.ring[k] = i;
      g.slot[k] = j;
      g.r[k] = rad(i);
      g.theta[k] = g.polar() && !(disk && i == 0) ? j * dth : 0.0;
      g.x[k] = g.r[k] * std::cos(g.theta[k]);
      g.y[k] = g.r[k] * std::sin(g.theta[k]);
      const double lo = face_lo(i), hi = face_hi(i);
      if (g.polar())
        g.cell_volume[k] = (disk && i == 0) ? std::numbers::pi * 0.25 * h * h : 0.5 * (hi * hi - lo * lo) * dth;
      else
        g.cell_volume[k] = sphere_area(n) * (std::pow(hi, n) - std::pow(lo, n)) / n;
    }
  }

  auto add_boundary_ring = [&](int i, double sign) {
    for (int j = 0; j < g.n_theta; ++j) {
      const int k = g.id(i, j);
      g.bindex[k] = static_cast<int>(g.boundary.size());
      g.boundary.push_back(k);
      const int step = sign > 0 ? -1 : 1;
      g.normal.push_back({std::make_pair(k, 1.5 / h), std::make_pair(g.id(i + step, j), -2.0 / h),
                          std::make_pair(g.id(i + 2 * step, j), 0.5 / h)});
    }
  };
  if (has_inner_boundary(s.kind)) add_boundary_ring(0, -1.0);
  add_boundary_ring(N, 1.0);
  g.outward.resize(g.n_boundary());
  g.face_area.resize(g.n_boundary());
  for (int b = 0; b < g.n_boundary(); ++b) {
    const int k = g.boundary[b];
    const bool inner = has_inner_boundary(s.kind) && g.ring[k] == 0;
    g.outward[b] = inner ? -1.0 : 1.0;
    const double rb = g.r[k];
    g.face_area[b] = g.polar() ? rb * dth : sphere_area(n) * std::pow(rb, n - 1);
  }

  // Finite-volume transmissibilities divided by the cell volume.
  for (int k = 0; k < g.n_nodes; ++k) {
    if (g.on_boundary(k)) continue;
    const int i = g.ring[k], j = g.slot[k];
    const double V = g.cell_volume[k];
    auto& e = g.edges[k];
    if (g.polar()) {
      if (disk && i == 0) {
        const double t = 0.5 * dth;
        for (int jj = 0; jj < g.n_theta; ++jj) e.push_back({g.id(1, jj), t / V});
        continue;
      }
      const double rp = rad(i) + 0.5 * h, rm = rad(i) - 0.5 * h;
      e.push_back({g.id(i + 1, j), rp * dth / h / V});
      e.push_back({disk && i == 1 ? 0 : g.id(i - 1, j), rm * dth / h / V});
      const double ta = h / (rad(i) * dth);
      e.push_back({g.id(i, j + 1), ta / V});
      e.push_back({g.id(i, j - 1), ta / V});
    } else {
      const double om = sphere_area(n);
      const double rp = rad(i) + 0.5 * h;
      e.push_back({g.id(i + 1, 0), om * std::pow(rp, n - 1) / h / V});
      if (i > 0) {
        const double rm = rad(i) - 0.5 * h;
        e.push_back({g.id(i - 1, 0), om * std::pow(rm, n - 1) / h / V});
      }
    }
  }
  return g;
}

inline Field sample(const Grid& g, const PointFn& f) {
  Field out(g.n_nodes);
  for (int k = 0; k < g.n_nodes; ++k) out[k] = f(g.x[k], g.y[k]);
  return out;
}

inline Field sample_boundary(const Grid& g, const PointFn& f) {
  Field out(g.n_boundary());
  for (int b = 0; b < g.n_boundary(); ++b) out[b] = f(g.x[g.boundary[b]], g.y[g.boundary[b]]);
  return out;
}

inline Field trace(const Grid& g, const Field& u) {
  Field out(g.n_boundary());
  for (int b = 0; b < g.n_boundary(); ++b) out[b] = u[g.boundary[b]];
  return out;
}

inline Field constant(const Grid& g, double v) { return Field::Constant(g.n_nodes, v); }
inline Field constant_boundary(const Grid& g, double v) { return Field::Constant(g.n_boundary(), v); }

// Metric data for g = lambda g_E, lambda = e^{2v} (n = 2) or v^{p-2} (n >= 3).
struct MetricData {
  int n = 2;
  Field lambda;       // conformal factor of the base metric per node
  Field vol;          // dVol_g quadrature weights
  Field area;         // dS_g per boundary slot
  Field R;            // R_g (n >= 3) or K_g (n = 2)
  Field hb;           // h_g (n >= 3) or sigma_g (n = 2) per boundary slot
  SpMat lap;          // discrete Laplace-Beltrami, interior rows only
  SpMat nrm;          // outward normal derivative, one row per boundary slot
  bool euclidean = true;
  bool normal_form = false;
};

struct Domain {
  Grid grid;
  MetricData metric;
  int n() const { return grid.n; }
  int nodes() const { return grid.n_nodes; }
  int nb() const { return grid.n_boundary(); }
};

namespace detail {

inline MetricData weighted_metric(const Grid& g, const Field& lambda) {
  MetricData m;
  const int n = g.n;
  m.n = n;
  m.lambda = lambda;
  const Field mu = lambda.array().pow(0.5 * n);
  const Field kap = lambda.array().pow(0.5 * (n - 2));
  m.vol = mu.cwiseProduct(g.cell_volume);
  m.area.resize(g.n_boundary());
  Triplets tl, tn;
  for (int k = 0; k < g.n_nodes; ++k) {
    double diag = 0.0;
    for (const Edge& e : g.edges[k]) {
      const double w = e.c * 0.5 * (kap[k] + kap[e.to]) / mu[k];
      tl.emplace_back(k, e.to, w);
      diag -= w;
    }
    if (!g.edges[k].empty()) tl.emplace_back(k, k, diag);
  }
  for (int b = 0; b < g.n_boundary(); ++b) {
    const int k = g.boundary[b];
    const double sc = 1.0 / std::sqrt(lambda[k]);
    for (const auto& [col, c] : g.normal[b]) tn.emplace_back(b, col, sc * c);
    m.area[b] = std::pow(lambda[k], 0.5 * (n - 1)) * g.face_area[b];
  }
  m.lap.resize(g.n_nodes, g.n_nodes);
  m.lap.setFromTriplets(tl.begin(), tl.end());
  m.nrm.resize(g.n_boundary(), g.n_nodes);
  m.nrm.setFromTriplets(tn.begin(), tn.end());
  return m;
}

// One-sided Euclidean Laplacian at a boundary node.
inline double boundary_laplacian_euclid(const Grid& g, const Field& u, int k) {
  const int i = g.ring[k], j = g.slot[k];
  const int s = i == 0 ? 1 : -1;
  const double h = g.h;
  const double u0 = u[k], u1 = u[g.id(i + s, j)], u2 = u[g.id(i + 2 * s, j)], u3 = u[g.id(i + 3 * s, j)];
  const double urr = (2.0 * u0 - 5.0 * u1 + 4.0 * u2 - u3) / (h * h);
  const double ur = -s * (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * h);
  const double rr = g.r[k];
  double lap = urr + (g.n - 1) * ur / rr;
  if (g.polar())
    lap += (u[g.id(i, j + 1)] - 2.0 * u0 + u[g.id(i, j - 1)]) / (rr * rr * g.dtheta * g.dtheta);
  return lap;
}

}  // namespace detail

// Euclidean gradient in Cartesian components; radial kinds put du/dr in gx.
struct Gradient {
  Field gx, gy;
};

inline Gradient gradient(const Grid& g, const Field& u) {
  Gradient G{Field::Zero(g.n_nodes), Field::Zero(g.n_nodes)};
  const double h = g.h;
  const int N = g.n_r - 1;
  const bool disk = g.spec.kind == DomainKind::Disk2D;
  for (int k = 0; k < g.n_nodes; ++k) {
    const int i = g.ring[k], j = g.slot[k];
    if (g.center() && i == 0) {
      if (g.polar()) {
        double cx = 0.0, cy = 0.0;
        for (int jj = 0; jj < g.n_theta; ++jj) {
          const double th = jj * g.dtheta;
          cx += u[g.id(1, jj)] * std::cos(th);
          cy += u[g.id(1, jj)] * std::sin(th);
        }
        G.gx[k] = 2.0 * cx / (g.n_theta * h);
        G.gy[k] = 2.0 * cy / (g.n_theta * h);
      }
      continue;
    }
    double ur;
    if (i == N)
      ur = (3.0 * u[k] - 4.0 * u[g.id(N - 1, j)] + u[g.id(N - 2, j)]) / (2.0 * h);
    else if (i == 0)
      ur = (-3.0 * u[k] + 4.0 * u[g.id(1, j)] - u[g.id(2, j)]) / (2.0 * h);
    else
      ur = (u[g.id(i + 1, j)] - u[(disk && i == 1) ? 0 : g.id(i - 1, j)]) / (2.0 * h);
    if (!g.polar()) {
      G.gx[k] = ur;
      continue;
    }
    const double ut = (u[g.id(i, j + 1)] - u[g.id(i, j - 1)]) / (2.0 * g.dtheta * g.r[k]);
    const double c = std::cos(g.theta[k]), s = std::sin(g.theta[k]);
    G.gx[k] = ur * c - ut * s;
    G.gy[k] = ur * s + ut * c;
  }
  return G;
}

// |grad_g u|_g per node.
inline Field gradient_norm(const Domain& d, const Field& u) {
  const Gradient G = gradient(d.grid, u);
  Field out(d.nodes());
  for (int k = 0; k < d.nodes(); ++k)
    out[k] = std::hypot(G.gx[k], G.gy[k]) / std::sqrt(d.metric.lambda[k]);
  return out;
}

// <grad_g u, grad_g v>_g per node.
inline Field gradient_dot(const Domain& d, const Field& u, const Field& v) {
  const Gradient a = gradient(d.grid, u), b = gradient(d.grid, v);
  Field out(d.nodes());
  for (int k = 0; k < d.nodes(); ++k)
    out[k] = (a.gx[k] * b.gx[k] + a.gy[k] * b.gy[k]) / d.metric.lambda[k];
  return out;
}

// Discrete Laplace-Beltrami. Interior nodes use the conservative stencil; boundary
// nodes carry a one-sided estimate that lies outside the operator contract.
inline Field laplacian_apply(const Field& u, const Domain& d) {
  Field out = d.metric.lap * u;
  const Grid& g = d.grid;
  Gradient gl, gu;
  if (!d.metric.euclidean) {
    gl = gradient(g, d.metric.lambda.array().log().matrix());
    gu = gradient(g, u);
  }
  for (int b = 0; b < g.n_boundary(); ++b) {
    const int k = g.boundary[b];
    double v = detail::boundary_laplacian_euclid(g, u, k);
    if (!d.metric.euclidean) {
      v += 0.5 * (g.n - 2) * (gl.gx[k] * gu.gx[k] + gl.gy[k] * gu.gy[k]);
      v /= d.metric.lambda[k];
    }
    out[k] = v;
  }
  return out;
}

inline Field normal_derivative(const Field& u, const Domain& d) { return d.metric.nrm * u; }

enum class Region { Interior, Boundary };

inline double integrate(const Field& u, Region region, const Domain& d) {
  if (region == Region::Interior) return d.metric.vol.dot(u);
  if (u.size() == d.nb()) return d.metric.area.dot(u);
  return d.metric.area.dot(trace(d.grid, u));
}

struct CurvaturePair {
  Field interior;  // R (n >= 3) or K (n = 2) per node
  Field boundary;  // h or sigma per boundary slot
};

// Curvatures of u^{p-2} g (n >= 3) or e^{2u} g (n = 2).
inline CurvaturePair conformal_curvatures(const Field& u, const Domain& d) {
  const int n = d.n();
  const Field lap = laplacian_apply(u, d);
  const Field dn = normal_derivative(u, d);
  const Field ub = trace(d.grid, u);
  CurvaturePair out{Field(d.nodes()), Field(d.nb())};
  if (n == 2) {
    out.interior = (-2.0 * u.array()).exp() * (d.metric.R - lap).array();
    out.boundary = (-ub.array()).exp() * (dn + d.metric.hb).array();
    return out;
  }
  if (u.minCoeff() <= 0.0)
    fail(ErrorCode::NonPositiveConformalFactor, "conformal_curvatures", "u must be positive for n >= 3");
  const double a = yamabe_a(n), p = yamabe_p(n);
  out.interior = u.array().pow(1.0 - p) * (-a * lap.array() + d.metric.R.array() * u.array());
  out.boundary = 0.5 * (p - 2.0) * ub.array().pow(-0.5 * p) *
                 (dn.array() + (2.0 / (p - 2.0)) * d.metric.hb.array() * ub.array());
  return out;
}

inline Domain build_domain(const DomainSpec& spec) {
  Domain d;
  d.grid = make_grid(spec);
  const Grid& g = d.grid;
  d.metric = detail::weighted_metric(g, Field::Ones(g.n_nodes));
  d.metric.R = Field::Zero(g.n_nodes);
  d.metric.hb.resize(g.n_boundary());
  for (int b = 0; b < g.n_boundary(); ++b) d.metric.hb[b] = 1.0 / g.r[g.boundary[b]] * g.outward[b];
  if (!spec.conformal_factor) return d;

  const Field v = sample(g, spec.conformal_factor);
  const CurvaturePair bg = conformal_curvatures(v, d);
  Field lambda;
  if (g.n == 2) {
    lambda = (2.0 * v.array()).exp();
  } else {
    lambda = v.array().pow(yamabe_p(g.n) - 2.0);
  }
  MetricData m = detail::weighted_metric(g, lambda);
  m.R = bg.interior;
  m.hb = bg.boundary;
  m.euclidean = false;
  d.metric = std::move(m);
  return d;
}

// Replace the background curvatures by constant normal-form data.
inline Domain with_normal_form(Domain d, double interior, double boundary) {
  d.metric.R = constant(d.grid, interior);
  d.metric.hb = constant_boundary(d.grid, boundary);
  d.metric.normal_form = true;
  return d;
}

namespace detail {

// Cubic Lagrange weights on four consecutive nodes starting at i0, evaluated at s.
inline std::array<double, 4> lagrange4(double s, int i0) {
  std::array<double, 4> w{};
  for (int a = 0; a < 4; ++a) {
    double v = 1.0;
    for (int b = 0; b < 4; ++b)
      if (b != a) v *= (s - (i0 + b)) / static_cast<double>(a - b);
    w[a] = v;
  }
  return w;
}

}  // namespace detail

// Bicubic (polar) or cubic (radial) interpolation of a node field at a Cartesian point.
inline double interpolate(const Grid& g, const Field& u, double px, double py) {
  const double rr = std::clamp(std::hypot(px, py), g.r0, g.spec.r_out);
  const double s = (rr - g.r0) / g.h;
  const int i0 = std::clamp(static_cast<int>(std::floor(s)) - 1, 0, g.n_r - 4);
  const auto wr = detail::lagrange4(s, i0);
  if (!g.polar()) {
    double v = 0.0;
    for (int a = 0; a < 4; ++a) v += wr[a] * u[i0 + a];
    return v;
  }
  double th = std::atan2(py, px);
  if (th < 0.0) th += 2.0 * std::numbers::pi;
  const double t = th / g.dtheta;
  const int j0 = static_cast<int>(std::floor(t)) - 1;
  const auto wt = detail::lagrange4(t, j0);
  double v = 0.0;
  for (int a = 0; a < 4; ++a) {
    const int i = i0 + a;
    double ring_val;
    if (g.center() && i == 0) {
      ring_val = u[0];
    } else {
      ring_val = 0.0;
      for (int b = 0; b < 4; ++b) ring_val += wt[b] * u[g.id(i, j0 + b)];
    }
    v += wr[a] * ring_val;
  }
  return v;
}

}  // namespace curva
