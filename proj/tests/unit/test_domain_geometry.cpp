#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "curva/grid.hpp"

using namespace curva;

namespace {

constexpr double pi = std::numbers::pi;

Domain disk(double R, int nr, int nt) { return build_domain({DomainKind::Disk2D, 2, 0.0, R, nr, nt, nullptr}); }

double interior_sup(const Domain& d, const Field& e) {
  double m = 0.0;
  for (int k = 0; k < d.nodes(); ++k)
    if (!d.grid.on_boundary(k)) m = std::max(m, std::abs(e[k]));
  return m;
}

}  // namespace

TEST(Grid, NodeCountsAndBoundarySlots) {
  const Grid g = make_grid({DomainKind::Disk2D, 2, 0.0, 1.0, 33, 16, nullptr});
  EXPECT_EQ(g.n_nodes, 1 + 32 * 16);
  EXPECT_EQ(g.n_boundary(), 16);
  const Grid a = make_grid({DomainKind::Annulus2D, 2, 0.5, 1.0, 17, 32, nullptr});
  EXPECT_EQ(a.n_nodes, 17 * 32);
  EXPECT_EQ(a.n_boundary(), 64);
  EXPECT_EQ(a.outward[0], -1.0);  // inner ring first
  EXPECT_EQ(a.outward[32], 1.0);
  const Grid b = make_grid({DomainKind::RadialBall, 3, 0.0, 2.0, 21, 1, nullptr});
  EXPECT_EQ(b.n_nodes, 21);
  EXPECT_EQ(b.n_boundary(), 1);
}

TEST(Grid, CellVolumesAreExact) {
  const Domain d = disk(0.5, 64, 32);
  EXPECT_NEAR(d.metric.vol.sum(), pi * 0.25, 1e-13);
  EXPECT_NEAR(d.metric.area.sum(), pi, 1e-13);
  const Domain a = build_domain({DomainKind::Annulus2D, 2, 0.5, 1.5, 40, 48, nullptr});
  EXPECT_NEAR(a.metric.vol.sum(), pi * (2.25 - 0.25), 1e-12);
  EXPECT_NEAR(a.metric.area.sum(), 2.0 * pi * 2.0, 1e-12);
  const Domain b = build_domain({DomainKind::RadialBall, 3, 0.0, 2.0, 37, 1, nullptr});
  EXPECT_NEAR(b.metric.vol.sum(), 4.0 / 3.0 * pi * 8.0, 1e-12);
  EXPECT_NEAR(b.metric.area.sum(), 4.0 * pi * 4.0, 1e-12);
  const Domain s = build_domain({DomainKind::RadialAnnulus, 4, 1.0, 2.0, 25, 1, nullptr});
  EXPECT_NEAR(s.metric.vol.sum(), sphere_area(4) * (16.0 - 1.0) / 4.0, 1e-12);
}

TEST(Grid, InvalidSpecsAreRejected) {
  auto code = [](DomainSpec s) {
    try {
      make_grid(s);
    } catch (const Failure& f) {
      return f.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code({DomainKind::Disk2D, 2, 0.0, 0.0, 32, 32, nullptr}), ErrorCode::InvalidDomain);
  EXPECT_EQ(code({DomainKind::Disk2D, 2, 0.0, 1.0, 8, 32, nullptr}), ErrorCode::InvalidDomain);
  EXPECT_EQ(code({DomainKind::Annulus2D, 2, 0.0, 1.0, 32, 32, nullptr}), ErrorCode::InvalidDomain);
  EXPECT_EQ(code({DomainKind::RadialBall, 2, 0.0, 1.0, 32, 1, nullptr}), ErrorCode::InvalidDomain);
  EXPECT_EQ(code({DomainKind::Disk2D, 3, 0.0, 1.0, 32, 32, nullptr}), ErrorCode::InvalidDomain);
}

TEST(Laplacian, QuadraticIsExactOnPolarStencil) {
  const Domain d = disk(1.0, 33, 32);
  const Field u = sample(d.grid, [](double x, double y) { return x * x + y * y; });
  const Field lap = d.metric.lap * u;
  EXPECT_LT(interior_sup(d, (lap.array() - 4.0).matrix()), 1e-10);
  const Domain b = build_domain({DomainKind::RadialBall, 3, 0.0, 1.0, 33, 1, nullptr});
  const Field ub = sample(b.grid, [](double x, double y) { return x * x + y * y; });
  EXPECT_LT(interior_sup(b, ((b.metric.lap * ub).array() - 6.0).matrix()), 1e-10);
}

// Truncation error is second order away from the pole; the first ring carries an
// O(dtheta^2 / r) angular term.
TEST(Laplacian, SecondOrderAwayFromThePole) {
  struct Err {
    double far, ring1;
  };
  auto err = [](int nr, int nt) {
    const Domain d = disk(1.0, nr, nt);
    const Field u = sample(d.grid, [](double x, double y) { return std::sin(x) * std::cos(y) + x * y * y; });
    const Field exact = sample(d.grid, [](double x, double y) { return -2.0 * std::sin(x) * std::cos(y) + 2.0 * x; });
    const Field e = d.metric.lap * u - exact;
    Err out{0.0, 0.0};
    for (int k = 0; k < d.nodes(); ++k) {
      if (d.grid.on_boundary(k)) continue;
      if (d.grid.r[k] >= 0.2) out.far = std::max(out.far, std::abs(e[k]));
      if (d.grid.ring[k] == 1) out.ring1 = std::max(out.ring1, std::abs(e[k]));
    }
    return out;
  };
  const Err e1 = err(33, 32), e2 = err(65, 64), e3 = err(129, 128);
  EXPECT_GT(std::log2(e1.far / e2.far), 1.8);
  EXPECT_GT(std::log2(e2.far / e3.far), 1.8);
  EXPECT_GT(std::log2(e2.ring1 / e3.ring1), 0.9);
}

TEST(NormalDerivative, OneSidedStencilExactForQuadratics) {
  const Domain a = build_domain({DomainKind::Annulus2D, 2, 0.5, 1.0, 33, 32, nullptr});
  const Field u = sample(a.grid, [](double x, double y) { return x * x + y * y + 3.0; });
  const Field dn = normal_derivative(u, a);
  for (int s = 0; s < a.nb(); ++s) {
    const double r = a.grid.r[a.grid.boundary[s]];
    EXPECT_NEAR(dn[s], 2.0 * r * a.grid.outward[s], 1e-11);
  }
}

TEST(Integrate, InteriorAndBoundaryMeasures) {
  const Domain d = disk(2.0, 65, 64);
  const Field one = constant(d.grid, 1.0);
  EXPECT_NEAR(integrate(one, Region::Interior, d), 4.0 * pi, 1e-12);
  EXPECT_NEAR(integrate(one, Region::Boundary, d), 4.0 * pi, 1e-12);
  const Field r2 = sample(d.grid, [](double x, double y) { return x * x + y * y; });
  EXPECT_NEAR(integrate(r2, Region::Interior, d), pi * 8.0, 2e-2);
}

// Hyperbolic metric 4/(1-r^2)^2 on the disk of radius 1/2: K = -1 and geodesic
// curvature coth(2 artanh(1/2)) = 5/4 on the boundary circle.
TEST(ConformalCurvatures, HyperbolicDiskOracle) {
  const double sigma = 1.0 / std::tanh(2.0 * std::atanh(0.5));
  EXPECT_NEAR(sigma, 1.25, 1e-15);
  const Domain d = disk(0.5, 256, 128);
  const Field u = sample(d.grid, [](double x, double y) { return std::log(2.0 / (1.0 - x * x - y * y)); });
  const CurvaturePair c = conformal_curvatures(u, d);
  EXPECT_LT(interior_sup(d, (c.interior.array() + 1.0).matrix()), 1e-4);
  EXPECT_LT((c.boundary.array() - sigma).abs().maxCoeff(), 1e-4);
}

// Round sphere: u = sqrt(2) (1 + r^2)^{-1/2} gives u^4 g_E = 4/(1+r^2)^2 g_E with R = 6.
TEST(ConformalCurvatures, SphereScalarCurvatureSecondOrder) {
  auto err = [](int nr) {
    const Domain b = build_domain({DomainKind::RadialBall, 3, 0.0, 1.0, nr, 1, nullptr});
    const Field u = sample(b.grid, [](double x, double) { return std::sqrt(2.0 / (1.0 + x * x)); });
    const CurvaturePair c = conformal_curvatures(u, b);
    return interior_sup(b, (c.interior.array() - 6.0).matrix());
  };
  const double e1 = err(33), e2 = err(65), e3 = err(129);
  EXPECT_LT(e3, 1e-3);
  EXPECT_GT(std::log2(e1 / e2), 1.8);
  EXPECT_GT(std::log2(e2 / e3), 1.8);
}

TEST(ConformalCurvatures, NonPositiveFactorRejected) {
  const Domain b = build_domain({DomainKind::RadialBall, 3, 0.0, 1.0, 33, 1, nullptr});
  Field u = constant(b.grid, 1.0);
  u[5] = 0.0;
  EXPECT_THROW(conformal_curvatures(u, b), Failure);
}

TEST(ConformalBackground, CurvaturesOfBackgroundMetricMatchDirectEvaluation) {
  DomainSpec s{DomainKind::Disk2D, 2, 0.0, 0.5, 128, 64, nullptr};
  s.conformal_factor = [](double x, double y) { return std::log(2.0 / (1.0 - x * x - y * y)); };
  const Domain d = build_domain(s);
  EXPECT_FALSE(d.metric.euclidean);
  EXPECT_LT(interior_sup(d, (d.metric.R.array() + 1.0).matrix()), 5e-4);
  // Curvature of the zero field in the hyperbolic background is the background itself.
  const CurvaturePair c = conformal_curvatures(constant(d.grid, 0.0), d);
  EXPECT_LT((c.boundary - d.metric.hb).cwiseAbs().maxCoeff(), 1e-12);
  // Hyperbolic area of the disk r < 1/2: 4 pi r^2/(1 - r^2) = 4 pi / 3.
  EXPECT_NEAR(d.metric.vol.sum(), 4.0 * pi / 3.0, 5e-3);
}

TEST(NormalForm, OverridesBackgroundCurvatures) {
  const Domain d = with_normal_form(disk(1.0, 33, 16), -1.0, 0.0);
  EXPECT_TRUE(d.metric.normal_form);
  EXPECT_EQ(d.metric.R.minCoeff(), -1.0);
  EXPECT_EQ(d.metric.R.maxCoeff(), -1.0);
  EXPECT_EQ(d.metric.hb.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Interpolate, ReproducesSmoothFields) {
  const Domain d = disk(1.0, 65, 64);
  auto f = [](double x, double y) { return std::exp(0.5 * x) * std::cos(y) + x * y; };
  const Field u = sample(d.grid, f);
  for (double px : {-0.7, -0.2, 0.0, 0.31, 0.66})
    for (double py : {-0.5, 0.0, 0.13, 0.4}) EXPECT_NEAR(interpolate(d.grid, u, px, py), f(px, py), 5e-5);
  // Node locations reproduce nodal values exactly.
  for (int k : {0, 7, 100, 2000}) EXPECT_NEAR(interpolate(d.grid, u, d.grid.x[k], d.grid.y[k]), u[k], 1e-12);
}

TEST(Gradient, SecondOrderIncludingBoundary) {
  auto err = [](int nr, int nt) {
    const Domain d = disk(1.0, nr, nt);
    const Field u = sample(d.grid, [](double x, double y) { return x * x - 2.0 * y + x * y; });
    const Field exact = sample(d.grid, [](double x, double y) { return std::hypot(2.0 * x + y, x - 2.0); });
    return (gradient_norm(d, u) - exact).cwiseAbs().maxCoeff();
  };
  const double e1 = err(65, 64), e2 = err(129, 128);
  EXPECT_LT(e2, 4e-3);
  EXPECT_GT(std::log2(e1 / e2), 1.8);
}
