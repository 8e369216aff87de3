#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include "curva/error.hpp"
#include "curva/grid.hpp"

namespace curva {

// (-a Lap_g + V) u = f in M,  du/dnu + b u = r on the boundary.
struct RobinProblem {
  double a = 1.0;
  Field V;  // per node
  Field b;  // per boundary slot
  Field f;  // per node (boundary entries unused)
  Field r;  // per boundary slot
};

struct LinearSystem {
  SpMat A;
  Field rhs;
};

// Matrix of the Robin operator: interior rows -a Lap + V - shift, boundary rows d/dnu + b.
inline SpMat robin_matrix(const Domain& d, double a, const Field& V, const Field& b, double shift = 0.0) {
  const Grid& g = d.grid;
  Triplets t;
  t.reserve(d.metric.lap.nonZeros() + 4 * g.n_boundary() + g.n_nodes);
  for (int k = 0; k < g.n_nodes; ++k) {
    if (g.on_boundary(k)) continue;
    for (SpMat::InnerIterator it(d.metric.lap, k); it; ++it) t.emplace_back(k, it.col(), -a * it.value());
    t.emplace_back(k, k, V[k] - shift);
  }
  for (int s = 0; s < g.n_boundary(); ++s) {
    const int k = g.boundary[s];
    for (SpMat::InnerIterator it(d.metric.nrm, s); it; ++it) t.emplace_back(k, it.col(), it.value());
    t.emplace_back(k, k, b[s]);
  }
  SpMat A(g.n_nodes, g.n_nodes);
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

inline Field robin_rhs(const Domain& d, const Field& f, const Field& r) {
  Field rhs = f;
  for (int s = 0; s < d.nb(); ++s) rhs[d.grid.boundary[s]] = r[s];
  return rhs;
}

inline LinearSystem assemble_robin(const RobinProblem& p, const Domain& d) {
  if (p.V.size() != d.nodes() || p.f.size() != d.nodes() || p.b.size() != d.nb() || p.r.size() != d.nb())
    fail(ErrorCode::InvalidArgument, "assemble_robin", "field sizes do not match the grid");
  return {robin_matrix(d, p.a, p.V, p.b), robin_rhs(d, p.f, p.r)};
}

// Factor once, solve many. Direct LU below the size threshold, BiCGSTAB above it.
class LinearSolver {
 public:
  static constexpr int kDirectLimit = 200000;
  static constexpr double kTolerance = 1e-10;

  explicit LinearSolver(const SpMat& A, std::string stage = "linear_solve") : stage_(std::move(stage)) {
    A_ = A;
    A_.makeCompressed();
    Field rows = Field::Zero(A_.rows());
    for (int k = 0; k < A_.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it) rows[it.row()] += std::abs(it.value());
    norm_inf_ = rows.maxCoeff();
    if (A_.rows() < kDirectLimit) {
      lu_ = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>>();
      lu_->analyzePattern(A_);
      lu_->factorize(A_);
      if (lu_->info() != Eigen::Success) fail(ErrorCode::SingularOperator, stage_, "sparse LU factorization failed");
    } else {
      it_ = std::make_unique<Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::DiagonalPreconditioner<double>>>();
      it_->setTolerance(1e-13);
      it_->setMaxIterations(20000);
      it_->compute(A_);
      if (it_->info() != Eigen::Success) fail(ErrorCode::SingularOperator, stage_, "preconditioner setup failed");
    }
  }

  // Accepts x when the normwise backward error |Ax - b| / (|A||x| + |b|) is below kTolerance.
  Field solve(const Field& rhs) const {
    const double scale = rhs.lpNorm<Eigen::Infinity>();
    if (scale == 0.0) return Field::Zero(rhs.size());
    Field x = raw(rhs);
    double err = backward_error(x, rhs);
    for (int refine = 0; refine < 3 && std::isfinite(err) && err > kTolerance; ++refine) {
      x += raw(rhs - A_ * x);
      err = backward_error(x, rhs);
    }
    if (!(err <= kTolerance))
      fail(ErrorCode::SingularOperator, stage_, "backward error " + std::to_string(err) + " above tolerance");
    return x;
  }

  double backward_error(const Field& x, const Field& rhs) const {
    if (!x.allFinite()) return std::numeric_limits<double>::infinity();
    const double res = (rhs - A_ * x).lpNorm<Eigen::Infinity>();
    return res / (norm_inf_ * x.lpNorm<Eigen::Infinity>() + rhs.lpNorm<Eigen::Infinity>());
  }

  const Eigen::SparseMatrix<double>& matrix() const { return A_; }

 private:
  Field raw(const Field& rhs) const {
    if (lu_) return lu_->solve(rhs);
    Field x = it_->solve(rhs);
    if (it_->info() != Eigen::Success) fail(ErrorCode::SingularOperator, stage_, "BiCGSTAB did not converge");
    return x;
  }

  std::string stage_;
  Eigen::SparseMatrix<double> A_;
  double norm_inf_ = 0.0;
  std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>> lu_;
  std::unique_ptr<Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::DiagonalPreconditioner<double>>> it_;
};

struct RobinSolution {
  Field u;
  double multiplier = 0.0;  // constant added to the interior equation under the mean-zero gauge
};

// Solve the Robin problem. With V = 0 and b = 0 the operator has constants in its
// kernel; mean_zero_gauge then returns the solution with zero dVol-mean.
inline RobinSolution solve_linear_robin(const RobinProblem& p, const Domain& d, bool mean_zero_gauge = false) {
  LinearSystem sys = assemble_robin(p, d);
  const bool pure_neumann = p.V.cwiseAbs().maxCoeff() == 0.0 && p.b.cwiseAbs().maxCoeff() == 0.0;
  if (!pure_neumann) return {LinearSolver(sys.A, "solve_linear_robin").solve(sys.rhs), 0.0};
  if (!mean_zero_gauge)
    fail(ErrorCode::SingularOperator, "solve_linear_robin", "pure Neumann operator with V = 0 and b = 0");

  const Grid& g = d.grid;
  const int N = g.n_nodes;
  Triplets t;
  for (int k = 0; k < N; ++k)
    for (SpMat::InnerIterator it(sys.A, k); it; ++it) t.emplace_back(k, it.col(), it.value());
  for (int k = 0; k < N; ++k) {
    if (!g.on_boundary(k)) t.emplace_back(k, N, 1.0);
    t.emplace_back(N, k, d.metric.vol[k]);
  }
  SpMat B(N + 1, N + 1);
  B.setFromTriplets(t.begin(), t.end());
  Field rhs(N + 1);
  rhs.head(N) = sys.rhs;
  rhs[N] = 0.0;
  const Field x = LinearSolver(B, "solve_linear_robin").solve(rhs);
  return {x.head(N), -x[N]};
}

struct EigenResult {
  double eta = 0.0;
  Field phi;  // normalized to unit L2(dVol) norm, positive
  double residual = 0.0;
  int iterations = 0;
  double shift = 0.0;
};

struct EigenOptions {
  double increment_tol = 1e-10;
  double residual_tol = 1e-8;
  int max_iter = 5000;
};

namespace detail {

inline double eigen_residual(const Domain& d, double a, const Field& V, const Field& b, const Field& phi,
                             double eta) {
  const Field Lphi = -a * (d.metric.lap * phi) + V.cwiseProduct(phi) - eta * phi;
  double res = 0.0;
  for (int k = 0; k < d.nodes(); ++k)
    if (!d.grid.on_boundary(k)) res = std::max(res, std::abs(Lphi[k]));
  const Field bres = d.metric.nrm * phi + b.cwiseProduct(trace(d.grid, phi));
  return res + bres.lpNorm<Eigen::Infinity>();
}

inline double l2_norm(const Domain& d, const Field& u) { return std::sqrt(d.metric.vol.dot(u.cwiseAbs2())); }

}  // namespace detail

// Principal pair of -a Lap + V with du/dnu + b u = 0, by shifted inverse iteration.
inline EigenResult principal_eigenpair(const Domain& d, double a, const Field& V, const Field& b,
                                       const EigenOptions& opt = {}) {
  const Grid& g = d.grid;
  double shift = V.minCoeff() - 1.0;
  Field interior = Field::Ones(g.n_nodes);
  for (int s = 0; s < g.n_boundary(); ++s) interior[g.boundary[s]] = 0.0;

  for (int attempt = 0; attempt < 8; ++attempt) {
    const LinearSolver solver(robin_matrix(d, a, V, b, shift), "principal_eigenpair");
    Field x = Field::Ones(g.n_nodes);
    x /= detail::l2_norm(d, x);
    double eta = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    int it = 0;
    double residual = 0.0;
    for (it = 1; it <= opt.max_iter; ++it) {
      const Field rhs = x.cwiseProduct(interior);
      Field y = solver.solve(rhs);
      const double num = (d.metric.vol.cwiseProduct(interior)).dot(x.cwiseAbs2());
      const double den = (d.metric.vol.cwiseProduct(interior)).dot(x.cwiseProduct(y));
      if (den == 0.0 || !std::isfinite(den)) break;
      const double eta_new = shift + num / den;
      if (y.sum() < 0.0) y = -y;
      x = y / detail::l2_norm(d, y);
      const double inc = std::abs(eta_new - eta);
      eta = eta_new;
      residual = detail::eigen_residual(d, a, V, b, x, eta);
      if (inc < opt.increment_tol * std::max(1.0, std::abs(eta)) && residual <= opt.residual_tol) {
        converged = true;
        break;
      }
    }
    if (converged && x.minCoeff() > 0.0) return {eta, x, residual, it, shift};
    if (converged) {
      shift -= 2.0 * (std::abs(eta - shift) + 1.0);
      continue;
    }
    fail(ErrorCode::IterationDiverged, "principal_eigenpair",
         "no convergence after " + std::to_string(opt.max_iter) + " inverse iterations");
  }
  fail(ErrorCode::IterationDiverged, "principal_eigenpair", "no positive eigenfunction found");
}

// Boundary factor multiplying beta: 2/(p-2) for n >= 3, 1 in two dimensions.
inline double beta_factor(int n) { return n == 2 ? 1.0 : 2.0 / (yamabe_p(n) - 2.0); }

inline EigenResult perturbed_eigenvalue(const Domain& d, double a, const Field& V, const Field& b, double beta,
                                        const EigenOptions& opt = {}) {
  return principal_eigenpair(d, a, V, (b.array() + beta_factor(d.n()) * beta).matrix(), opt);
}

// Conformal-Laplacian eigenpair of the domain's own background data.
inline EigenResult conformal_eigenpair(const Domain& d, double beta = 0.0) {
  if (d.n() == 2) return perturbed_eigenvalue(d, 1.0, Field::Zero(d.nodes()), Field::Zero(d.nb()), beta);
  const double f = beta_factor(d.n());
  return perturbed_eigenvalue(d, yamabe_a(d.n()), d.metric.R, f * d.metric.hb, beta);
}

struct GammaEstimate {
  double gamma = 0.0;
  double max_ratio = 0.0;
  int probes = 0;
  double q = 0.0;
  std::uint64_t seed = 0;
  std::string norms = "(sup|u| + sup|grad u|) / (L^q(f) + sup|r| Vol^(1/q))";
};

inline double lq_norm(const Domain& d, const Field& f, double q) {
  return std::pow(d.metric.vol.dot(f.cwiseAbs().array().pow(q).matrix()), 1.0 / q);
}

inline double volume(const Domain& d) { return d.metric.vol.sum(); }

// Exponent used for the L^q proxy: 3 in two dimensions, n + 1 otherwise.
inline double gamma_exponent(int n) { return n == 2 ? 3.0 : n + 1.0; }

struct GammaOptions {
  std::uint64_t seed = 20240917;
  bool boundary_probes = true;
  double safety = 2.0;
};

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

inline GammaEstimate estimate_gamma(const Domain& d, double a, const Field& V, const Field& b, int probes,
                                    const GammaOptions& opt = {}) {
  if (probes <= 0) fail(ErrorCode::InvalidArgument, "estimate_gamma", "probe count must be positive");
  const Grid& g = d.grid;
  const LinearSolver solver(robin_matrix(d, a, V, b), "estimate_gamma");
  std::mt19937_64 rng(opt.seed);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * detail::unit_uniform(rng); };
  const double q = gamma_exponent(d.n());
  const double vol_q = std::pow(volume(d), 1.0 / q);
  const double kmax = 3.0 * std::numbers::pi / g.spec.r_out;
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    Field f = Field::Zero(g.n_nodes);
    for (int m = 0; m < 4; ++m) {
      const double amp = uni(-1.0, 1.0), kk = uni(0.0, kmax), dir = uni(0.0, 2.0 * std::numbers::pi);
      const double ph = uni(0.0, 2.0 * std::numbers::pi);
      for (int k = 0; k < g.n_nodes; ++k)
        f[k] += amp * std::cos(kk * (std::cos(dir) * g.x[k] + std::sin(dir) * g.y[k]) + ph);
    }
    f.array() += uni(-1.0, 1.0);
    Field r = Field::Zero(g.n_boundary());
    if (opt.boundary_probes) {
      const double c0 = uni(-1.0, 1.0), c1 = uni(-1.0, 1.0), ph = uni(0.0, 2.0 * std::numbers::pi);
      const int mode = 1 + static_cast<int>(uni(0.0, 3.0));
      for (int s = 0; s < g.n_boundary(); ++s)
        r[s] = c0 + c1 * std::cos(mode * g.theta[g.boundary[s]] + ph) * (g.polar() ? 1.0 : 0.0);
    }
    const Field u = solver.solve(robin_rhs(d, f, r));
    const double num = u.lpNorm<Eigen::Infinity>() + gradient_norm(d, u).lpNorm<Eigen::Infinity>();
    const double den = lq_norm(d, f, q) + r.lpNorm<Eigen::Infinity>() * vol_q;
    if (den > 0.0) worst = std::max(worst, num / den);
  }
  GammaEstimate ge;
  ge.max_ratio = worst;
  ge.gamma = opt.safety * worst;
  ge.probes = probes;
  ge.q = q;
  ge.seed = opt.seed;
  return ge;
}

}  // namespace curva
