#pragma once

// One-dimensional absorption oracles on J = [0, 1] with absorbing ends:
//
//   d_t rho = d_xi (D(xi) d_xi rho - nu rho),   rho(0, t) = rho(1, t) = 0.
//
// Four independent routes to the probability P1(alpha) of ending at xi = 1
// when starting from alpha:
//   * the stationary backward equation, integrated by quadrature;
//   * the closed form for constant D with drift;
//   * the Dirichlet eigenfunction expansion of the boundary flux;
//   * the Green function of d(D d.) matched at alpha by ODE shooting.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <math.h>  // pchip calls isnan unqualified

#include <Eigen/Dense>
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/numeric/odeint.hpp>

#include "reduction/errors.hpp"

namespace reduction::fp {

struct Profile1D {
  std::function<double(double)> D;
  double nu = 0.0;
  int grid = 512;
  std::string name = "custom";
  /// Set when D is known to be constant; enables the closed form with drift.
  bool constant = false;
};

inline Profile1D constant_profile(double d = 1.0, double nu = 0.0) {
  return {[d](double) { return d; }, nu, 512, "constant", true};
}

/// D(xi) = 1 + c xi.
inline Profile1D linear_profile(double c = 1.0, double nu = 0.0) {
  return {[c](double x) { return 1.0 + c * x; }, nu, 512, "linear", c == 0.0};
}

/// D(xi) = 1 + c sin(pi xi).
inline Profile1D sinusoidal_profile(double c, double nu = 0.0) {
  return {[c](double x) { return 1.0 + c * std::sin(std::numbers::pi * x); }, nu, 512,
          "sinusoidal", c == 0.0};
}

/// Monotone cubic (PCHIP) interpolation through tabulated (xi, D) pairs.
inline Profile1D tabulated_profile(std::vector<double> xi, std::vector<double> d,
                                   double nu = 0.0) {
  if (xi.size() != d.size()) throw ProfileError("tabulated profile: xi and D differ in length");
  if (xi.size() < 4) throw ProfileError("tabulated profile needs at least four points");
  for (std::size_t i = 1; i < xi.size(); ++i)
    if (!(xi[i] > xi[i - 1])) throw ProfileError("tabulated xi must be strictly increasing");
  if (xi.front() > 0.0 || xi.back() < 1.0) throw ProfileError("tabulated xi must cover [0, 1]");
  auto spline = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(
      std::move(xi), std::move(d));
  return {[spline](double x) { return (*spline)(x); }, nu, 512, "tabulated", false};
}

/// Checks D > 0 on a dense sample and returns the smallest sampled value.
inline double validate(const Profile1D& profile) {
  if (!profile.D) throw ProfileError("profile has no diffusion coefficient");
  if (profile.grid < 16) throw ProfileError("grid must have at least 16 interior points");
  if (!std::isfinite(profile.nu)) throw ProfileError("drift must be finite");
  double d_min = std::numeric_limits<double>::infinity();
  constexpr int kSamples = 2048;
  for (int i = 0; i <= kSamples; ++i) {
    const double v = profile.D(static_cast<double>(i) / kSamples);
    if (!std::isfinite(v)) throw ProfileError("D is not finite on [0, 1]");
    d_min = std::min(d_min, v);
  }
  if (!(d_min > 0.0)) {
    throw ProfileError("D must be positive on [0, 1]; minimum sampled value " +
                       std::to_string(d_min));
  }
  return d_min;
}

namespace detail {

template <class F>
double integrate(F f, double a, double b) {
  if (b <= a) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 20, 1e-13);
}

inline void check_open_unit(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError("starting point alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

}  // namespace detail

/// P1(alpha) = (1 - exp(-nu alpha / D)) / (1 - exp(-nu / D)), and alpha when
/// |nu / D| < 1e-12. Satisfies P1(0) = 0 and P1(1) = 1.
inline double biased_closed_form(double nu, double d, double alpha) {
  if (!(d > 0.0)) throw DomainError("D must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0, 1]");
  const double r = nu / d;
  if (std::abs(r) < 1e-12) return alpha;
  if (alpha == 1.0) return 1.0;
  return std::expm1(-r * alpha) / std::expm1(-r);
}

/// Solves d/da (D dP/da) + nu dP/da = 0 with P(0) = 0, P(1) = 1:
/// P1(alpha) = int_0^alpha w / int_0^1 w with w = exp(-int nu/D) / D.
inline double hitting_probability_ode(const Profile1D& profile, double alpha) {
  validate(profile);
  detail::check_open_unit(alpha);
  const auto& D = profile.D;
  if (profile.nu == 0.0) {
    auto inv = [&D](double x) { return 1.0 / D(x); };
    return detail::integrate(inv, 0.0, alpha) / detail::integrate(inv, 0.0, 1.0);
  }
  if (profile.constant) return biased_closed_form(profile.nu, D(0.0), alpha);
  const double nu = profile.nu;
  auto weight = [&D, nu](double x) {
    const double phase = detail::integrate([&D](double y) { return 1.0 / D(y); }, 0.0, x);
    return std::exp(-nu * phase) / D(x);
  };
  return detail::integrate(weight, 0.0, alpha) / detail::integrate(weight, 0.0, 1.0);
}

/// Dirichlet eigenpairs of L = d/dxi (D d/dxi), sampled on the grid.
struct SpectralSolution {
  std::vector<double> eigenvalues;                // lambda_n > 0, increasing
  std::vector<std::vector<double>> eigenfunctions;  // psi_n at xs, zero at both ends
  std::vector<double> xs;                          // grid + 2 nodes on [0, 1]
  double h = 0.0;
  double boundary_diffusion = 0.0;  // D at the last half node, for the flux at 1
  double origin_diffusion = 0.0;    // D at the first half node, for the flux at 0
  int count = 0;
  /// |lambda_1(2 grid) - lambda_1(grid)| / lambda_1(grid).
  double lambda1_relative_change = 0.0;
};

namespace detail {

/// Flux-form discretisation of -L on `interior` nodes: a symmetric tridiagonal
/// matrix with diagonal (D_{i-1/2} + D_{i+1/2}) / h^2 and off-diagonal -D_{i+1/2} / h^2.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> assemble(const std::function<double(double)>& D,
                                                            int interior) {
  const double h = 1.0 / (interior + 1);
  std::vector<double> half(interior + 1);
  for (int i = 0; i <= interior; ++i) half[i] = D((i + 0.5) * h);
  Eigen::VectorXd diag(interior), sub(interior - 1);
  for (int i = 0; i < interior; ++i) diag(i) = (half[i] + half[i + 1]) / (h * h);
  for (int i = 0; i + 1 < interior; ++i) sub(i) = -half[i + 1] / (h * h);
  return {diag, sub};
}

}  // namespace detail

inline SpectralSolution sturm_liouville_modes(const Profile1D& profile, int count) {
  validate(profile);
  const int interior = profile.grid;
  if (count < 1 || count > interior / 4) {
    throw DomainError("mode count must lie in [1, grid/4] = [1, " + std::to_string(interior / 4) +
                      "]");
  }
  const auto [diag, sub] = detail::assemble(profile.D, interior);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (eig.info() != Eigen::Success) throw NumericalError("tridiagonal eigen solve did not converge");

  SpectralSolution sol;
  sol.count = count;
  sol.h = 1.0 / (interior + 1);
  sol.boundary_diffusion = profile.D(1.0 - 0.5 * sol.h);
  sol.origin_diffusion = profile.D(0.5 * sol.h);
  sol.xs.resize(interior + 2);
  for (int i = 0; i < interior + 2; ++i) sol.xs[i] = i * sol.h;
  const double norm = 1.0 / std::sqrt(sol.h);
  for (int n = 0; n < count; ++n) {
    const double lambda = eig.eigenvalues()(n);
    if (!(lambda > 0.0)) throw NumericalError("non-positive Dirichlet eigenvalue");
    sol.eigenvalues.push_back(lambda);
    std::vector<double> psi(interior + 2, 0.0);
    const double sign = eig.eigenvectors()(0, n) < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < interior; ++i) psi[i + 1] = sign * norm * eig.eigenvectors()(i, n);
    sol.eigenfunctions.push_back(std::move(psi));
  }

  const auto [diag2, sub2] = detail::assemble(profile.D, 2 * interior);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> fine;
  fine.computeFromTridiagonal(diag2, sub2, Eigen::EigenvaluesOnly);
  if (fine.info() == Eigen::Success) {
    sol.lambda1_relative_change =
        std::abs(fine.eigenvalues()(0) - sol.eigenvalues[0]) / sol.eigenvalues[0];
  }
  return sol;
}

/// Linear interpolation of a grid function.
inline double sample(const SpectralSolution& sol, const std::vector<double>& f, double x) {
  const double pos = std::clamp(x, 0.0, 1.0) / sol.h;
  const auto last = static_cast<int>(sol.xs.size()) - 1;
  const int i = std::min(static_cast<int>(pos), last - 1);
  const double w = pos - i;
  return (1.0 - w) * f[i] + w * f[i + 1];
}

namespace detail {

/// Time-integrated boundary flux over `terms` modes, with squared Lanczos
/// sigma factors. The expansion converges slowly near the boundary it is
/// evaluated at, so for alpha > 1/2 the flux through xi = 0 is summed
/// instead and P1 = 1 - P0 (all mass is eventually absorbed).
inline double flux_series(const SpectralSolution& sol, double alpha, int terms) {
  const bool through_origin = alpha > 0.5;
  const std::size_t last = sol.xs.size() - 1;
  double sum = 0.0;
  for (int n = 0; n < terms; ++n) {
    const auto& psi = sol.eigenfunctions[n];
    const double flux = through_origin ? sol.origin_diffusion * (psi[1] - psi[0]) / sol.h
                                       : -sol.boundary_diffusion * (psi[last] - psi[last - 1]) / sol.h;
    const double arg = std::numbers::pi * (n + 1) / (terms + 1);
    const double sigma = std::sin(arg) / arg;
    sum += sample(sol, psi, alpha) * flux / sol.eigenvalues[n] * sigma * sigma;
  }
  return through_origin ? 1.0 - sum : sum;
}

}  // namespace detail

struct FluxEstimate {
  double value = 0.0;
  double residual = 0.0;  // |S(count) - S(count / 2)|
};

/// Time-integrated boundary flux at xi = 1 from the eigenfunction expansion.
///
/// The expansion of a point source converges slowly at the boundary, so the
/// truncated sum is weighted with squared Lanczos sigma factors and taken at
/// the boundary farther from alpha. The residual
/// compares the sums over `count` and `count / 2` modes and is a conservative
/// error estimate.
inline FluxEstimate flux_hitting_estimate(const Profile1D& profile, double alpha, int count) {
  if (profile.nu != 0.0) throw DomainError("the flux expansion covers the undrifted case only");
  detail::check_open_unit(alpha);
  if (count < 2) throw DomainError("flux series needs at least two modes");
  const SpectralSolution sol = sturm_liouville_modes(profile, count);
  const double full = detail::flux_series(sol, alpha, count);
  const double half = detail::flux_series(sol, alpha, count / 2);
  return {full, std::abs(full - half)};
}

inline double flux_hitting_probability(const Profile1D& profile, double alpha, int count = 64,
                                       double tolerance = 1e-4) {
  const FluxEstimate est = flux_hitting_estimate(profile, alpha, count);
  if (est.residual > tolerance) {
    throw ToleranceError("flux series not converged with " + std::to_string(count) +
                             " modes (residual " + std::to_string(est.residual) + ")",
                         est.residual);
  }
  return est.value;
}

/// D(1) g'(1) for the Green function L g = delta(. - alpha), g(0) = g(1) = 0.
///
/// The homogeneous solutions u_L (u_L(0) = 0) and u_R (u_R(1) = 0) are found by
/// integrating the first-order system u' = q / D, q' = 0 with an adaptive
/// Dormand-Prince stepper, then matched at alpha with flux jump D g' = 1.
inline double green_hitting_probability(const Profile1D& profile, double alpha) {
  validate(profile);
  if (profile.nu != 0.0) throw DomainError("the Green-function route covers the undrifted case only");
  detail::check_open_unit(alpha);
  namespace odeint = boost::numeric::odeint;
  using State = std::array<double, 2>;  // (u, D u')
  const auto& D = profile.D;
  auto system = [&D](const State& s, State& ds, double x) {
    ds[0] = s[1] / D(x);
    ds[1] = 0.0;
  };
  auto stepper = odeint::make_controlled(1e-14, 1e-14, odeint::runge_kutta_dopri5<State>());

  // Left solution: u(0) = 0, D u' = 1.
  State left{0.0, 1.0};
  odeint::integrate_adaptive(stepper, system, left, 0.0, alpha, 1e-3);
  // Right solution: u(1) = 0, D u' = 1, integrated backwards to alpha.
  State right{0.0, 1.0};
  odeint::integrate_adaptive(stepper, system, right, 1.0, alpha, -1e-3);

  // g = a u_L on [0, alpha], b u_R on [alpha, 1]:
  //   a u_L(alpha) - b u_R(alpha) = 0,   b - a = 1.
  Eigen::Matrix2d m;
  m << left[0], -right[0], -1.0, 1.0;
  const Eigen::Vector2d rhs(0.0, 1.0);
  const Eigen::FullPivLU<Eigen::Matrix2d> lu(m);
  if (!lu.isInvertible()) throw NumericalError("Green function matching is singular");
  const Eigen::Vector2d ab = lu.solve(rhs);
  // D(1) g'(1^-) = b * (D u_R')(1) = b.
  return ab(1) * right[1];
}

struct DensitySnapshot {
  std::vector<double> xs;
  std::vector<double> rho;
  double mass = 0.0;
  /// Bound on the first omitted term, |psi|_max^2 exp(-lambda_{K+1} t), with
  /// lambda_{K+1} extrapolated from the last retained mode.
  double truncation_estimate = 0.0;
};

/// rho(xi, t) = sum_n psi_n(alpha) psi_n(xi) exp(-lambda_n t), truncated.
inline DensitySnapshot reconstruct_density(const SpectralSolution& sol, double alpha, double t) {
  if (!(t >= 0.0)) throw DomainError("time must be non-negative");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0, 1]");
  DensitySnapshot snap;
  snap.xs = sol.xs;
  snap.rho.assign(sol.xs.size(), 0.0);
  double psi_max = 0.0;
  for (int n = 0; n < sol.count; ++n) {
    const auto& psi = sol.eigenfunctions[n];
    const double weight = sample(sol, psi, alpha) * std::exp(-sol.eigenvalues[n] * t);
    for (std::size_t i = 0; i < psi.size(); ++i) {
      snap.rho[i] += weight * psi[i];
      psi_max = std::max(psi_max, std::abs(psi[i]));
    }
  }
  for (std::size_t i = 0; i + 1 < snap.rho.size(); ++i)
    snap.mass += 0.5 * sol.h * (snap.rho[i] + snap.rho[i + 1]);
  const int k = sol.count;
  const double next_lambda = sol.eigenvalues[k - 1] * (double(k + 1) * (k + 1)) / (double(k) * k);
  snap.truncation_estimate = psi_max * psi_max * std::exp(-next_lambda * t);
  return snap;
}

}  // namespace reduction::fp
