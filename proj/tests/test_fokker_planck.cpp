#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "reduction/fokker_planck.hpp"

using namespace reduction;
using namespace reduction::fp;

namespace {

const double kLn = std::log(1.5) / std::log(2.0);

// The denominator as printed alongside the closed form: (e^{nu/D} - 1).
double printed_closed_form(double nu, double d, double alpha) {
  return (1.0 - std::exp(-nu * alpha / d)) / (std::exp(nu / d) - 1.0);
}

std::vector<Profile1D> fixtures() {
  return {constant_profile(1.0), constant_profile(2.5), linear_profile(1.0), linear_profile(3.0),
          sinusoidal_profile(0.5), sinusoidal_profile(-0.4),
          tabulated_profile({0.0, 0.25, 0.5, 0.75, 1.0}, {1.0, 1.4, 0.8, 1.1, 2.0})};
}

}  // namespace

TEST(BruteForceOracles, MatchTheClosedForms) {
  EXPECT_NEAR(oracle::conductance_walk_hit([](double x) { return 1.0 + x; }, 0.5), kLn, 1e-8);
  EXPECT_NEAR(oracle::biased_walk_hit(1.0, 0.5), 0.6224593312018546, 1e-6);
}

TEST(HittingOde, ConstantDiffusionGivesAlpha) {
  for (double a : {0.01, 0.3, 0.5, 0.77, 0.99})
    EXPECT_NEAR(hitting_probability_ode(constant_profile(3.0), a), a, 1e-12);
}

TEST(HittingOde, LinearProfile) {
  EXPECT_NEAR(hitting_probability_ode(linear_profile(1.0), 0.5), kLn, 1e-12);
  for (double a : {0.1, 0.5, 0.9}) {
    const double brute = oracle::conductance_walk_hit([](double x) { return 1.0 + 3.0 * x; }, a);
    EXPECT_NEAR(hitting_probability_ode(linear_profile(3.0), a), brute, 1e-7);
  }
}

TEST(HittingOde, BoundaryLimitsAndDomain) {
  const auto p = linear_profile(1.0);
  EXPECT_LT(hitting_probability_ode(p, 1e-9), 1e-8);
  EXPECT_GT(hitting_probability_ode(p, 1.0 - 1e-9), 1.0 - 1e-8);
  EXPECT_THROW(hitting_probability_ode(p, 0.0), DomainError);
  EXPECT_THROW(hitting_probability_ode(p, 1.0), DomainError);
  EXPECT_THROW(hitting_probability_ode(p, -0.2), DomainError);
}

TEST(HittingOde, DriftWithVaryingDiffusionMatchesALatticeWalk) {
  // Generator D u'' + (D' + nu) u' in divergence form with a drift: the
  // lattice walk with conductances D and a bias nu h / 2 per link.
  const double nu = 1.5;
  const auto profile = linear_profile(1.0, nu);
  const int cells = 20000;
  const double h = 1.0 / cells;
  const int interior = cells - 1;
  std::vector<double> a(interior), b(interior), c(interior), d(interior, 0.0);
  for (int i = 1; i < cells; ++i) {
    const double left = 1.0 + (i - 0.5) * h, right = 1.0 + (i + 0.5) * h;
    a[i - 1] = -(left - nu * h / 2);
    c[i - 1] = -(right + nu * h / 2);
    b[i - 1] = -(a[i - 1] + c[i - 1]);
  }
  d[interior - 1] = -c[interior - 1];
  const auto u = oracle::solve_tridiagonal(a, b, c, d);
  EXPECT_NEAR(hitting_probability_ode(profile, 0.5), u[cells / 2 - 1], 1e-7);
}

TEST(HittingOde, RejectsBadProfiles) {
  EXPECT_THROW(hitting_probability_ode(linear_profile(-2.0), 0.5), ProfileError);
  auto p = constant_profile();
  p.grid = 8;
  EXPECT_THROW(validate(p), ProfileError);
  EXPECT_THROW(tabulated_profile({0.0, 0.5, 1.0}, {1.0, 1.0, 1.0}), ProfileError);
  EXPECT_THROW(tabulated_profile({0.0, 0.5, 0.4, 1.0}, {1, 1, 1, 1}), ProfileError);
  EXPECT_THROW(tabulated_profile({0.1, 0.5, 0.7, 1.0}, {1, 1, 1, 1}), ProfileError);
}

TEST(BiasedClosedForm, Examples) {
  EXPECT_NEAR(biased_closed_form(1.0, 1.0, 0.5), (1 - std::exp(-0.5)) / (1 - std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(biased_closed_form(1.0, 1.0, 0.5), oracle::biased_walk_hit(1.0, 0.5), 1e-6);
  EXPECT_EQ(biased_closed_form(2.0, 1.0, 1.0), 1.0);
  EXPECT_EQ(biased_closed_form(2.0, 1.0, 0.0), 0.0);
  EXPECT_EQ(biased_closed_form(0.0, 1.0, 0.37), 0.37);
  EXPECT_EQ(biased_closed_form(5e-13, 1.0, 0.37), 0.37);
  EXPECT_NEAR(biased_closed_form(1e-9, 1.0, 0.37), 0.37, 1e-9);
  EXPECT_THROW(biased_closed_form(1.0, 0.0, 0.5), DomainError);
}

TEST(BiasedClosedForm, PrintedDenominatorBreaksTheBoundaryCondition) {
  for (double r : {0.5, 1.0, 2.0}) {
    EXPECT_NEAR(printed_closed_form(r, 1.0, 1.0), std::exp(-r), 1e-15);
    EXPECT_GT(std::abs(printed_closed_form(r, 1.0, 1.0) - 1.0), 0.1);
    EXPECT_GT(std::abs(printed_closed_form(r, 1.0, 0.5) - oracle::biased_walk_hit(r, 0.5)), 0.05);
    EXPECT_NEAR(biased_closed_form(r, 1.0, 0.5), oracle::biased_walk_hit(r, 0.5), 1e-6);
  }
}

TEST(BiasedClosedForm, DriftDirection) {
  for (double a = 0.05; a < 1.0; a += 0.05) {
    EXPECT_GT(biased_closed_form(0.7, 1.0, a), a);
    EXPECT_LT(biased_closed_form(-0.7, 1.0, a), a);
  }
}

TEST(Spectral, LaplacianSpectrum) {
  const auto sol = sturm_liouville_modes(constant_profile(1.0), 64);
  for (int n = 1; n <= 5; ++n) {
    const double exact = std::pow(n * std::numbers::pi, 2);
    EXPECT_NEAR(sol.eigenvalues[n - 1] / exact, 1.0, 1e-4) << n;
  }
  // psi_n = sqrt 2 sin(n pi xi) with positive slope at 0.
  for (int n = 1; n <= 3; ++n)
    for (std::size_t i = 0; i < sol.xs.size(); i += 37)
      EXPECT_NEAR(sol.eigenfunctions[n - 1][i], std::sqrt(2.0) * std::sin(n * std::numbers::pi * sol.xs[i]),
                  1e-4);
  EXPECT_LT(sol.lambda1_relative_change, 1e-5);
}

TEST(Spectral, OrthonormalAndPositive) {
  for (const auto& profile : fixtures()) {
    const auto sol = sturm_liouville_modes(profile, 32);
    for (int m = 0; m < sol.count; ++m) {
      EXPECT_GT(sol.eigenvalues[m], 0.0);
      if (m > 0) {
        EXPECT_GT(sol.eigenvalues[m], sol.eigenvalues[m - 1]);
      }
      for (int n = 0; n <= m; ++n) {
        double dot = 0.0;
        const auto& a = sol.eigenfunctions[m];
        const auto& b = sol.eigenfunctions[n];
        for (std::size_t i = 0; i + 1 < a.size(); ++i)
          dot += 0.5 * sol.h * (a[i] * b[i] + a[i + 1] * b[i + 1]);
        EXPECT_NEAR(dot, m == n ? 1.0 : 0.0, 1e-8) << profile.name << " " << m << " " << n;
      }
    }
  }
}

TEST(Spectral, LargerDiffusionRaisesEveryEigenvalue) {
  const auto base = sturm_liouville_modes(constant_profile(1.0), 64);
  const auto lin = sturm_liouville_modes(linear_profile(1.0), 64);
  const auto twice = sturm_liouville_modes(constant_profile(2.0), 64);
  for (int n = 0; n < 64; ++n) {
    EXPECT_GT(lin.eigenvalues[n], base.eigenvalues[n]);
    EXPECT_LT(lin.eigenvalues[n], twice.eigenvalues[n]);
  }
}

TEST(Spectral, ModeCountLimits) {
  EXPECT_THROW(sturm_liouville_modes(constant_profile(), 0), DomainError);
  EXPECT_THROW(sturm_liouville_modes(constant_profile(), 129), DomainError);
}

TEST(Flux, ConstantDiffusionReproducesAlpha) {
  EXPECT_NEAR(flux_hitting_probability(constant_profile(1.0), 0.3), 0.3, 1e-4);
  for (double a : {0.1, 0.2, 0.3, 0.4}) {
    const double s = flux_hitting_probability(constant_profile(1.0), a) +
                     flux_hitting_probability(constant_profile(1.0), 1.0 - a);
    EXPECT_NEAR(s, 1.0, 1e-6) << a;
  }
}

TEST(Flux, LinearProfile) {
  EXPECT_NEAR(flux_hitting_probability(linear_profile(1.0), 0.5), kLn, 1e-4);
}

TEST(Flux, NotConvergedIsReported) {
  try {
    flux_hitting_probability(linear_profile(1.0), 0.5, 4, 1e-8);
    FAIL();
  } catch (const ToleranceError& e) {
    EXPECT_GT(e.residual(), 1e-8);
  }
  EXPECT_THROW(flux_hitting_probability(constant_profile(1.0, 0.5), 0.5), DomainError);
}

TEST(Green, Examples) {
  EXPECT_NEAR(green_hitting_probability(constant_profile(1.0), 0.5), 0.5, 1e-10);
  EXPECT_NEAR(green_hitting_probability(linear_profile(1.0), 0.5), kLn, 1e-8);
  const auto p = linear_profile(1.0);
  EXPECT_NEAR(green_hitting_probability(p, 0.999), hitting_probability_ode(p, 0.999), 1e-6);
}

TEST(CrossOracle, AgreementOnFixtureGrid) {
  for (const auto& profile : fixtures()) {
    for (double a : {0.1, 0.25, 0.5, 0.7, 0.9}) {
      const double ode = hitting_probability_ode(profile, a);
      EXPECT_NEAR(green_hitting_probability(profile, a), ode, 1e-8) << profile.name << " " << a;
      // Rough profiles (tabulated, oscillatory) need the larger mode budget.
      const auto flux = flux_hitting_estimate(profile, a, 128);
      EXPECT_NEAR(flux.value, ode, 1e-4) << profile.name << " " << a;
      EXPECT_LE(flux.residual, 1e-4) << profile.name << " " << a;
    }
  }
}

TEST(CrossOracle, MonotoneInAlpha) {
  for (const auto& profile : fixtures()) {
    double prev = 0.0;
    for (int i = 1; i < 50; ++i) {
      const double v = hitting_probability_ode(profile, i / 50.0);
      EXPECT_GT(v, prev) << profile.name;
      prev = v;
    }
  }
}

TEST(Density, MassDecaysAndVanishes) {
  for (const auto& profile : fixtures()) {
    const auto sol = sturm_liouville_modes(profile, 64);
    const auto early = reconstruct_density(sol, 0.4, 0.01);
    const auto later = reconstruct_density(sol, 0.4, 0.05);
    EXPECT_LT(later.mass, early.mass) << profile.name;
    const auto late = reconstruct_density(sol, 0.4, 20.0);
    for (double v : late.rho) EXPECT_LT(std::abs(v), 1e-30);
  }
}

TEST(Density, SymmetricForConstantDiffusion) {
  const auto sol = sturm_liouville_modes(constant_profile(1.0), 64);
  const auto snap = reconstruct_density(sol, 0.5, 0.1);
  const std::size_t last = snap.rho.size() - 1;
  for (std::size_t i = 0; i <= last; ++i)
    EXPECT_NEAR(snap.rho[i], snap.rho[last - i], 1e-10 + snap.truncation_estimate);
  // Against the image series for the heat kernel on [0, 1]:
  // rho = sum_n 2 sin(n pi a) sin(n pi x) exp(-(n pi)^2 t).
  for (std::size_t i = 0; i <= last; i += 50) {
    double exact = 0.0;
    for (int n = 1; n <= 200; ++n)
      exact += 2.0 * std::sin(n * std::numbers::pi * 0.5) * std::sin(n * std::numbers::pi * snap.xs[i]) *
               std::exp(-std::pow(n * std::numbers::pi, 2) * 0.1);
    EXPECT_NEAR(snap.rho[i], exact, 1e-4);
  }
  EXPECT_THROW(reconstruct_density(sol, 0.5, -1.0), DomainError);
}
