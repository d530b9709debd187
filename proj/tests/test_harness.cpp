#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "reduction/harness.hpp"

using namespace reduction;

TEST(Wilson, KnownValues) {
  // 0.95 interval for 50 of 100: centre 0.5, half-width 0.0962.
  const auto i = stats::wilson_interval(50, 100);
  EXPECT_NEAR(i.lo, 0.4038, 1e-4);
  EXPECT_NEAR(i.hi, 0.5962, 1e-4);
  const auto zero = stats::wilson_interval(0, 10);
  EXPECT_EQ(zero.lo, 0.0);
  EXPECT_NEAR(zero.hi, 0.2775, 1e-4);
  const auto all = stats::wilson_interval(10, 10);
  EXPECT_EQ(all.hi, 1.0);
  EXPECT_THROW(stats::wilson_interval(11, 10), DomainError);
  EXPECT_THROW(stats::wilson_interval(1, 10, 1.0), DomainError);
  EXPECT_NEAR(stats::two_sided_z(0.99), 2.5758293035489, 1e-12);
}

TEST(ChiSquare, KnownValueAndPooling) {
  // 3 categories, expected 50 each: statistic (100 + 0 + 100) / 50 = 4, dof 2.
  const auto c = stats::chi_square_test({40, 50, 60}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  EXPECT_NEAR(c.statistic, 4.0, 1e-12);
  EXPECT_EQ(c.dof, 2);
  EXPECT_NEAR(c.p_value, std::exp(-2.0), 1e-12);

  // Expected counts (95, 2, 3): the two small ones pool to 5.
  const auto pooled = stats::chi_square_test({95, 1, 4}, {0.95, 0.02, 0.03});
  EXPECT_EQ(pooled.categories, 2);
  EXPECT_NEAR(pooled.statistic, 0.0, 1e-12);

  // Expected (97, 1, 2): the pool (3) is merged into the smallest bin.
  const auto merged = stats::chi_square_test({97, 1, 2}, {0.97, 0.01, 0.02});
  EXPECT_EQ(merged.categories, 1);
  EXPECT_EQ(merged.p_value, 1.0);

  const auto impossible = stats::chi_square_test({90, 10}, {1.0, 0.0});
  EXPECT_EQ(impossible.p_value, 0.0);
  EXPECT_THROW(stats::chi_square_test({1, 2}, {1.0}), DomainError);
}

TEST(Verdict, Thresholds) {
  EXPECT_EQ(classify_p_value(0.5), Verdict::kPass);
  EXPECT_EQ(classify_p_value(1e-3), Verdict::kPass);
  EXPECT_EQ(classify_p_value(1e-4), Verdict::kInconclusive);
  EXPECT_EQ(classify_p_value(1e-6), Verdict::kReject);
  EXPECT_EQ(classify_p_value(0.0), Verdict::kReject);
}

TEST(EnsembleConfig, Validation) {
  EnsembleConfig cfg(isotropic_spec(3), SimplexPoint::barycenter(3));
  cfg.trajectories = 0;
  EXPECT_THROW(run_ensemble(cfg), DomainError);
  cfg.trajectories = 10;
  cfg.dt = -1.0;
  EXPECT_THROW(run_ensemble(cfg), DomainError);
  cfg.dt.reset();
  cfg.expected = Expectation{{0.5, 0.5, 0.1}, Provenance::kTheorem};
  EXPECT_THROW(run_ensemble(cfg), DomainError);
  cfg.expected = Expectation{{0.5, 0.5}, Provenance::kTheorem};
  EXPECT_THROW(run_ensemble(cfg), DimensionMismatchError);
  EnsembleConfig mismatch(isotropic_spec(3), SimplexPoint::barycenter(2));
  EXPECT_THROW(run_ensemble(mismatch), DimensionMismatchError);
}

TEST(Ensemble, VertexStart) {
  EnsembleConfig cfg(isotropic_spec(3), SimplexPoint::vertex(3, 0));
  cfg.trajectories = 50;
  const auto est = run_ensemble(cfg);
  EXPECT_EQ(est.counts, (std::vector<std::int64_t>{50, 0, 0}));
  EXPECT_EQ(est.frequencies[0], 1.0);
  EXPECT_EQ(est.mean_hitting_time, 0.0);
  EXPECT_EQ(est.std_hitting_time, 0.0);
}

TEST(Ensemble, StatisticsAreConsistent) {
  EnsembleConfig cfg(isotropic_spec(3), SimplexPoint({0.5, 0.3, 0.2}));
  cfg.trajectories = 2000;
  cfg.dt = 1e-3;
  cfg.expected = Expectation{{0.5, 0.3, 0.2}, Provenance::kTheorem};
  const auto est = run_ensemble(cfg);
  std::int64_t total = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    total += est.counts[k];
    EXPECT_EQ(est.frequencies[k], est.counts[k] / 2000.0);
    EXPECT_TRUE(est.wilson95[k].contains(est.frequencies[k]));
  }
  EXPECT_EQ(total, 2000);
  ASSERT_TRUE(est.chi_square.has_value());
  EXPECT_GE(est.chi_square->p_value, 0.0);
  EXPECT_LE(est.chi_square->p_value, 1.0);
  EXPECT_EQ(est.dt, 1e-3);
  EXPECT_GT(est.mean_hitting_time, 0.0);
  EXPECT_GT(est.std_hitting_time, 0.0);
}

TEST(Ensemble, BitIdenticalAcrossWorkerCounts) {
  EnsembleConfig cfg(linear_inhomogeneous_spec(3), SimplexPoint({0.4, 0.35, 0.25}));
  cfg.trajectories = 3000;
  cfg.dt = 1e-3;
  cfg.master_seed = 123;
  cfg.workers = 1;
  const auto a = run_ensemble(cfg);
  for (int w : {2, 4, 8}) {
    cfg.workers = w;
    const auto b = run_ensemble(cfg);
    EXPECT_EQ(a.counts, b.counts) << w;
    EXPECT_EQ(std::memcmp(&a.mean_hitting_time, &b.mean_hitting_time, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&a.std_hitting_time, &b.std_hitting_time, sizeof(double)), 0);
    EXPECT_EQ(a.mean_steps, b.mean_steps);
  }
  cfg.master_seed = 124;
  EXPECT_NE(run_ensemble(cfg).mean_hitting_time, a.mean_hitting_time);
}

TEST(Ensemble, NonTerminationNamesTheTrajectory) {
  EnsembleConfig cfg(isotropic_spec(2), SimplexPoint({0.5, 0.5}));
  cfg.trajectories = 200;
  cfg.dt = 1e-3;
  cfg.max_steps = 60;
  cfg.workers = 3;
  try {
    run_ensemble(cfg);
    FAIL();
  } catch (const EnsembleError& e) {
    // Trajectories before the failing one completed; partial stats cover them.
    EXPECT_EQ(e.partial().trajectories, e.trajectory_index());
    std::int64_t total = 0;
    for (auto c : e.partial().counts) total += c;
    EXPECT_EQ(total, e.trajectory_index());
    EXPECT_NE(std::string(e.what()).find("trajectory " + std::to_string(e.trajectory_index())),
              std::string::npos);
    // It is the lowest failing index: every earlier trajectory finishes.
    for (std::int64_t i = 0; i < e.trajectory_index(); ++i) {
      RandomStream rng(cfg.master_seed, i);
      EXPECT_NO_THROW(run_trajectory(cfg.spec, cfg.start, *cfg.dt, rng, cfg.max_steps));
    }
  }
}

TEST(Ensemble, WilsonCoverage) {
  EnsembleConfig cfg(isotropic_spec(2), SimplexPoint({0.3, 0.7}));
  cfg.trajectories = 400;
  cfg.dt = 1e-3;
  int covered = 0;
  for (int seed = 0; seed < 100; ++seed) {
    cfg.master_seed = mix_seed(2718, seed);
    const auto est = run_ensemble(cfg);
    covered += est.wilson95[0].contains(0.3);
  }
  EXPECT_GE(covered, 94);
}

TEST(Ensemble, DtConvergenceReport) {
  EnsembleConfig cfg(isotropic_spec(2), SimplexPoint({0.3, 0.7}));
  cfg.trajectories = 2000;
  cfg.check_dt_convergence = true;
  const auto est = run_ensemble(cfg);
  ASSERT_TRUE(est.dt_convergence.has_value());
  EXPECT_EQ(est.dt_convergence->half_dt, est.dt / 2);
  EXPECT_EQ(est.dt_convergence->frequencies_half.size(), 2u);
  EXPECT_EQ(est.dt_convergence->stable, est.dt_convergence->max_z < 3.0);
}

TEST(TheoremSuite, ExpandsRegimesPerStart) {
  TheoremSuiteConfig cfg;
  cfg.starts = {{0.3, 0.7}, {0.5, 0.3, 0.2}};
  cfg.trajectories = 200;
  cfg.dt = 2e-3;
  const auto report = theorem_suite(cfg);
  ASSERT_EQ(report.rows.size(), 8u);
  EXPECT_EQ(report.rows[0].regime, Regime::kIsotropic);
  EXPECT_EQ(report.rows[0].expected, Verdict::kPass);
  EXPECT_FALSE(report.rows[1].applicable);  // anisotropy needs two axes
  EXPECT_TRUE(report.rows[5].applicable);
  EXPECT_EQ(report.rows[5].expected, Verdict::kReject);
  ASSERT_TRUE(report.rows[3].oracle.has_value());
  EXPECT_NEAR(*report.rows[3].oracle, fp::biased_closed_form(1.0, 1.0, 0.3), 1e-12);
}

TEST(Scaling, TwoStateAndMonotone) {
  ScalingConfig cfg;
  // Gaps between successive n shrink quickly; these are several SE apart.
  cfg.n_values = {2, 3, 5};
  cfg.trajectories = 5000;
  cfg.dt = 1e-3;
  const auto r = hitting_time_scaling(cfg);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_TRUE(r.strictly_increasing);
  ASSERT_TRUE(r.two_state_expected.has_value());
  EXPECT_DOUBLE_EQ(*r.two_state_expected, 0.5);
  for (const auto& row : r.rows) EXPECT_DOUBLE_EQ(row.ratio_to_n_tau, row.mean_time / row.n);
}
