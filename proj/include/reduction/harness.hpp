#pragma once

// Ensembles of reduction trajectories and the statistics drawn from them.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "reduction/diffusion.hpp"
#include "reduction/errors.hpp"
#include "reduction/fokker_planck.hpp"
#include "reduction/random.hpp"
#include "reduction/statistics.hpp"

namespace reduction {

/// Runs body(i) for i in [0, count) on `workers` threads. Each index is
/// visited exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling.
template <class Body>
void parallel_for(std::int64_t count, int workers, Body body) {
  workers = std::max(1, workers);
  if (workers == 1 || count < 2) {
    for (std::int64_t i = 0; i < count; ++i) body(i);
    return;
  }
  constexpr std::int64_t kChunk = 64;
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    try {
      for (;;) {
        const std::int64_t begin = next.fetch_add(kChunk);
        if (begin >= count) return;
        const std::int64_t end = std::min(count, begin + kChunk);
        for (std::int64_t i = begin; i < end; ++i) body(i);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next.store(count);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

enum class Provenance { kTheorem, kOracle, kNone };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kTheorem: return "theorem";
    case Provenance::kOracle: return "oracle";
    case Provenance::kNone: return "none";
  }
  return "none";
}

struct Expectation {
  std::vector<double> probabilities;
  Provenance provenance = Provenance::kTheorem;
};

struct EnsembleConfig {
  EnsembleConfig(DiffusionSpec s, SimplexPoint p) : spec(std::move(s)), start(std::move(p)) {}

  DiffusionSpec spec;
  SimplexPoint start;
  std::int64_t trajectories = 100000;
  std::optional<double> dt;  // default_dt(spec) when unset
  std::uint64_t master_seed = 1;
  std::int64_t max_steps = 100'000'000;
  std::optional<Expectation> expected;
  int workers = 1;
  bool check_dt_convergence = false;
  WalkOptions walk;
};

struct DtConvergence {
  double half_dt = 0.0;
  std::vector<double> frequencies_half;
  double max_z = 0.0;  // max_k |f_k - f'_k| / combined SE
  bool stable = false;  // max_z < 3
};

struct AbsorptionEstimate {
  std::int64_t trajectories = 0;
  double dt = 0.0;
  std::vector<std::int64_t> counts;
  std::vector<double> frequencies;
  std::vector<stats::Interval> wilson95;
  std::optional<stats::ChiSquare> chi_square;
  double mean_hitting_time = 0.0;
  double std_hitting_time = 0.0;
  double mean_steps = 0.0;
  std::int64_t accelerated = 0;
  std::optional<DtConvergence> dt_convergence;
};

/// A trajectory failed; carries the statistics of the trajectories that
/// completed before it in index order.
class EnsembleError : public Error {
 public:
  EnsembleError(const std::string& what, std::int64_t index, AbsorptionEstimate partial)
      : Error(what), index_(index), partial_(std::move(partial)) {}
  std::int64_t trajectory_index() const noexcept { return index_; }
  const AbsorptionEstimate& partial() const noexcept { return partial_; }

 private:
  std::int64_t index_;
  AbsorptionEstimate partial_;
};

namespace detail {

struct Outcome {
  int vertex = -1;
  bool accelerated = false;
  double time = 0.0;
  std::int64_t steps = 0;
};

inline AbsorptionEstimate summarise(const std::vector<Outcome>& outcomes, std::int64_t upto,
                                    int n, double dt) {
  AbsorptionEstimate est;
  est.trajectories = upto;
  est.dt = dt;
  est.counts.assign(n, 0);
  double sum_t = 0.0, sum_t2 = 0.0, sum_steps = 0.0;
  for (std::int64_t i = 0; i < upto; ++i) {
    const auto& o = outcomes[i];
    ++est.counts[o.vertex];
    sum_t += o.time;
    sum_t2 += o.time * o.time;
    sum_steps += static_cast<double>(o.steps);
    est.accelerated += o.accelerated ? 1 : 0;
  }
  if (upto == 0) return est;
  const double m = static_cast<double>(upto);
  for (int k = 0; k < n; ++k) {
    est.frequencies.push_back(static_cast<double>(est.counts[k]) / m);
    est.wilson95.push_back(stats::wilson_interval(est.counts[k], upto, 0.95));
  }
  est.mean_hitting_time = sum_t / m;
  est.std_hitting_time = upto > 1 ? std::sqrt(std::max(0.0, (sum_t2 - m * est.mean_hitting_time *
                                                                         est.mean_hitting_time) /
                                                                    (m - 1)))
                                  : 0.0;
  est.mean_steps = sum_steps / m;
  return est;
}

inline AbsorptionEstimate run_counts(const EnsembleConfig& cfg, double dt) {
  const int n = cfg.spec.n();
  std::vector<Outcome> outcomes(cfg.trajectories);
  std::vector<char> failed(cfg.trajectories, 0);
  std::vector<std::string> messages(cfg.trajectories);
  parallel_for(cfg.trajectories, cfg.workers, [&](std::int64_t i) {
    RandomStream rng(cfg.master_seed, static_cast<std::uint64_t>(i));
    try {
      const TrajectoryRecord rec =
          run_trajectory(cfg.spec, cfg.start, dt, rng, cfg.max_steps, cfg.walk);
      outcomes[i] = {rec.absorbed_vertex, rec.accelerated, rec.hitting_time, rec.steps_taken};
    } catch (const NonTerminationError& e) {
      failed[i] = 1;
      messages[i] = e.what();
    }
  });
  for (std::int64_t i = 0; i < cfg.trajectories; ++i) {
    if (failed[i]) {
      throw EnsembleError("trajectory " + std::to_string(i) + ": " + messages[i], i,
                          summarise(outcomes, i, n, dt));
    }
  }
  return summarise(outcomes, cfg.trajectories, n, dt);
}

}  // namespace detail

inline void validate(const EnsembleConfig& cfg) {
  validate(cfg.spec);
  if (cfg.trajectories < 1) throw DomainError("an ensemble needs at least one trajectory");
  if (cfg.dt && !(*cfg.dt > 0.0)) throw DomainError("dt must be positive");
  if (cfg.start.dim() != cfg.spec.n()) {
    throw DimensionMismatchError("start point and spec differ in dimension");
  }
  if (cfg.expected) {
    const auto& p = cfg.expected->probabilities;
    if (static_cast<int>(p.size()) != cfg.spec.n()) {
      throw DimensionMismatchError("expected probabilities have the wrong length");
    }
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw DomainError("expected probabilities must be non-negative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DomainError("expected probabilities sum to " + std::to_string(sum));
    }
  }
}

inline double resolved_dt(const EnsembleConfig& cfg) {
  return cfg.dt ? *cfg.dt : default_dt(cfg.spec);
}

inline AbsorptionEstimate run_ensemble(const EnsembleConfig& cfg) {
  validate(cfg);
  const double dt = resolved_dt(cfg);
  AbsorptionEstimate est = detail::run_counts(cfg, dt);
  if (cfg.expected) est.chi_square = stats::chi_square_test(est.counts, cfg.expected->probabilities);
  if (cfg.check_dt_convergence) {
    const AbsorptionEstimate half = detail::run_counts(cfg, dt / 2);
    DtConvergence conv;
    conv.half_dt = dt / 2;
    conv.frequencies_half = half.frequencies;
    const double m = static_cast<double>(cfg.trajectories);
    for (std::size_t k = 0; k < est.frequencies.size(); ++k) {
      const double a = est.frequencies[k], b = half.frequencies[k];
      const double se = std::sqrt((a * (1 - a) + b * (1 - b)) / m);
      const double diff = std::abs(a - b);
      const double z = se > 0.0 ? diff / se : (diff > 0.0 ? INFINITY : 0.0);
      conv.max_z = std::max(conv.max_z, z);
    }
    conv.stable = conv.max_z < 3.0;
    est.dt_convergence = conv;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Theorem suite

inline constexpr double kPassThreshold = 1e-3;
inline constexpr double kRejectThreshold = 1e-6;

enum class Verdict { kPass, kReject, kInconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kReject: return "reject";
    case Verdict::kInconclusive: return "inconclusive";
  }
  return "inconclusive";
}

/// p >= 0.001 passes, p <= 1e-6 rejects, anything between is inconclusive.
inline Verdict classify_p_value(double p) {
  if (p >= kPassThreshold) return Verdict::kPass;
  if (p <= kRejectThreshold) return Verdict::kReject;
  return Verdict::kInconclusive;
}

enum class Regime { kIsotropic, kAnisotropic, kInhomogeneous, kDrifted };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::kIsotropic: return "isotropic";
    case Regime::kAnisotropic: return "anisotropic";
    case Regime::kInhomogeneous: return "inhomogeneous";
    case Regime::kDrifted: return "drifted";
  }
  return "isotropic";
}

inline constexpr Regime kAllRegimes[] = {Regime::kIsotropic, Regime::kAnisotropic,
                                         Regime::kInhomogeneous, Regime::kDrifted};

/// Parameters of the four regimes, shared by the theorem suite and the CLI.
struct RegimeParameters {
  double sigma2 = 1.0;
  double tau = 1.0;
  double anisotropy = 4.0;   // eigenvalue ratio of C
  double slope = 1.0;        // D = 1 + slope * p_0
  double drift_ratio = 1.0;  // nu / D along the V_0-V_1 edge
};

inline DiffusionSpec make_regime_spec(Regime r, int n, const RegimeParameters& rp = {}) {
  switch (r) {
    case Regime::kIsotropic: return isotropic_spec(n, rp.sigma2, rp.tau);
    case Regime::kAnisotropic: return anisotropic_spec(n, rp.anisotropy, rp.sigma2, rp.tau);
    case Regime::kInhomogeneous:
      return linear_inhomogeneous_spec(n, rp.slope, 0, rp.sigma2, rp.tau);
    case Regime::kDrifted: return drifted_spec(n, rp.drift_ratio, rp.sigma2, rp.tau);
  }
  throw DomainError("unknown regime");
}

/// One-dimensional oracle for the probability of absorption at V_0 (n = 2).
inline std::optional<double> regime_oracle(Regime r, double alpha, const RegimeParameters& rp = {}) {
  switch (r) {
    case Regime::kIsotropic: return alpha;
    case Regime::kAnisotropic: return std::nullopt;
    case Regime::kInhomogeneous: return fp::hitting_probability_ode(fp::linear_profile(rp.slope), alpha);
    case Regime::kDrifted: return fp::biased_closed_form(rp.drift_ratio, 1.0, alpha);
  }
  return std::nullopt;
}

struct TheoremSuiteConfig {
  std::vector<std::vector<double>> starts;  // dimension n = size of each start
  std::int64_t trajectories = 100000;
  std::uint64_t seed = 1;
  int workers = 1;
  std::optional<double> dt;  // per-regime default when unset
  RegimeParameters regime;
  bool check_dt_convergence = false;
};

struct TheoremRow {
  int n = 0;
  std::vector<double> start;
  Regime regime = Regime::kIsotropic;
  bool applicable = true;
  Verdict expected = Verdict::kPass;
  Verdict verdict = Verdict::kInconclusive;
  std::optional<AbsorptionEstimate> estimate;
  std::optional<double> oracle;        // probability of V_0, n = 2 only
  std::optional<bool> oracle_within_3se;
  bool as_expected = false;
  std::string note;
};

struct TheoremReport {
  std::vector<TheoremRow> rows;
  bool all_as_expected() const {
    return std::all_of(rows.begin(), rows.end(),
                       [](const TheoremRow& r) { return !r.applicable || r.as_expected; });
  }
};

/// For each start runs the isotropic case (expected to reproduce the start
/// vector) and three violating cases (expected to reject it).
inline TheoremReport theorem_suite(const TheoremSuiteConfig& cfg) {
  TheoremReport report;
  std::uint64_t row_index = 0;
  for (const auto& start : cfg.starts) {
    const int n = static_cast<int>(start.size());
    for (Regime regime : kAllRegimes) {
      TheoremRow row;
      row.n = n;
      row.start = start;
      row.regime = regime;
      row.expected = regime == Regime::kIsotropic ? Verdict::kPass : Verdict::kReject;
      const std::uint64_t seed = mix_seed(cfg.seed, row_index++);
      if (regime == Regime::kAnisotropic && n == 2) {
        row.applicable = false;
        row.note = "one-dimensional motion is always isotropic";
        report.rows.push_back(std::move(row));
        continue;
      }
      EnsembleConfig ec(make_regime_spec(regime, n, cfg.regime), SimplexPoint(start));
      ec.trajectories = cfg.trajectories;
      ec.dt = cfg.dt;
      ec.master_seed = seed;
      ec.workers = cfg.workers;
      ec.expected = Expectation{start, Provenance::kTheorem};
      ec.check_dt_convergence = cfg.check_dt_convergence;
      AbsorptionEstimate est = run_ensemble(ec);
      row.verdict = classify_p_value(est.chi_square->p_value);
      row.as_expected = row.verdict == row.expected;
      if (n == 2) {
        row.oracle = regime_oracle(regime, start[0], cfg.regime);
        if (row.oracle) {
          const double se = stats::binomial_se(*row.oracle, cfg.trajectories);
          row.oracle_within_3se = std::abs(est.frequencies[0] - *row.oracle) <= 3.0 * se;
          row.as_expected = row.as_expected && *row.oracle_within_3se;
        }
      }
      row.estimate = std::move(est);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Hitting-time scaling

struct ScalingConfig {
  std::vector<int> n_values{2, 3, 4, 5};
  std::int64_t trajectories = 10000;
  std::uint64_t seed = 1;
  int workers = 1;
  double tau = 1.0;
  double sigma2 = 1.0;
  std::optional<double> dt;
};

struct ScalingRow {
  int n = 0;
  double mean_time = 0.0;
  double se_time = 0.0;
  double ratio_to_n_tau = 0.0;  // T(n) / (n tau)
  double dt = 0.0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  bool strictly_increasing = false;
  /// n = 2 from the midpoint: T = 2 alpha (1 - alpha) tau / sigma2.
  std::optional<double> two_state_expected;
  std::optional<double> two_state_relative_error;
};

/// Mean exit time of the symmetric one-dimensional walk from alpha, with
/// variance rate sigma2 / tau along the chart axis (edge length sqrt 2).
inline double two_state_mean_time(double alpha, double sigma2, double tau) {
  return 2.0 * alpha * (1.0 - alpha) * tau / sigma2;
}

inline ScalingReport hitting_time_scaling(const ScalingConfig& cfg) {
  ScalingReport report;
  std::uint64_t index = 0;
  for (int n : cfg.n_values) {
    check_dimension(n);
    EnsembleConfig ec(isotropic_spec(n, cfg.sigma2, cfg.tau), SimplexPoint::barycenter(n));
    ec.trajectories = cfg.trajectories;
    ec.dt = cfg.dt;
    ec.master_seed = mix_seed(cfg.seed, index++);
    ec.workers = cfg.workers;
    const AbsorptionEstimate est = run_ensemble(ec);
    ScalingRow row;
    row.n = n;
    row.mean_time = est.mean_hitting_time;
    row.se_time = est.std_hitting_time / std::sqrt(static_cast<double>(cfg.trajectories));
    row.ratio_to_n_tau = est.mean_hitting_time / (n * cfg.tau);
    row.dt = est.dt;
    if (n == 2) {
      report.two_state_expected = two_state_mean_time(0.5, cfg.sigma2, cfg.tau);
      report.two_state_relative_error =
          std::abs(row.mean_time - *report.two_state_expected) / *report.two_state_expected;
    }
    report.rows.push_back(row);
  }
  report.strictly_increasing = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    if (!(report.rows[i].mean_time > report.rows[i - 1].mean_time) ||
        report.rows[i].n <= report.rows[i - 1].n) {
      report.strictly_increasing = false;
    }
  }
  return report;
}

}  // namespace reduction
