#pragma once

// Time-stepped Brownian motion of a probability vector with absorbing faces.
//
// The motion is specified in the Cartesian coordinates xi of a full chart:
//
//   <dxi_j dxi_m> = C_jm(xi) dt / tau,   <dxi_j> = nu_j dt / tau,
//
// with C(xi) = s(p) * C0 for a constant symmetric PSD matrix C0 and a positive
// scalar field s on barycentric coordinates (s == 1 for homogeneous motion).
// Under the default Fokker-Planck convention the density obeys
//   d_t rho = d_j (C_jm / 2 d_m rho) - d_j (nu_j rho),
// so inhomogeneous motion carries the Ito drift (1/2) d_m C_jm. When a
// coordinate reaches zero it is frozen and the motion continues on the face,
// with covariance and drift restricted to the face, until one vertex is left.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "reduction/errors.hpp"
#include "reduction/random.hpp"
#include "reduction/simplex.hpp"

namespace reduction {

enum class NoiseConvention {
  kFokkerPlanck,  // divergence form, adds (1/2) grad C to the drift
  kIto,           // C and nu are the Ito coefficients as given
};

/// Positive scalar field s(p) with its gradient with respect to p.
struct ScalarField {
  std::function<double(std::span<const double> p)> value;
  std::function<void(std::span<const double> p, std::span<double> grad)> gradient;
  std::string description;
};

/// s(p) = 1 + slope * p_vertex.
inline ScalarField linear_field(int vertex, double slope) {
  ScalarField f;
  f.value = [vertex, slope](std::span<const double> p) { return 1.0 + slope * p[vertex]; };
  f.gradient = [vertex, slope](std::span<const double>, std::span<double> g) {
    std::fill(g.begin(), g.end(), 0.0);
    g[vertex] = slope;
  };
  f.description = "1 + " + std::to_string(slope) + " * p_" + std::to_string(vertex);
  return f;
}

struct DiffusionSpec {
  SimplexChart chart;              // coordinates in which C0 and nu are expressed
  Eigen::MatrixXd base_correlation;  // C0, (n-1) x (n-1), units 1/tau
  Eigen::VectorXd drift;           // nu, n-1 entries, units 1/tau
  std::optional<ScalarField> modulation;
  double tau = 1.0;
  NoiseConvention convention = NoiseConvention::kFokkerPlanck;
  std::string label;

  int n() const { return chart.n(); }
  bool homogeneous() const { return !modulation.has_value(); }

  double scale_at(std::span<const double> p) const {
    return modulation ? modulation->value(p) : 1.0;
  }

  /// Barycentric coordinates of a chart point; no membership check.
  std::vector<double> point_of(const Eigen::VectorXd& xi) const {
    const Eigen::VectorXd p = chart.basis().transpose() * xi;
    std::vector<double> out(n());
    for (int k = 0; k < n(); ++k) out[k] = p(k) + 1.0 / n();
    return out;
  }

  Eigen::MatrixXd correlation_at(const Eigen::VectorXd& xi) const {
    return scale_at(point_of(xi)) * base_correlation;
  }
  Eigen::VectorXd drift_at(const Eigen::VectorXd&) const { return drift; }
};

inline void validate(const DiffusionSpec& spec) {
  const int axes = spec.n() - 1;
  if (spec.chart.active_count() != spec.n()) {
    throw SpecError("a diffusion spec needs a chart of the full simplex");
  }
  if (spec.base_correlation.rows() != axes || spec.base_correlation.cols() != axes ||
      spec.drift.size() != axes) {
    throw SpecError("correlation and drift must have " + std::to_string(axes) + " axes");
  }
  if (!(spec.tau > 0.0) || !std::isfinite(spec.tau)) {
    throw SpecError("time scale tau must be positive");
  }
  const double scale = std::max(1.0, spec.base_correlation.cwiseAbs().maxCoeff());
  if ((spec.base_correlation - spec.base_correlation.transpose()).cwiseAbs().maxCoeff() >
      kAlgebraicTolerance * scale) {
    throw SpecError("correlation matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(spec.base_correlation,
                                                     Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) {
    throw SpecError("correlation matrix has a negative eigenvalue");
  }
  if (spec.modulation && (!spec.modulation->value || !spec.modulation->gradient)) {
    throw SpecError("modulation needs both a value and a gradient");
  }
}

inline DiffusionSpec homogeneous_spec(SimplexChart chart, Eigen::MatrixXd correlation,
                                      Eigen::VectorXd drift, double tau = 1.0,
                                      std::string label = "custom") {
  DiffusionSpec spec{std::move(chart), std::move(correlation), std::move(drift),
                     std::nullopt, tau, NoiseConvention::kFokkerPlanck, std::move(label)};
  validate(spec);
  return spec;
}

/// C = sigma2 * I, no drift.
inline DiffusionSpec isotropic_spec(int n, double sigma2 = 1.0, double tau = 1.0) {
  return homogeneous_spec(make_chart(n), sigma2 * Eigen::MatrixXd::Identity(n - 1, n - 1),
                          Eigen::VectorXd::Zero(n - 1), tau, "isotropic");
}

/// C = sigma2 * diag(ratio, 1, ..., 1) in the default chart.
inline DiffusionSpec anisotropic_spec(int n, double ratio = 4.0, double sigma2 = 1.0,
                                      double tau = 1.0) {
  Eigen::MatrixXd c = sigma2 * Eigen::MatrixXd::Identity(n - 1, n - 1);
  c(0, 0) *= ratio;
  return homogeneous_spec(make_chart(n), std::move(c), Eigen::VectorXd::Zero(n - 1), tau,
                          "anisotropic");
}

/// C = sigma2 * (1 + slope * p_vertex) * I. For n = 2 and vertex 0 this is the
/// one-dimensional D(xi) = 1 + slope * xi with xi = p_0.
inline DiffusionSpec linear_inhomogeneous_spec(int n, double slope = 1.0, int vertex = 0,
                                               double sigma2 = 1.0, double tau = 1.0) {
  DiffusionSpec spec = isotropic_spec(n, sigma2, tau);
  spec.modulation = linear_field(vertex, slope);
  spec.label = "inhomogeneous";
  validate(spec);
  return spec;
}

/// Isotropic motion with a constant drift along the first chart axis, which
/// points from V_1 towards V_0. `drift_ratio` is nu/D measured in the p_0
/// coordinate of the V_0-V_1 edge, where D is half the variance rate of p_0.
inline DiffusionSpec drifted_spec(int n, double drift_ratio = 1.0, double sigma2 = 1.0,
                                  double tau = 1.0) {
  DiffusionSpec spec = isotropic_spec(n, sigma2, tau);
  // dp_0 = dxi_1 / sqrt(2) along the edge, so D_p = sigma2 / 4 and
  // nu_p = nu / sqrt(2).
  spec.drift(0) = drift_ratio * sigma2 / (2.0 * std::sqrt(2.0));
  spec.label = "drifted";
  return spec;
}

/// The same physical motion expressed in another full chart.
inline DiffusionSpec rechart(const DiffusionSpec& spec, SimplexChart chart) {
  if (chart.n() != spec.n()) throw DimensionMismatchError("rechart: dimension mismatch");
  const Eigen::MatrixXd r = chart.basis() * spec.chart.basis().transpose();
  DiffusionSpec out = spec;
  out.chart = std::move(chart);
  out.base_correlation = r * spec.base_correlation * r.transpose();
  out.base_correlation = 0.5 * (out.base_correlation + out.base_correlation.transpose());
  out.drift = r * spec.drift;
  validate(out);
  return out;
}

/// Probe set used for step-size and regime checks: vertices, edge midpoints
/// and the barycenter.
inline std::vector<SimplexPoint> standard_probes(int n) {
  std::vector<SimplexPoint> probes;
  probes.push_back(SimplexPoint::barycenter(n));
  for (int k = 0; k < n; ++k) probes.push_back(SimplexPoint::vertex(n, k));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      std::vector<double> p(n, 0.0);
      p[i] = p[j] = 0.5;
      probes.emplace_back(std::move(p));
    }
  return probes;
}

/// Largest dt keeping the per-step displacement std sqrt(lambda_max dt) at
/// or below 1% of the simplex edge length sqrt(2).
inline double default_dt(const DiffusionSpec& spec) {
  validate(spec);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(spec.base_correlation,
                                                     Eigen::EigenvaluesOnly);
  double s_max = 0.0;
  for (const auto& probe : standard_probes(spec.n()))
    s_max = std::max(s_max, spec.scale_at(probe.coords()));
  const double lambda = eig.eigenvalues().maxCoeff() * s_max / spec.tau;
  if (!(lambda > 0.0)) throw SpecError("diffusion vanishes; no step size can be chosen");
  const double edge_fraction = 0.01 * std::sqrt(2.0);
  return edge_fraction * edge_fraction / lambda;
}

struct RegimeReport {
  bool non_directional = false;
  bool isotropic = false;
  bool homogeneous = false;
  double max_drift_norm = 0.0;
  double max_eigen_spread = 0.0;     // (lambda_max - lambda_min) / lambda_max
  double max_relative_variation = 0.0;  // of C across probes
};

inline RegimeReport classify_spec(const DiffusionSpec& spec,
                                  std::span<const SimplexPoint> probes) {
  if (probes.empty()) throw DomainError("classify_spec needs at least one probe point");
  RegimeReport r;
  Eigen::MatrixXd reference;
  for (const auto& probe : probes) {
    const Eigen::VectorXd xi = to_cartesian(spec.chart, probe);
    const Eigen::MatrixXd c = spec.correlation_at(xi);
    r.max_drift_norm = std::max(r.max_drift_norm, spec.drift_at(xi).norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c, Eigen::EigenvaluesOnly);
    const double hi = eig.eigenvalues().maxCoeff();
    const double lo = eig.eigenvalues().minCoeff();
    r.max_eigen_spread = std::max(r.max_eigen_spread, hi > 0.0 ? (hi - lo) / hi : 0.0);
    if (reference.size() == 0) {
      reference = c;
    } else {
      const double norm = std::max(reference.norm(), 1e-300);
      r.max_relative_variation = std::max(r.max_relative_variation, (c - reference).norm() / norm);
    }
  }
  r.non_directional = r.max_drift_norm <= 1e-12;
  r.isotropic = r.max_eigen_spread < 1e-9;
  r.homogeneous = r.max_relative_variation < 1e-9;
  return r;
}

struct DescentEvent {
  double time = 0.0;
  int index = -1;
};

struct TrajectoryRecord {
  int absorbed_vertex = -1;
  double hitting_time = 0.0;
  std::vector<DescentEvent> descent_events;
  std::int64_t steps_taken = 0;
  bool accelerated = false;  // stopped early near a vertex
};

struct StepOutcome {
  SimplexPoint new_point;
  std::vector<double> dp;   // the Gaussian increment, before any face clamp
  std::vector<int> crossed; // faces frozen during this step, in order
};

class NonTerminationError : public Error {
 public:
  NonTerminationError(const std::string& what, TrajectoryRecord partial)
      : Error(what), partial_(std::move(partial)) {}
  const TrajectoryRecord& partial() const noexcept { return partial_; }

 private:
  TrajectoryRecord partial_;
};

struct WalkOptions {
  /// Stop once some coordinate exceeds 1 - vertex_epsilon (flagged in the record).
  bool terminate_near_vertex = false;
  double vertex_epsilon = 1e-6;
};

/// Step-by-step driver of one trajectory.
///
/// Each step draws dxi ~ N(mu dt, C dt) in the chart of the active face and
/// maps it to dp, which leaves frozen coordinates untouched and sums to zero.
/// If active coordinates end the step at or below zero the most negative one
/// (lowest index on ties) is frozen and the survivors rescaled; this repeats
/// until the point is back in the closed simplex.
class Walker {
 public:
  Walker(const DiffusionSpec& spec, SimplexPoint start, double dt, WalkOptions options = {})
      : spec_(&spec), point_(std::move(start)), dt_(dt), sqrt_dt_(std::sqrt(dt)),
        options_(options) {
    validate(spec);
    if (point_.dim() != spec.n()) {
      throw DimensionMismatchError("start point has " + std::to_string(point_.dim()) +
                                   " coordinates, spec has n=" + std::to_string(spec.n()));
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
    const int n = spec.n();
    dp_.assign(n, 0.0);
    z_.assign(n, 0.0);
    grad_.assign(n, 0.0);
    if (point_.is_vertex()) {
      record_.absorbed_vertex = point_.vertex_index();
      return;
    }
    rebuild_kernel();
    check_accelerator();
  }

  bool done() const noexcept { return record_.absorbed_vertex >= 0; }
  const SimplexPoint& point() const noexcept { return point_; }
  const TrajectoryRecord& record() const noexcept { return record_; }
  std::span<const double> last_increment() const noexcept { return dp_; }
  double dt() const noexcept { return dt_; }

  /// One Euler-Maruyama step. Returns the number of faces frozen.
  int advance(RandomStream& rng) {
    if (done()) return 0;
    const int n = point_.dim();
    for (int j = 0; j < axes_; ++j) z_[j] = rng.normal();

    double noise_scale = sqrt_dt_;
    const double* drift = drift_p_.data();
    if (spec_->modulation) {
      const double s = spec_->modulation->value(point_.p_);
      if (!(s >= 0.0)) throw SpecError("correlation scale field is negative");
      noise_scale *= std::sqrt(s);
      if (spec_->convention == NoiseConvention::kFokkerPlanck) {
        spec_->modulation->gradient(point_.p_, grad_);
        for (int k = 0; k < n; ++k) {
          double acc = drift_p_[k];
          const double* row = &gradient_map_[static_cast<std::size_t>(k) * n];
          for (int q = 0; q < n; ++q) acc += row[q] * grad_[q];
          total_drift_[k] = acc;
        }
        drift = total_drift_.data();
      }
    }

    const FaceMask active = point_.active();
    for (int k = 0; k < n; ++k) {
      if (!mask_has(active, k)) {
        dp_[k] = 0.0;
        continue;
      }
      const double* g = &gain_[static_cast<std::size_t>(k) * axes_];
      double noise = 0.0;
      for (int j = 0; j < axes_; ++j) noise += g[j] * z_[j];
      dp_[k] = drift[k] * dt_ + noise_scale * noise;
    }
    for (int k = 0; k < n; ++k) point_.p_[k] += dp_[k];
    ++record_.steps_taken;
    record_.hitting_time = static_cast<double>(record_.steps_taken) * dt_;

    int frozen = 0;
    for (;;) {
      int worst = -1;
      double worst_value = 0.0;
      for (int k = 0; k < n; ++k) {
        if (mask_has(point_.frozen_, k)) continue;
        if (point_.p_[k] <= 0.0 && (worst < 0 || point_.p_[k] < worst_value)) {
          worst = k;
          worst_value = point_.p_[k];
        }
      }
      if (worst < 0) break;
      freeze(worst);
      record_.descent_events.push_back({record_.hitting_time, worst});
      ++frozen;
      if (point_.is_vertex()) break;
    }
    if (point_.is_vertex()) {
      record_.absorbed_vertex = point_.vertex_index();
    } else {
      if (frozen > 0) rebuild_kernel();
      check_accelerator();
    }
    return frozen;
  }

  /// Single step returning a full StepOutcome (allocates; not for hot loops).
  StepOutcome step(RandomStream& rng) {
    const std::size_t before = record_.descent_events.size();
    advance(rng);
    std::vector<int> crossed;
    for (std::size_t i = before; i < record_.descent_events.size(); ++i)
      crossed.push_back(record_.descent_events[i].index);
    return {point_, dp_, std::move(crossed)};
  }

 private:
  // Like descend_to_face, but other survivors may still be negative; the
  // caller keeps freezing until none are.
  void freeze(int k) {
    auto& p = point_.p_;
    point_.frozen_ |= FaceMask{1} << k;
    p[k] = 0.0;
    double survivors = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (!mask_has(point_.frozen_, static_cast<int>(j))) survivors += p[j];
    if (!(survivors > 0.0)) {
      throw DegenerateStateError("no probability mass left after freezing coordinate " +
                                 std::to_string(k));
    }
    for (std::size_t j = 0; j < p.size(); ++j)
      if (!mask_has(point_.frozen_, static_cast<int>(j))) p[j] /= survivors;
    if (point_.is_vertex()) p[point_.vertex_index()] = 1.0;
  }

  void check_accelerator() {
    if (!options_.terminate_near_vertex) return;
    const auto& p = point_.p_;
    const auto it = std::max_element(p.begin(), p.end());
    if (*it > 1.0 - options_.vertex_epsilon) {
      record_.absorbed_vertex = static_cast<int>(it - p.begin());
      record_.accelerated = true;
    }
  }

  /// Restricts C0 and nu to the current face and factorises the covariance.
  void rebuild_kernel() {
    const int n = point_.dim();
    const SimplexChart face = make_face_chart(n, point_.active());
    axes_ = face.axes();
    const Eigen::MatrixXd& fb = face.basis();  // axes x n
    const Eigen::MatrixXd transfer = fb * spec_->chart.basis().transpose();
    Eigen::MatrixXd c = transfer * spec_->base_correlation * transfer.transpose() / spec_->tau;
    c = 0.5 * (c + c.transpose());
    const Eigen::VectorXd nu = transfer * spec_->drift / spec_->tau;

    Eigen::MatrixXd factor;
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() == Eigen::Success) {
      factor = llt.matrixL();
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
      if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -1e-10) {
        throw SpecError("face covariance is not positive semidefinite");
      }
      factor = eig.eigenvectors() *
               eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
    const Eigen::MatrixXd gain = fb.transpose() * factor;  // n x axes
    gain_.assign(static_cast<std::size_t>(n) * axes_, 0.0);
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < axes_; ++j) gain_[static_cast<std::size_t>(k) * axes_ + j] = gain(k, j);

    const Eigen::VectorXd drift_p = fb.transpose() * nu;
    drift_p_.assign(drift_p.data(), drift_p.data() + n);
    total_drift_.assign(n, 0.0);

    // Divergence drift (1/2) C0_face grad_eta s, expressed as a map from the
    // p-gradient of s: grad_eta s = fb * grad_p s.
    const Eigen::MatrixXd gmap = 0.5 * fb.transpose() * c * fb;
    gradient_map_.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k)
      for (int q = 0; q < n; ++q) gradient_map_[static_cast<std::size_t>(k) * n + q] = gmap(k, q);
  }

  const DiffusionSpec* spec_;
  SimplexPoint point_;
  double dt_;
  double sqrt_dt_;
  WalkOptions options_;
  TrajectoryRecord record_;
  int axes_ = 0;
  std::vector<double> gain_, drift_p_, total_drift_, gradient_map_;
  std::vector<double> dp_, z_, grad_;
};

inline StepOutcome sample_step(const DiffusionSpec& spec, const SimplexPoint& pt, double dt,
                               RandomStream& rng) {
  if (pt.is_vertex()) {
    return {pt, std::vector<double>(pt.dim(), 0.0), {}};
  }
  Walker walker(spec, pt, dt);
  return walker.step(rng);
}

inline TrajectoryRecord run_trajectory(const DiffusionSpec& spec, const SimplexPoint& start,
                                       double dt, RandomStream& rng, std::int64_t max_steps,
                                       WalkOptions options = {}) {
  Walker walker(spec, start, dt, options);
  while (!walker.done()) {
    if (walker.record().steps_taken >= max_steps) {
      throw NonTerminationError("trajectory did not reach a vertex within " +
                                    std::to_string(max_steps) + " steps",
                                walker.record());
    }
    walker.advance(rng);
  }
  return walker.record();
}

}  // namespace reduction
