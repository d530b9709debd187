#pragma once

// Geometry of the standard probability simplex: barycentric points, orthonormal
// charts of the hyperplane sum(p) = 1, and descent onto faces.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reduction/errors.hpp"

namespace reduction {

inline constexpr int kMaxDimension = 64;
inline constexpr double kAlgebraicTolerance = 1e-12;
inline constexpr double kMembershipTolerance = 1e-9;
/// Coordinates at or below this value may be frozen onto a face.
inline constexpr double kCrossingTolerance = kMembershipTolerance;

/// Bit k set means coordinate k is frozen at exactly zero.
using FaceMask = std::uint64_t;

inline FaceMask full_mask(int n) {
  return n >= 64 ? ~FaceMask{0} : ((FaceMask{1} << n) - 1);
}

inline bool mask_has(FaceMask m, int k) { return (m >> k) & 1U; }

inline int mask_count(FaceMask m) { return std::popcount(m); }

inline void check_dimension(int n) {
  if (n < 2 || n > kMaxDimension) {
    throw InvalidDimensionError("simplex dimension must lie in [2, 64], got " +
                                std::to_string(n));
  }
}

/// A probability vector together with the set of coordinates absorbed at 0.
class SimplexPoint {
 public:
  /// Validates `p`; coordinates that are exactly zero start out frozen.
  explicit SimplexPoint(std::vector<double> p) : p_(std::move(p)) {
    check_dimension(static_cast<int>(p_.size()));
    double sum = 0.0;
    for (std::size_t k = 0; k < p_.size(); ++k) {
      if (!(p_[k] >= 0.0) || !std::isfinite(p_[k])) {
        throw OutOfSimplexError("coordinate " + std::to_string(k) +
                                    " is negative or not finite",
                                p_);
      }
      if (p_[k] == 0.0) frozen_ |= FaceMask{1} << k;
      sum += p_[k];
    }
    if (std::abs(sum - 1.0) > kAlgebraicTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "coordinates sum to " << sum << ", expected 1";
      throw OutOfSimplexError(os.str(), p_);
    }
  }

  static SimplexPoint vertex(int n, int k) {
    check_dimension(n);
    std::vector<double> p(n, 0.0);
    p.at(k) = 1.0;
    return SimplexPoint(std::move(p));
  }

  static SimplexPoint barycenter(int n) {
    check_dimension(n);
    return SimplexPoint(std::vector<double>(n, 1.0 / n));
  }

  int dim() const noexcept { return static_cast<int>(p_.size()); }
  std::span<const double> coords() const noexcept { return p_; }
  double operator[](int k) const { return p_[k]; }
  FaceMask frozen() const noexcept { return frozen_; }
  FaceMask active() const noexcept { return full_mask(dim()) & ~frozen_; }
  bool is_frozen(int k) const { return mask_has(frozen_, k); }
  int active_count() const noexcept { return dim() - mask_count(frozen_); }
  bool is_vertex() const noexcept { return active_count() == 1; }

  /// Index of the single surviving coordinate; only meaningful on a vertex.
  int vertex_index() const {
    return std::countr_zero(active());
  }

  std::vector<double> to_vector() const { return p_; }

 private:
  friend SimplexPoint descend_to_face(std::vector<double>, FaceMask, int);
  friend class Walker;
  SimplexPoint() = default;

  std::vector<double> p_;
  FaceMask frozen_ = 0;
};

/// Orthonormal coordinates on the affine hull of an active face.
///
/// `basis` has one row per chart axis and one column per barycentric
/// coordinate. Columns of inactive coordinates are zero, and every row is
/// orthogonal to the all-ones vector, so xi = basis * p and
/// p = basis^T xi + 1_A / m for a face with m active coordinates.
class SimplexChart {
 public:
  SimplexChart(Eigen::MatrixXd basis, FaceMask active)
      : basis_(std::move(basis)), active_(active) {
    const int n = static_cast<int>(basis_.cols());
    check_dimension(n);
    const int m = mask_count(active_);
    if (basis_.rows() != m - 1) {
      throw DimensionMismatchError("chart over " + std::to_string(m) +
                                   " active coordinates needs " +
                                   std::to_string(m - 1) + " rows");
    }
    const Eigen::MatrixXd gram = basis_ * basis_.transpose();
    if (m > 1 && (gram - Eigen::MatrixXd::Identity(m - 1, m - 1)).cwiseAbs().maxCoeff() >
                     kAlgebraicTolerance) {
      throw InvalidDimensionError("chart rows are not orthonormal");
    }
    for (int r = 0; r < m - 1; ++r) {
      double row_sum = 0.0;
      for (int k = 0; k < n; ++k) {
        if (!mask_has(active_, k) && basis_(r, k) != 0.0) {
          throw InvalidDimensionError("chart row touches an inactive coordinate");
        }
        row_sum += basis_(r, k);
      }
      if (std::abs(row_sum) > kAlgebraicTolerance * std::sqrt(double(n))) {
        throw InvalidDimensionError("chart row is not orthogonal to (1,...,1)");
      }
    }
  }

  int n() const noexcept { return static_cast<int>(basis_.cols()); }
  /// Number of chart axes (active coordinates minus one).
  int axes() const noexcept { return static_cast<int>(basis_.rows()); }
  FaceMask active() const noexcept { return active_; }
  int active_count() const noexcept { return mask_count(active_); }
  const Eigen::MatrixXd& basis() const noexcept { return basis_; }

 private:
  Eigen::MatrixXd basis_;
  FaceMask active_;
};

/// Deterministic chart for the face spanned by the vertices in `active`:
/// Gram-Schmidt on e_a1 - e_a2, e_a2 - e_a3, ... over the active indices.
inline SimplexChart make_face_chart(int n, FaceMask active) {
  check_dimension(n);
  active &= full_mask(n);
  const int m = mask_count(active);
  if (m < 1) throw InvalidDimensionError("face must keep at least one vertex");
  std::vector<int> idx;
  for (int k = 0; k < n; ++k)
    if (mask_has(active, k)) idx.push_back(k);

  Eigen::MatrixXd basis(m - 1, n);
  basis.setZero();
  for (int r = 0; r < m - 1; ++r) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    v(idx[r]) = 1.0;
    v(idx[r + 1]) = -1.0;
    for (int q = 0; q < r; ++q) v -= basis.row(q).dot(v) * basis.row(q).transpose();
    basis.row(r) = v.normalized().transpose();
  }
  return SimplexChart(std::move(basis), active);
}

inline SimplexChart make_chart(int n) {
  check_dimension(n);
  return make_face_chart(n, full_mask(n));
}

inline Eigen::VectorXd to_cartesian(const SimplexChart& chart, const SimplexPoint& pt) {
  if (chart.n() != pt.dim()) {
    throw DimensionMismatchError("chart has n=" + std::to_string(chart.n()) +
                                 " but point has " + std::to_string(pt.dim()) +
                                 " coordinates");
  }
  const Eigen::Map<const Eigen::VectorXd> p(pt.coords().data(), pt.dim());
  return chart.basis() * p;
}

/// Inverse of to_cartesian on the chart's face. Coordinates in the band
/// [-1e-9, 0) are clamped to zero and the result renormalised.
inline SimplexPoint from_cartesian(const SimplexChart& chart, const Eigen::VectorXd& xi) {
  if (xi.size() != chart.axes()) {
    throw DimensionMismatchError("expected " + std::to_string(chart.axes()) +
                                 " Cartesian coordinates, got " +
                                 std::to_string(xi.size()));
  }
  const int n = chart.n();
  const double share = 1.0 / chart.active_count();
  Eigen::VectorXd p = chart.basis().transpose() * xi;
  std::vector<double> out(n, 0.0);
  bool clamped = false;
  for (int k = 0; k < n; ++k) {
    if (!mask_has(chart.active(), k)) continue;
    out[k] = p(k) + share;
  }
  for (int k = 0; k < n; ++k) {
    if (out[k] < -kMembershipTolerance) {
      throw OutOfSimplexError("preimage leaves the simplex at coordinate " +
                                  std::to_string(k),
                              out);
    }
    if (out[k] < 0.0) {
      out[k] = 0.0;
      clamped = true;
    }
  }
  if (clamped) {
    const double s = std::accumulate(out.begin(), out.end(), 0.0);
    for (double& v : out) v /= s;
  }
  return SimplexPoint(std::move(out));
}

/// Freezes coordinate k of a raw coordinate vector (for instance the end of
/// a step that overshot the face, so p_k may be negative) and rescales the
/// other unfrozen coordinates by their sum. `frozen` lists coordinates that
/// are already absorbed. Every survivor must end up non-negative.
inline SimplexPoint descend_to_face(std::vector<double> raw, FaceMask frozen, int k) {
  const int n = static_cast<int>(raw.size());
  check_dimension(n);
  if (k < 0 || k >= n) throw FaceError("face index out of range");
  if (mask_has(frozen, k)) {
    throw FaceError("coordinate " + std::to_string(k) + " is already frozen");
  }
  if (!(raw[k] <= kCrossingTolerance)) {
    throw FaceError("coordinate " + std::to_string(k) +
                    " is not on its face (p_k = " + std::to_string(raw[k]) + ")");
  }
  SimplexPoint out;
  out.frozen_ = frozen | (FaceMask{1} << k);
  out.p_ = std::move(raw);
  double survivors = 0.0;
  for (int j = 0; j < n; ++j) {
    if (mask_has(out.frozen_, j)) {
      out.p_[j] = 0.0;
    } else {
      survivors += out.p_[j];
    }
  }
  if (!(survivors > 0.0)) {
    throw DegenerateStateError("no probability mass left after freezing coordinate " +
                               std::to_string(k));
  }
  for (int j = 0; j < n; ++j) {
    if (mask_has(out.frozen_, j)) continue;
    out.p_[j] /= survivors;
    if (out.p_[j] < 0.0) {
      throw OutOfSimplexError("coordinate " + std::to_string(j) +
                                  " is still negative after the descent",
                              out.p_);
    }
  }
  if (out.active_count() == 1) out.p_[out.vertex_index()] = 1.0;
  return out;
}

/// Freezes coordinate k at zero and rescales the survivors to sum to one.
inline SimplexPoint descend_to_face(const SimplexPoint& pt, int k) {
  return descend_to_face(pt.to_vector(), pt.frozen(), k);
}

}  // namespace reduction
