#pragma once

// Density matrices, decoherence projectors and the matrix side of reduction:
// the block-diagonal part rho0 = sum_j P_j rho P_j, the stochastic rescaling
// of blocks P_j -> (1 + eps_j) P_j, and the final collapse
// rho -> P_k rho P_k / Tr(P_k rho P_k).

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "reduction/diffusion.hpp"
#include "reduction/errors.hpp"
#include "reduction/random.hpp"
#include "reduction/simplex.hpp"

namespace reduction {

using ComplexMatrix = Eigen::MatrixXcd;

inline constexpr int kMaxHilbertDimension = 256;
inline constexpr double kProjectorTolerance = 1e-10;

inline ComplexMatrix hermitian_part(const ComplexMatrix& a) {
  return 0.5 * (a + a.adjoint());
}

/// Sum of absolute eigenvalues of a Hermitian matrix.
inline double trace_norm(const ComplexMatrix& a) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(hermitian_part(a), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().sum();
}

class DensityMatrix {
 public:
  explicit DensityMatrix(ComplexMatrix m) : m_(std::move(m)) {
    const auto dim = m_.rows();
    if (dim < 1 || dim > kMaxHilbertDimension || m_.cols() != dim) {
      throw DensityMatrixError("density matrix must be square with dimension in [1, 256]");
    }
    if ((m_ - m_.adjoint()).cwiseAbs().maxCoeff() > kAlgebraicTolerance) {
      throw DensityMatrixError("density matrix is not Hermitian");
    }
    const std::complex<double> tr = m_.trace();
    if (std::abs(tr.real() - 1.0) > kAlgebraicTolerance || std::abs(tr.imag()) > kAlgebraicTolerance) {
      throw DensityMatrixError("density matrix trace is " + std::to_string(tr.real()) +
                               ", expected 1");
    }
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(hermitian_part(m_), Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10) {
      throw DensityMatrixError("density matrix has a negative eigenvalue");
    }
  }

  /// Hermitises and divides by the trace before validating.
  static DensityMatrix normalized(const ComplexMatrix& m) {
    ComplexMatrix h = hermitian_part(m);
    const double tr = h.trace().real();
    if (!(tr > 0.0)) throw DensityMatrixError("cannot normalise a matrix with trace <= 0");
    return DensityMatrix(h / tr);
  }

  static DensityMatrix pure(const Eigen::VectorXcd& psi) {
    const double norm = psi.norm();
    if (!(norm > 0.0)) throw DensityMatrixError("zero state vector");
    const Eigen::VectorXcd v = psi / norm;
    return normalized(v * v.adjoint());
  }

  int dim() const noexcept { return static_cast<int>(m_.rows()); }
  const ComplexMatrix& matrix() const noexcept { return m_; }

 private:
  ComplexMatrix m_;
};

/// Mutually orthogonal projectors summing to the identity.
class ProjectorFamily {
 public:
  explicit ProjectorFamily(std::vector<ComplexMatrix> projectors)
      : projectors_(std::move(projectors)) {
    if (projectors_.size() < 2 || projectors_.size() > static_cast<std::size_t>(kMaxDimension)) {
      throw ProjectorAlgebraError("a projector family needs between 2 and 64 members");
    }
    const auto dim = projectors_.front().rows();
    ComplexMatrix sum = ComplexMatrix::Zero(dim, dim);
    for (std::size_t j = 0; j < projectors_.size(); ++j) {
      const ComplexMatrix& p = projectors_[j];
      if (p.rows() != dim || p.cols() != dim) {
        throw ProjectorAlgebraError("projector " + std::to_string(j) + " has the wrong shape");
      }
      if ((p - p.adjoint()).cwiseAbs().maxCoeff() > kProjectorTolerance) {
        throw ProjectorAlgebraError("P_" + std::to_string(j) + " is not Hermitian");
      }
      if ((p * p - p).cwiseAbs().maxCoeff() > kProjectorTolerance) {
        throw ProjectorAlgebraError("P_" + std::to_string(j) + "^2 != P_" + std::to_string(j));
      }
      for (std::size_t k = 0; k < j; ++k) {
        if ((p * projectors_[k]).cwiseAbs().maxCoeff() > kProjectorTolerance) {
          throw ProjectorAlgebraError("P_" + std::to_string(j) + " P_" + std::to_string(k) +
                                      " != 0");
        }
      }
      sum += p;
    }
    if ((sum - ComplexMatrix::Identity(dim, dim)).cwiseAbs().maxCoeff() > kProjectorTolerance) {
      throw ProjectorAlgebraError("sum_j P_j != identity");
    }
  }

  /// Coordinate projectors onto consecutive blocks of the given sizes.
  static ProjectorFamily blocks(const std::vector<int>& sizes) {
    int dim = 0;
    for (int s : sizes) {
      if (s < 1) throw ProjectorAlgebraError("block sizes must be positive");
      dim += s;
    }
    std::vector<ComplexMatrix> ps;
    int offset = 0;
    for (int s : sizes) {
      ComplexMatrix p = ComplexMatrix::Zero(dim, dim);
      for (int i = 0; i < s; ++i) p(offset + i, offset + i) = 1.0;
      ps.push_back(std::move(p));
      offset += s;
    }
    return ProjectorFamily(std::move(ps));
  }

  /// The family U P_j U^dagger.
  ProjectorFamily rotated(const ComplexMatrix& unitary) const {
    std::vector<ComplexMatrix> ps;
    for (const auto& p : projectors_) ps.push_back(hermitian_part(unitary * p * unitary.adjoint()));
    return ProjectorFamily(std::move(ps));
  }

  int dim() const noexcept { return static_cast<int>(projectors_.front().rows()); }
  int size() const noexcept { return static_cast<int>(projectors_.size()); }
  const ComplexMatrix& operator[](int j) const { return projectors_.at(j); }
  const std::vector<ComplexMatrix>& projectors() const noexcept { return projectors_; }

 private:
  std::vector<ComplexMatrix> projectors_;
};

struct Decoherence {
  DensityMatrix rho0;
  ComplexMatrix rho1;
  double rho1_trace_norm = 0.0;
};

inline void check_compatible(const DensityMatrix& rho, const ProjectorFamily& family) {
  if (rho.dim() != family.dim()) {
    throw DimensionMismatchError("density matrix has dimension " + std::to_string(rho.dim()) +
                                 ", projectors act on " + std::to_string(family.dim()));
  }
}

inline Decoherence decohere(const DensityMatrix& rho, const ProjectorFamily& family) {
  check_compatible(rho, family);
  ComplexMatrix rho0 = ComplexMatrix::Zero(rho.dim(), rho.dim());
  for (const auto& p : family.projectors()) rho0 += p * rho.matrix() * p;
  rho0 = hermitian_part(rho0);
  ComplexMatrix rho1 = rho.matrix() - rho0;
  const double norm = trace_norm(rho1);
  return {DensityMatrix(std::move(rho0)), std::move(rho1), norm};
}

namespace detail {

/// Block probabilities Tr(P_j rho P_j); |p_j| <= 1e-14 counts as zero.
inline std::vector<double> block_traces(const ComplexMatrix& rho, const ProjectorFamily& family) {
  std::vector<double> p(family.size());
  double sum = 0.0;
  for (int j = 0; j < family.size(); ++j) {
    const double t = (family[j] * rho * family[j]).trace().real();
    if (t < -1e-10) {
      throw NumericalError("block " + std::to_string(j) + " has negative trace " +
                           std::to_string(t));
    }
    p[j] = t <= 1e-14 ? 0.0 : t;
    sum += p[j];
  }
  if (!(sum > 0.0)) throw NumericalError("all block traces vanish");
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace detail

/// A density matrix viewed through a projector family: blocks rho_j = P_j rho P_j
/// and their weights p_j = Tr(rho_j).
class ReductionState {
 public:
  ReductionState(DensityMatrix rho, ProjectorFamily family)
      : ReductionState(std::move(rho), std::move(family), 0) {}

  const DensityMatrix& rho() const noexcept { return rho_; }
  const ProjectorFamily& family() const noexcept { return family_; }
  const std::vector<ComplexMatrix>& components() const noexcept { return components_; }
  const SimplexPoint& probs() const noexcept { return probs_; }
  int size() const noexcept { return family_.size(); }

 private:
  friend ReductionState rescale_blocks(const ReductionState&, const std::vector<double>&);

  ReductionState(DensityMatrix rho, ProjectorFamily family, FaceMask forced_zero)
      : rho_(std::move(rho)), family_(std::move(family)), probs_(init_probs(forced_zero)) {
    check_compatible(rho_, family_);
    for (const auto& p : family_.projectors()) components_.push_back(p * rho_.matrix() * p);
  }

  SimplexPoint init_probs(FaceMask forced_zero) const {
    check_compatible(rho_, family_);
    std::vector<double> p = detail::block_traces(rho_.matrix(), family_);
    if (forced_zero != 0) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (mask_has(forced_zero, static_cast<int>(j))) p[j] = 0.0;
        sum += p[j];
      }
      for (double& v : p) v /= sum;
    }
    return SimplexPoint(std::move(p));
  }

  DensityMatrix rho_;
  ProjectorFamily family_;
  SimplexPoint probs_;
  std::vector<ComplexMatrix> components_;
};

/// rho -> K rho K^dagger / Tr with K = sum_j factor_j P_j. Blocks with a zero
/// factor are annihilated and stay frozen at probability zero.
inline ReductionState rescale_blocks(const ReductionState& state,
                                     const std::vector<double>& factors) {
  const auto& fam = state.family();
  const int dim = fam.dim();
  ComplexMatrix k = ComplexMatrix::Zero(dim, dim);
  FaceMask zero = state.probs().frozen();
  for (int j = 0; j < fam.size(); ++j) {
    if (factors[j] == 0.0) {
      zero |= FaceMask{1} << j;
      continue;
    }
    k += factors[j] * fam[j];
  }
  const ComplexMatrix next = k * state.rho().matrix() * k.adjoint();
  return ReductionState(DensityMatrix::normalized(next), fam, zero);
}

inline SimplexPoint probabilities(const ReductionState& state) {
  return state.probs();
}

enum class IncrementRule {
  /// eps_j = dp_j / (2 p_j): first order in dp.
  kFirstOrder,
  /// (1 + eps_j)^2 = (p_j + dp_j) / p_j: the new weights equal p + dp exactly.
  kExact,
};

/// Rescales each block by (1 + eps_j)^2 and renormalises. A block whose
/// probability is driven exactly to zero (p_j + dp_j == 0) is annihilated.
inline ReductionState apply_reduction_increment(const ReductionState& state,
                                                const std::vector<double>& dp,
                                                IncrementRule rule = IncrementRule::kFirstOrder) {
  const int n = state.size();
  if (static_cast<int>(dp.size()) != n) {
    throw DimensionMismatchError("increment has " + std::to_string(dp.size()) +
                                 " entries, state has " + std::to_string(n) + " blocks");
  }
  double total = 0.0;
  for (double d : dp) total += d;
  if (std::abs(total) > kAlgebraicTolerance) {
    throw InvalidIncrementError("increments sum to " + std::to_string(total) + ", expected 0");
  }
  const SimplexPoint& p = state.probs();
  std::vector<double> factors(n, 0.0);
  for (int j = 0; j < n; ++j) {
    const double next = p[j] + dp[j];
    if (p[j] == 0.0) {
      if (dp[j] != 0.0) {
        throw InvalidIncrementError("block " + std::to_string(j) +
                                    " is absorbed and cannot receive an increment");
      }
      continue;
    }
    if (next < -kAlgebraicTolerance) {
      throw InvalidIncrementError("p_" + std::to_string(j) + " + dp_" + std::to_string(j) +
                                  " = " + std::to_string(next) + " < 0");
    }
    if (next <= 0.0) continue;  // annihilated
    factors[j] = rule == IncrementRule::kFirstOrder ? 1.0 + dp[j] / (2.0 * p[j])
                                                    : std::sqrt(next / p[j]);
  }
  return rescale_blocks(state, factors);
}

inline DensityMatrix collapse(const ReductionState& state, int k) {
  if (k < 0 || k >= state.size()) throw DomainError("collapse index out of range");
  if (state.probs()[k] == 0.0) {
    throw ZeroProbabilityCollapseError("block " + std::to_string(k) + " has probability zero");
  }
  return DensityMatrix::normalized(state.components()[k]);
}

struct EpisodeOptions {
  double decoherence_threshold = 1e-6;
  WalkOptions walk;
};

struct EpisodeResult {
  TrajectoryRecord record;
  DensityMatrix final_rho;
};

/// Runs the walk on the block probabilities and carries the matrix along.
///
/// Each step's increment is applied with the exact rule, so the block weights
/// track the walker exactly. Since the P_j are orthogonal, successive block
/// rescalings compose to a single K = sum_j F_j P_j with F_j the product of
/// the per-step factors; the matrix is formed once from K at the end.
inline EpisodeResult run_reduction_episode(const ReductionState& state, const DiffusionSpec& spec,
                                           double dt, RandomStream& rng, std::int64_t max_steps,
                                           EpisodeOptions options = {}) {
  if (spec.n() != state.size()) {
    throw DimensionMismatchError("spec has n=" + std::to_string(spec.n()) + " but the family has " +
                                 std::to_string(state.size()) + " projectors");
  }
  const Decoherence dec = decohere(state.rho(), state.family());
  if (dec.rho1_trace_norm >= options.decoherence_threshold) {
    throw NotDecoheredError("Tr|rho1| = " + std::to_string(dec.rho1_trace_norm) +
                            " exceeds the decoherence threshold");
  }
  const int n = state.size();
  Walker walker(spec, state.probs(), dt, options.walk);
  std::vector<double> cumulative(n, 1.0);
  std::vector<double> before = state.probs().to_vector();
  while (!walker.done()) {
    if (walker.record().steps_taken >= max_steps) {
      throw NonTerminationError("episode did not reach a vertex within " +
                                    std::to_string(max_steps) + " steps",
                                walker.record());
    }
    walker.advance(rng);
    const auto after = walker.point().coords();
    for (int j = 0; j < n; ++j) {
      if (before[j] == 0.0) continue;
      cumulative[j] = after[j] <= 0.0 ? 0.0 : cumulative[j] * std::sqrt(after[j] / before[j]);
      before[j] = after[j];
    }
  }
  // After an accelerated stop the other blocks still carry weight; the
  // collapse finishes the reduction.
  const ReductionState final_state = rescale_blocks(state, cumulative);
  return {walker.record(), collapse(final_state, walker.record().absorbed_vertex)};
}

}  // namespace reduction
