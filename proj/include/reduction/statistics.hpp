#pragma once

// Binomial and multinomial goodness-of-fit helpers for absorption counts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "reduction/errors.hpp"

namespace reduction::stats {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

inline double two_sided_z(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw DomainError("confidence must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * confidence);
}

/// Wilson score interval for k successes in m trials.
inline Interval wilson_interval(std::int64_t k, std::int64_t m, double confidence = 0.95) {
  if (m <= 0 || k < 0 || k > m) throw DomainError("wilson_interval needs 0 <= k <= m, m > 0");
  const double z = two_sided_z(confidence);
  const double n = static_cast<double>(m);
  const double p = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z / (1 + z2 / n) * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
  return {k == 0 ? 0.0 : std::max(0.0, centre - half), k == m ? 1.0 : std::min(1.0, centre + half)};
}

/// Standard error of a frequency estimate of probability p from m trials.
inline double binomial_se(double p, std::int64_t m) {
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(m));
}

struct ChiSquare {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  int categories = 0;  // after pooling
};

/// Pearson goodness of fit of counts against expected probabilities.
/// Categories with expected count below 5 are pooled together; a pool that is
/// still below 5 is merged into the smallest remaining category. Any count in
/// a category of zero expected probability gives p = 0.
inline ChiSquare chi_square_test(const std::vector<std::int64_t>& counts,
                                 const std::vector<double>& expected) {
  if (counts.size() != expected.size() || counts.empty()) {
    throw DomainError("chi-square: counts and expectation differ in length");
  }
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  if (total <= 0) throw DomainError("chi-square: no observations");

  // An outcome with zero expected probability refutes the expectation outright.
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (expected[k] == 0.0 && counts[k] > 0) {
      ChiSquare out;
      out.statistic = std::numeric_limits<double>::infinity();
      out.categories = static_cast<int>(counts.size());
      out.dof = out.categories - 1;
      out.p_value = 0.0;
      return out;
    }
  }

  struct Bin {
    double observed = 0.0;
    double expected = 0.0;
  };
  std::vector<Bin> bins;
  Bin pool;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double e = expected[k] * static_cast<double>(total);
    if (e < 5.0) {
      pool.observed += static_cast<double>(counts[k]);
      pool.expected += e;
    } else {
      bins.push_back({static_cast<double>(counts[k]), e});
    }
  }
  if (pool.expected > 0.0 || pool.observed > 0.0) {
    if (pool.expected >= 5.0 || bins.empty()) {
      bins.push_back(pool);
    } else {
      auto smallest = std::min_element(bins.begin(), bins.end(), [](const Bin& a, const Bin& b) {
        return a.expected < b.expected;
      });
      smallest->observed += pool.observed;
      smallest->expected += pool.expected;
    }
  }

  ChiSquare out;
  out.categories = static_cast<int>(bins.size());
  out.dof = out.categories - 1;
  for (const auto& b : bins) {
    if (b.expected <= 0.0) {
      if (b.observed > 0.0) out.statistic = std::numeric_limits<double>::infinity();
      continue;
    }
    const double d = b.observed - b.expected;
    out.statistic += d * d / b.expected;
  }
  if (out.dof <= 0) {
    out.p_value = std::isinf(out.statistic) ? 0.0 : 1.0;
  } else if (std::isinf(out.statistic)) {
    out.p_value = 0.0;
  } else {
    out.p_value = boost::math::cdf(
        boost::math::complement(boost::math::chi_squared(out.dof), out.statistic));
  }
  return out;
}

}  // namespace reduction::stats
