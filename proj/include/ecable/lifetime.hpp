#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <limits>
#include <span>
#include <vector>

#include "ecable/error.hpp"
#include "ecable/transient.hpp"

namespace ecable {

struct LifetimeResult {
  double expected = std::numeric_limits<double>::infinity();
  std::vector<double> times;
  std::vector<double> pdf;
  double death_mass = 0.0;  // trapezoid integral of pdf over the grid
};

namespace detail {

inline void check_distribution(const MarkovSystem& sys, const RowVector& pi0) {
  if (pi0.size() != static_cast<Eigen::Index>(sys.size())) {
    fail(ErrorKind::invalid_argument, "initial distribution size does not match the system");
  }
  if ((pi0.array() < 0.0).any() || !pi0.allFinite() || pi0.sum() > 1.0 + 1e-9) {
    fail(ErrorKind::invalid_argument, "initial distribution must be non-negative with mass <= 1");
  }
}

/// States reachable from the support of pi0 through positive jump-chain entries.
inline std::vector<bool> reachable_from(const MarkovSystem& sys, const RowVector& pi0) {
  const auto n = static_cast<Eigen::Index>(sys.size());
  std::vector<bool> seen(sys.size(), false);
  std::deque<Eigen::Index> queue;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pi0(i) > 0.0) {
      seen[static_cast<std::size_t>(i)] = true;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const Eigen::Index i = queue.front();
    queue.pop_front();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (sys.jump()(i, j) > 0.0 && !seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = true;
        queue.push_back(j);
      }
    }
  }
  return seen;
}

/// States from which DEAD can be reached.
inline std::vector<bool> reaches_death(const MarkovSystem& sys) {
  const auto n = static_cast<Eigen::Index>(sys.size());
  std::vector<bool> ok(sys.size(), false);
  std::deque<Eigen::Index> queue;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sys.death_rates()(i) > 0.0) {
      ok[static_cast<std::size_t>(i)] = true;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const Eigen::Index j = queue.front();
    queue.pop_front();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (sys.jump()(i, j) > 0.0 && !ok[static_cast<std::size_t>(i)]) {
        ok[static_cast<std::size_t>(i)] = true;
        queue.push_back(i);
      }
    }
  }
  return ok;
}

}  // namespace detail

/// E[L] = pi0' (I - T)^{-1} R^{-1} 1, solved as (I - T)' y = pi0 on the states reachable
/// from pi0. Returns +inf when some reachable state cannot reach DEAD.
inline double expected_lifetime(const MarkovSystem& sys, const RowVector& pi0) {
  detail::check_distribution(sys, pi0);
  const auto reach = detail::reachable_from(sys, pi0);
  const auto dies = detail::reaches_death(sys);
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    if (!reach[i]) continue;
    if (!dies[i]) return std::numeric_limits<double>::infinity();
    idx.push_back(static_cast<Eigen::Index>(i));
  }
  if (idx.empty()) return 0.0;
  const auto k = static_cast<Eigen::Index>(idx.size());
  Matrix lhs(k, k);
  Vector rhs(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    rhs(a) = pi0(idx[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < k; ++b) {
      // transpose of (I - T) restricted to the reachable set
      lhs(a, b) = (a == b ? 1.0 : 0.0) - sys.jump()(idx[static_cast<std::size_t>(b)], idx[static_cast<std::size_t>(a)]);
    }
  }
  const Vector y = lhs.partialPivLu().solve(rhs);
  if (!y.allFinite()) fail(ErrorKind::numerical, "lifetime system is numerically singular");
  double e = 0.0;
  for (Eigen::Index a = 0; a < k; ++a) e += y(a) / sys.total_rates()(idx[static_cast<std::size_t>(a)]);
  return e;
}

/// f_L(t) = pi0' P_t d with d the per-state death rate, at every point of an increasing grid.
inline std::vector<double> lifetime_pdf(const MarkovSystem& sys, const RowVector& pi0,
                                        std::span<const double> grid, const StepOptions& opt = {}) {
  detail::check_distribution(sys, pi0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid[k] < 0.0 || (k > 0 && !(grid[k] > grid[k - 1]))) {
      fail(ErrorKind::invalid_argument, "lifetime grid must be non-negative and strictly increasing");
    }
  }
  const double delta = opt.delta.value_or(default_delta(sys, opt.safety));
  const SparseMatrix flow = sys.sparse_flow();
  std::vector<double> out;
  out.reserve(grid.size());
  RowVector cur = pi0;
  double t = 0.0;
  for (double g : grid) {
    cur = advance(cur, flow, sys.max_rate(), g - t, delta, opt.taylor_order);
    t = g;
    out.push_back(std::max(0.0, cur.dot(sys.death_rates())));
  }
  return out;
}

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::invalid_argument, "trapezoid needs equal-length inputs");
  double s = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) s += 0.5 * (x[k] - x[k - 1]) * (y[k] + y[k - 1]);
  return s;
}

inline std::vector<double> uniform_grid(double t_end, std::size_t points) {
  if (points < 2 || !(t_end > 0.0) || std::isinf(t_end)) {
    fail(ErrorKind::invalid_argument, "grid needs a finite positive end and at least two points");
  }
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k) {
    g[k] = t_end * static_cast<double>(k) / static_cast<double>(points - 1);
  }
  return g;
}

/// E[L] plus the pdf on `grid`, or on [0, 10 E[L]] with 10^4 points when grid is empty.
/// With infinite E[L] and no grid, only the expectation is filled in.
inline LifetimeResult analyze_lifetime(const MarkovSystem& sys, const RowVector& pi0,
                                       std::span<const double> grid = {},
                                       const StepOptions& opt = {}) {
  LifetimeResult r;
  r.expected = expected_lifetime(sys, pi0);
  if (grid.empty()) {
    if (std::isinf(r.expected) || r.expected <= 0.0) return r;
    r.times = uniform_grid(10.0 * r.expected, 10000);
  } else {
    r.times.assign(grid.begin(), grid.end());
  }
  r.pdf = lifetime_pdf(sys, pi0, r.times, opt);
  r.death_mass = trapezoid(r.times, r.pdf);
  return r;
}

}  // namespace ecable
