#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecable/error.hpp"
#include "ecable/kinetics.hpp"
#include "ecable/state_space.hpp"

namespace ecable {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Jump chain T, total rates R and flow matrix A = R(T - I) over the transient states.
/// DEAD is not a row or column; its inflow is the row deficit of T.
class MarkovSystem {
 public:
  /// `rates(i, j)` is the transition rate i -> j (diagonal ignored); `death(i)` the rate
  /// i -> DEAD.
  MarkovSystem(const Matrix& rates, const Vector& death) {
    const Eigen::Index n = rates.rows();
    if (rates.cols() != n || death.size() != n) {
      fail(ErrorKind::invalid_argument, "rate matrix and death vector sizes differ");
    }
    flow_ = rates;
    flow_.diagonal().setZero();
    if ((flow_.array() < 0.0).any() || (death.array() < 0.0).any() || !flow_.allFinite() ||
        !death.allFinite()) {
      fail(ErrorKind::invalid_argument, "transition rates must be finite and >= 0");
    }
    death_ = death;
    total_ = flow_.rowwise().sum() + death_;
    jump_ = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (total_(i) > 0.0) jump_.row(i) = flow_.row(i) / total_(i);
    }
    flow_.diagonal() = -total_;
    max_rate_ = n > 0 ? total_.maxCoeff() : 0.0;
  }

  std::size_t size() const { return static_cast<std::size_t>(total_.size()); }
  const Matrix& jump() const { return jump_; }
  const Vector& total_rates() const { return total_; }
  const Matrix& flow() const { return flow_; }
  /// Per-state death rate R_i (1 - sum_j T(i, j)).
  const Vector& death_rates() const { return death_; }
  double max_rate() const { return max_rate_; }

  SparseMatrix sparse_flow() const { return flow_.sparseView(); }

 private:
  Matrix jump_;
  Vector total_;
  Matrix flow_;
  Vector death_;
  double max_rate_ = 0.0;
};

inline MarkovSystem build_system(const IsolatedIndex& space, const RateModel& model,
                                 const ExternalState& ext) {
  const auto n = static_cast<Eigen::Index>(space.size());
  Matrix rates = Matrix::Zero(n, n);
  Vector death = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const CellState s = space.state(static_cast<std::size_t>(i));
    for_each_isolated_event(s, ext, model, [&](const RateEvent& e) {
      if (e.kind == EventKind::death) {
        death(i) += e.rate;
      } else {
        const CellState to = apply_isolated_event(e.kind, s);
        rates(i, static_cast<Eigen::Index>(space.index(to))) += e.rate;
      }
    });
  }
  return MarkovSystem(rates, death);
}

/// Dense system over a cable's joint space. The death of any cell ends the cable, so all
/// death flow goes to the single absorbing DEAD state.
inline MarkovSystem build_system(const CableIndex& space, const RateModel& model,
                                 std::span<const ExternalState> ext_per_cell) {
  space.require_dense();
  if (ext_per_cell.size() != static_cast<std::size_t>(space.cells())) {
    fail(ErrorKind::invalid_argument, "build_system needs one external state per cell");
  }
  const auto n = static_cast<Eigen::Index>(space.size());
  Matrix rates = Matrix::Zero(n, n);
  Vector death = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const CableState s = space.state(static_cast<std::uint64_t>(i));
    for_each_cable_event(space, s, ext_per_cell, model, [&](const RateEvent& e) {
      if (e.kind == EventKind::death) {
        death(i) += e.rate;
      } else {
        CableState to = s;
        apply_cable_event(e, to);
        rates(i, static_cast<Eigen::Index>(space.index(to))) += e.rate;
      }
    });
  }
  return MarkovSystem(rates, death);
}

// ---------------------------------------------------------------------------
// Stepping

/// Taylor order 0 means "sum terms until they drop below double precision".
inline constexpr int kAdaptiveOrder = 0;

struct StepOptions {
  std::optional<double> delta;  // fixed step; otherwise safety / max rate
  double safety = 0.1;
  int taylor_order = kAdaptiveOrder;
};

inline double default_delta(const MarkovSystem& sys, double safety = 0.1) {
  if (!(safety > 0.0 && safety < 1.0)) fail(ErrorKind::invalid_argument, "safety must lie in (0, 1)");
  return sys.max_rate() > 0.0 ? safety / sys.max_rate() : std::numeric_limits<double>::infinity();
}

/// Refuses steps that would make I + delta*A negative (delta >= 1 / max_i R_i).
inline void check_delta(const MarkovSystem& sys, double delta) {
  if (!(delta > 0.0)) fail(ErrorKind::numerical, "time step must be positive");
  if (delta * sys.max_rate() >= 1.0) {
    fail(ErrorKind::numerical, "time step " + std::to_string(delta) +
                                   " is not below 1/max rate = " +
                                   std::to_string(1.0 / sys.max_rate()));
  }
}

/// Number of steps of size delta covering t: ceil(t / delta), ignoring round-off just
/// above an integer.
inline std::uint64_t step_count(double t, double delta) {
  if (t <= 0.0) return 0;
  if (std::isinf(delta)) return 1;
  const double q = t / delta;
  const double r = std::round(q);
  if (std::abs(q - r) <= 1e-9 * std::max(1.0, q)) return static_cast<std::uint64_t>(std::max(r, 1.0));
  return static_cast<std::uint64_t>(std::ceil(q));
}

/// P_delta. Order 1 is the first-order form I + delta*A; higher orders (or adaptive)
/// truncate the Taylor series of exp(delta*A).
inline Matrix step_matrix(const MarkovSystem& sys, double delta, int taylor_order = 1) {
  const auto n = static_cast<Eigen::Index>(sys.size());
  if (sys.max_rate() == 0.0) return Matrix::Identity(n, n);
  check_delta(sys, delta);
  const Matrix scaled = delta * sys.flow();
  Matrix sum = Matrix::Identity(n, n) + scaled;
  if (taylor_order == 1) return sum;
  const int max_order = taylor_order == kAdaptiveOrder ? 60 : taylor_order;
  Matrix term = scaled;
  for (int k = 2; k <= max_order; ++k) {
    term = (term * scaled) / static_cast<double>(k);
    sum += term;
    if (taylor_order == kAdaptiveOrder && term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  return sum;
}

inline Matrix matrix_power(Matrix base, std::uint64_t exponent) {
  Matrix result = Matrix::Identity(base.rows(), base.cols());
  bool first = true;
  while (exponent > 0) {
    if (exponent & 1U) {
      result = first ? base : Matrix(result * base);
      first = false;
    }
    exponent >>= 1U;
    if (exponent > 0) base = base * base;
  }
  return result;
}

/// P_t by binary powering of P_h, where h = t / ceil(t / delta) <= delta partitions t exactly.
inline Matrix transient_at(const MarkovSystem& sys, double t, double delta,
                           int taylor_order = kAdaptiveOrder) {
  if (t < 0.0) fail(ErrorKind::invalid_argument, "transient_at needs t >= 0");
  const auto n = static_cast<Eigen::Index>(sys.size());
  if (t == 0.0 || sys.max_rate() == 0.0) return Matrix::Identity(n, n);
  check_delta(sys, delta);
  const std::uint64_t steps = step_count(t, delta);
  const double h = t / static_cast<double>(steps);
  return matrix_power(step_matrix(sys, h, taylor_order), steps);
}

inline Matrix transient_at(const MarkovSystem& sys, double t, const StepOptions& opt = {}) {
  return transient_at(sys, t, opt.delta.value_or(default_delta(sys, opt.safety)), opt.taylor_order);
}

/// v * exp(A t) through sparse Taylor steps; the vector counterpart of transient_at.
inline RowVector advance(const RowVector& v, const SparseMatrix& flow, double max_rate, double t,
                         double delta, int taylor_order = kAdaptiveOrder) {
  if (t < 0.0) fail(ErrorKind::invalid_argument, "advance needs t >= 0");
  if (t == 0.0 || max_rate == 0.0) return v;
  if (!(delta > 0.0) || delta * max_rate >= 1.0) {
    fail(ErrorKind::numerical, "time step not below 1/max rate");
  }
  const std::uint64_t steps = step_count(t, delta);
  const double h = t / static_cast<double>(steps);
  const int max_order = taylor_order == kAdaptiveOrder ? 60 : taylor_order;
  RowVector cur = v;
  for (std::uint64_t s = 0; s < steps; ++s) {
    RowVector term = cur;
    RowVector sum = cur;
    for (int k = 1; k <= max_order; ++k) {
      term = (term * flow) * (h / static_cast<double>(k));
      sum += term;
      if (taylor_order == kAdaptiveOrder && term.cwiseAbs().maxCoeff() < 1e-18) break;
    }
    cur = std::move(sum);
  }
  return cur;
}

/// exp(A t) via the uniformized Poisson mixture of powers of B = I + A/q, q = max rate.
/// Long horizons are halved until q*t <= 400 and the result squared back.
inline Matrix uniformization_oracle(const MarkovSystem& sys, double t) {
  if (t < 0.0) fail(ErrorKind::invalid_argument, "uniformization needs t >= 0");
  const auto n = static_cast<Eigen::Index>(sys.size());
  const double q = sys.max_rate();
  if (t == 0.0 || q == 0.0) return Matrix::Identity(n, n);
  int halvings = 0;
  double tau = t;
  while (q * tau > 400.0) {
    tau /= 2.0;
    ++halvings;
  }
  const Matrix b = Matrix::Identity(n, n) + sys.flow() / q;
  const double qt = q * tau;
  double weight = std::exp(-qt);
  double cumulative = weight;
  Matrix power = Matrix::Identity(n, n);
  Matrix result = weight * power;
  for (int k = 1; 1.0 - cumulative >= 1e-12 && k < 100000; ++k) {
    weight *= qt / static_cast<double>(k);
    cumulative += weight;
    power = power * b;
    result += weight * power;
  }
  for (int i = 0; i < halvings; ++i) result = result * result;
  return result;
}

// ---------------------------------------------------------------------------
// Piecewise-constant external state

/// Union of segment boundaries of several profiles, restricted to [0, t_end].
inline std::vector<double> merged_breakpoints(std::span<const ExternalProfile> profiles,
                                              double t_end) {
  std::vector<double> points{0.0};
  for (const auto& p : profiles) {
    for (const auto& s : p.segments()) {
      if (s.start > 0.0 && s.start < t_end) points.push_back(s.start);
    }
  }
  points.push_back(t_end);
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  return points;
}

/// Caches one MarkovSystem per profile segment of an isolated cell and propagates
/// matrices or distributions across segment boundaries.
class PiecewiseSolver {
 public:
  PiecewiseSolver(IsolatedIndex space, RateModel model, ExternalProfile profile, StepOptions opt = {})
      : space_(std::move(space)), model_(std::move(model)), profile_(std::move(profile)), opt_(opt) {}

  const IsolatedIndex& space() const { return space_; }
  const ExternalProfile& profile() const { return profile_; }
  const RateModel& model() const { return model_; }

  const MarkovSystem& system_for_segment(std::size_t seg) const {
    auto it = cache_.find(seg);
    if (it == cache_.end()) {
      it = cache_.emplace(seg, Entry{build_system(space_, model_, profile_.segments()[seg].ext), {}}).first;
      it->second.sparse = it->second.sys.sparse_flow();
    }
    return it->second.sys;
  }

  /// Ordered product of per-segment transient matrices over [0, t].
  Matrix transient(double t) const {
    check_span(0.0, t);
    const auto n = static_cast<Eigen::Index>(space_.size());
    Matrix p = Matrix::Identity(n, n);
    for_each_piece(0.0, t, [&](std::size_t seg, double len) {
      const MarkovSystem& sys = system_for_segment(seg);
      p = p * transient_at(sys, len, delta_for(sys), opt_.taylor_order);
    });
    return p;
  }

  /// Row distribution at t1 given `v` at t0.
  RowVector advance(const RowVector& v, double t0, double t1) const {
    check_span(t0, t1);
    RowVector cur = v;
    for_each_piece(t0, t1, [&](std::size_t seg, double len) {
      const MarkovSystem& sys = system_for_segment(seg);
      cur = ecable::advance(cur, cache_.at(seg).sparse, sys.max_rate(), len, delta_for(sys),
                            opt_.taylor_order);
    });
    return cur;
  }

 private:
  struct Entry {
    MarkovSystem sys;
    SparseMatrix sparse;
  };

  double delta_for(const MarkovSystem& sys) const {
    return opt_.delta.value_or(default_delta(sys, opt_.safety));
  }

  void check_span(double t0, double t1) const {
    if (t0 < 0.0 || t1 < t0) fail(ErrorKind::invalid_argument, "invalid time span");
    if (t1 > profile_.end_time()) {
      fail(ErrorKind::invalid_argument, "time " + std::to_string(t1) + " beyond the external profile");
    }
  }

  template <class F>
  void for_each_piece(double t0, double t1, F&& f) const {
    const auto& segs = profile_.segments();
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const double a = std::max(segs[i].start, t0);
      const double b = std::min(segs[i].end, t1);
      if (b > a) f(i, b - a);
    }
  }

  IsolatedIndex space_;
  RateModel model_;
  ExternalProfile profile_;
  StepOptions opt_;
  mutable std::map<std::size_t, Entry> cache_;
};

inline Matrix transient_piecewise(const IsolatedIndex& space, const RateModel& model,
                                  const ExternalProfile& profile, double t,
                                  const StepOptions& opt = {}) {
  return PiecewiseSolver(space, model, profile, opt).transient(t);
}

/// Cable counterpart; each cell may follow its own profile.
inline Matrix transient_piecewise(const CableIndex& space, const RateModel& model,
                                  std::span<const ExternalProfile> profiles, double t,
                                  const StepOptions& opt = {}) {
  if (profiles.size() != static_cast<std::size_t>(space.cells())) {
    fail(ErrorKind::invalid_argument, "need one profile per cell");
  }
  space.require_dense();
  const auto points = merged_breakpoints(profiles, t);
  const auto n = static_cast<Eigen::Index>(space.size());
  Matrix p = Matrix::Identity(n, n);
  std::vector<ExternalState> ext(profiles.size());
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    for (std::size_t c = 0; c < profiles.size(); ++c) ext[c] = profiles[c].at(points[k]);
    const MarkovSystem sys = build_system(space, model, ext);
    const double len = points[k + 1] - points[k];
    p = p * transient_at(sys, len, opt.delta.value_or(default_delta(sys, opt.safety)),
                         opt.taylor_order);
  }
  return p;
}

/// Sparse flow matrix of a cable at fixed external states, for vector propagation when
/// the dense matrices would not fit in memory.
struct SparseSystem {
  SparseMatrix flow;
  double max_rate = 0.0;
};

inline SparseSystem build_sparse_system(const CableIndex& space, const RateModel& model,
                                        std::span<const ExternalState> ext_per_cell) {
  space.require_dense();
  if (ext_per_cell.size() != static_cast<std::size_t>(space.cells())) {
    fail(ErrorKind::invalid_argument, "build_sparse_system needs one external state per cell");
  }
  const auto n = static_cast<Eigen::Index>(space.size());
  std::vector<Eigen::Triplet<double>> entries;
  SparseSystem out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const CableState s = space.state(static_cast<std::uint64_t>(i));
    double total = 0.0;
    for_each_cable_event(space, s, ext_per_cell, model, [&](const RateEvent& e) {
      total += e.rate;
      if (e.kind == EventKind::death) return;
      CableState to = s;
      apply_cable_event(e, to);
      const auto j = static_cast<Eigen::Index>(space.index(to));
      if (j != i) entries.emplace_back(i, j, e.rate);
      else total -= e.rate;
    });
    entries.emplace_back(i, i, -total);
    out.max_rate = std::max(out.max_rate, total);
  }
  out.flow.resize(n, n);
  out.flow.setFromTriplets(entries.begin(), entries.end());
  return out;
}

/// v * P_t for a cable, one sparse system per stretch between profile breakpoints.
inline RowVector advance_cable(const CableIndex& space, const RateModel& model,
                               std::span<const ExternalProfile> profiles, const RowVector& v, double t,
                               const StepOptions& opt = {}) {
  if (profiles.size() != static_cast<std::size_t>(space.cells())) {
    fail(ErrorKind::invalid_argument, "need one profile per cell");
  }
  const auto points = merged_breakpoints(profiles, t);
  std::vector<ExternalState> ext(profiles.size());
  RowVector cur = v;
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    for (std::size_t c = 0; c < profiles.size(); ++c) ext[c] = profiles[c].at(points[k]);
    const SparseSystem sys = build_sparse_system(space, model, ext);
    const double delta = opt.delta.value_or(sys.max_rate > 0.0 ? opt.safety / sys.max_rate : 1.0);
    cur = advance(cur, sys.flow, sys.max_rate, points[k + 1] - points[k], delta, opt.taylor_order);
  }
  return cur;
}

}  // namespace ecable
