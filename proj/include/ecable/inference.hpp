#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecable/error.hpp"
#include "ecable/kinetics.hpp"
#include "ecable/qp.hpp"
#include "ecable/state_space.hpp"
#include "ecable/transient.hpp"

namespace ecable {

/// Uniformly sampled NADH/ATP observations in model units, t_0 = 0.
struct TimeSeries {
  std::vector<double> t;
  std::vector<std::array<double, 2>> y;  // {nadh, atp}
  double alpha_nadh = 1.0;               // raw NADH per unit
  double alpha_atp = 1.0;                // raw ATP per unit

  std::size_t size() const { return t.size(); }
  double spacing() const { return t.size() > 1 ? t[1] - t[0] : 0.0; }

  void validate(const Capacities& caps) const {
    if (t.empty() || t.size() != y.size()) fail(ErrorKind::data, "time series is empty or ragged");
    if (t.front() != 0.0) fail(ErrorKind::data, "time series must start at t = 0");
    const double step = spacing();
    for (std::size_t k = 1; k < t.size(); ++k) {
      const double d = t[k] - t[k - 1];
      if (!(d > 0.0)) fail(ErrorKind::data, "time stamps must be strictly increasing");
      if (std::abs(d - step) > 1e-9 * step) {
        fail(ErrorKind::data, "non-uniform sample spacing at row " + std::to_string(k) +
                                  ": inference needs a constant sampling period");
      }
    }
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (!(y[k][0] >= 0.0 && y[k][0] <= caps.m_ch && y[k][1] >= 0.0 && y[k][1] <= caps.n_axp)) {
        fail(ErrorKind::data, "observation " + std::to_string(k) + " outside the capacity box");
      }
    }
  }
};

/// Raw readings: NADH in fluorescence x 1e-6, ATP in mM.
struct RawSample {
  double t = 0.0;
  double nadh = 0.0;
  double atp = 0.0;
};

struct FullScale {
  double nadh_max = 12.985;
  double atp_max = 3.6;
};

struct ConvertOptions {
  /// Samples after this time are dropped (cell lysis makes them unreliable).
  double discard_after = 1300.0;
  bool keep_all = false;
};

/// y_nadh = NADH / nadh_max * M, y_atp = ATP / atp_max * N. Readings above full scale are
/// clamped and reported through `warnings`.
inline TimeSeries convert_units(std::span<const RawSample> raw, const Capacities& caps,
                                const FullScale& scale = {}, const ConvertOptions& opt = {},
                                std::vector<std::string>* warnings = nullptr) {
  caps.validate();
  if (!(scale.nadh_max > 0.0) || !(scale.atp_max > 0.0)) {
    fail(ErrorKind::invalid_argument, "full-scale values must be positive");
  }
  TimeSeries ts;
  ts.alpha_nadh = scale.nadh_max / caps.m_ch;
  ts.alpha_atp = scale.atp_max / caps.n_axp;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const RawSample& r = raw[k];
    if (!opt.keep_all && r.t > opt.discard_after) continue;
    if (!(r.nadh >= 0.0) || !(r.atp >= 0.0)) {
      fail(ErrorKind::data, "negative or non-finite reading at row " + std::to_string(k));
    }
    double nadh = r.nadh;
    double atp = r.atp;
    if (nadh > scale.nadh_max) {
      if (warnings) warnings->push_back("row " + std::to_string(k) + ": nadh above full scale, clamped");
      nadh = scale.nadh_max;
    }
    if (atp > scale.atp_max) {
      if (warnings) warnings->push_back("row " + std::to_string(k) + ": atp above full scale, clamped");
      atp = scale.atp_max;
    }
    ts.t.push_back(r.t);
    ts.y.push_back({nadh / scale.nadh_max * caps.m_ch, atp / scale.atp_max * caps.n_axp});
  }
  return ts;
}

/// Z with row j = [m_ch(j), n_atp(j)].
inline Matrix observation_map(const IsolatedIndex& space) {
  const auto n = static_cast<Eigen::Index>(space.size());
  Matrix z(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const CellState s = space.state(static_cast<std::size_t>(i));
    z(i, 0) = s.m_ch;
    z(i, 1) = s.n_atp;
  }
  return z;
}

/// Basis generators B_j with A(x) = sum_j x_j B_j for the parametric flows (no death).
inline std::array<SparseMatrix, 4> flow_basis(const IsolatedIndex& space, const ExternalState& ext) {
  const auto n = static_cast<Eigen::Index>(space.size());
  std::array<std::vector<Eigen::Triplet<double>>, 4> trip;
  const Capacities& caps = space.capacities();
  for (Eigen::Index i = 0; i < n; ++i) {
    const CellState s = space.state(static_cast<std::size_t>(i));
    const LinearRateTerms terms = linear_rate_terms(s, ext, caps);
    auto add = [&](const std::array<double, 4>& c, EventKind kind) {
      const auto to = static_cast<Eigen::Index>(space.index(apply_isolated_event(kind, s)));
      for (std::size_t j = 0; j < 4; ++j) {
        if (c[j] == 0.0) continue;
        trip[j].emplace_back(i, to, c[j]);
        trip[j].emplace_back(i, i, -c[j]);
      }
    };
    add(terms.ed_diffusion, EventKind::ed_diffusion);
    add(terms.aerobic_synthesis, EventKind::aerobic_synthesis);
    add(terms.atp_consumption, EventKind::atp_consumption);
  }
  std::array<SparseMatrix, 4> basis;
  for (std::size_t j = 0; j < 4; ++j) {
    basis[j].resize(n, n);
    basis[j].setFromTriplets(trip[j].begin(), trip[j].end());
  }
  return basis;
}

enum class GradientMethod {
  automatic,  // doubling for small spaces, forward sweep otherwise
  doubling,   // dense squaring recursion on P^(2^b)
  forward,    // forward-mode sweep over the 2^b single steps
};

/// f(x, pi0) = 1/2 sum_k |y_k - pi0' prod_{j<k} P(x, s_E(t_j))^n Z|^2 with P = I + delta A
/// and n = T / delta = 2^b. The external state of each sampling interval is taken at its
/// left end.
class Likelihood {
 public:
  Likelihood(const IsolatedIndex& space, TimeSeries series, const ExternalProfile& profile,
             double delta)
      : space_(space), series_(std::move(series)), delta_(delta) {
    const Capacities& caps = space.capacities();
    series_.validate(caps);
    z_ = observation_map(space);
    if (!(delta > 0.0)) fail(ErrorKind::invalid_argument, "delta must be positive");
    if (series_.size() > 1) {
      const double period = series_.spacing();
      const double ratio = period / delta;
      const double n = std::round(ratio);
      const auto steps = static_cast<std::uint64_t>(n);
      if (n < 2.0 || std::abs(ratio - n) > 1e-9 * n || (steps & (steps - 1)) != 0) {
        int b = std::max(1, static_cast<int>(std::ceil(std::log2(ratio))));
        fail(ErrorKind::invalid_argument,
             "sampling period / delta = " + std::to_string(ratio) +
                 " must be a power of two 2^b with b > 0; e.g. delta = " +
                 std::to_string(period / std::ldexp(1.0, b)));
      }
      steps_ = steps;
      depth_ = 0;
      while ((std::uint64_t{1} << depth_) < steps_) ++depth_;
      if (series_.t.back() > profile.end_time()) {
        fail(ErrorKind::invalid_argument, "external profile does not cover the time series");
      }
    }
    for (std::size_t k = 0; k + 1 < series_.size(); ++k) {
      const ExternalState& ext = profile.at(series_.t[k]);
      std::size_t id = 0;
      while (id < exts_.size() && !(exts_[id] == ext)) ++id;
      if (id == exts_.size()) {
        exts_.push_back(ext);
        basis_.push_back(flow_basis(space, ext));
      }
      interval_ext_.push_back(id);
    }
  }

  const IsolatedIndex& space() const { return space_; }
  const TimeSeries& series() const { return series_; }
  const Matrix& observation() const { return z_; }
  double delta() const { return delta_; }
  std::uint64_t steps_per_interval() const { return steps_; }
  int doubling_depth() const { return depth_; }

  /// Largest total exit rate over all intervals; delta * max_rate must stay below 1.
  double max_rate(const ParamVector& x) const {
    double m = 0.0;
    for (std::size_t id = 0; id < exts_.size(); ++id) {
      const SparseMatrix a = flow(x, id);
      for (Eigen::Index i = 0; i < a.rows(); ++i) m = std::max(m, -a.coeff(i, i));
    }
    return m;
  }

  bool feasible(const ParamVector& x) const {
    return x.nonnegative() && delta_ * max_rate(x) < 1.0;
  }

  /// Expected observations pi0' Phi_k Z at every sample time.
  std::vector<std::array<double, 2>> expected_observations(const ParamVector& x, const RowVector& pi0) const {
    require_feasible(x);
    check_pi0(pi0);
    std::vector<std::array<double, 2>> out;
    sweep(x, pi0, [&](std::size_t, const RowVector& u) {
      const Eigen::RowVector2d o = u * z_;
      out.push_back({o(0), o(1)});
    });
    return out;
  }

  double nll(const ParamVector& x, const RowVector& pi0) const {
    require_feasible(x);
    check_pi0(pi0);
    double f = 0.0;
    sweep(x, pi0, [&](std::size_t k, const RowVector& u) { f += 0.5 * residual(k, u).squaredNorm(); });
    return f;
  }

  /// nll, or +inf where the step is infeasible for x (used by line searches).
  double nll_or_inf(const ParamVector& x, const RowVector& pi0) const {
    if (!feasible(x)) return std::numeric_limits<double>::infinity();
    return nll(x, pi0);
  }

  std::array<double, 4> gradient(const ParamVector& x, const RowVector& pi0,
                                 GradientMethod method = GradientMethod::automatic) const {
    require_feasible(x);
    check_pi0(pi0);
    if (method == GradientMethod::automatic) {
      method = space_.size() <= 100 ? GradientMethod::doubling : GradientMethod::forward;
    }
    return method == GradientMethod::doubling ? gradient_doubling(x, pi0) : gradient_forward(x, pi0);
  }

  /// Stacked residuals y_k - pi0' Phi_k Z, two rows per sample.
  Vector residuals(const ParamVector& x, const RowVector& pi0) const {
    require_feasible(x);
    check_pi0(pi0);
    Vector r(static_cast<Eigen::Index>(2 * series_.size()));
    sweep(x, pi0, [&](std::size_t k, const RowVector& u) {
      r.segment(static_cast<Eigen::Index>(2 * k), 2) = residual(k, u);
    });
    return r;
  }

  /// d(pi0' Phi_k Z)/dx in the row layout of residuals(); gradient = -J' r.
  Matrix sensitivities(const ParamVector& x, const RowVector& pi0) const {
    require_feasible(x);
    check_pi0(pi0);
    const auto n = static_cast<Eigen::Index>(space_.size());
    Matrix jac = Matrix::Zero(static_cast<Eigen::Index>(2 * series_.size()), 4);
    RowVector u = pi0;
    std::array<RowVector, 4> w;
    for (auto& v : w) v = RowVector::Zero(n);
    std::vector<std::optional<SparseMatrix>> flows(exts_.size());
    for (std::size_t k = 0; k + 1 < series_.size(); ++k) {
      const std::size_t id = interval_ext_[k];
      auto& a = flows[id];
      if (!a) a = flow(x, id);
      for (std::uint64_t s = 0; s < steps_; ++s) {
        for (std::size_t j = 0; j < 4; ++j) w[j] += delta_ * (w[j] * *a) + delta_ * (u * basis_[id][j]);
        u += delta_ * (u * *a);
      }
      for (std::size_t j = 0; j < 4; ++j) {
        const Eigen::RowVector2d dz = w[j] * z_;
        jac(static_cast<Eigen::Index>(2 * k + 2), static_cast<Eigen::Index>(j)) = dz(0);
        jac(static_cast<Eigen::Index>(2 * k + 3), static_cast<Eigen::Index>(j)) = dz(1);
      }
    }
    return jac;
  }

  /// The pi0 subproblem in least-squares form: rows of D are the columns of Phi_k Z.
  LsqProblem pi0_problem(const ParamVector& x) const {
    require_feasible(x);
    const auto n = static_cast<Eigen::Index>(space_.size());
    const auto k_count = static_cast<Eigen::Index>(series_.size());
    LsqProblem p;
    p.D.resize(2 * k_count, n);
    p.b.resize(2 * k_count);
    std::vector<SparseMatrix> flows;
    for (std::size_t id = 0; id < exts_.size(); ++id) flows.push_back(flow(x, id));
    // Phi_k Z is built right to left; this loop is O(K^2) micro-steps and dominates a fit,
    // so it runs on raw CSR arrays with interleaved (m, n) columns.
    std::vector<double> g(static_cast<std::size_t>(2 * n)), next(g.size());
    for (Eigen::Index k = 0; k < k_count; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) {
        g[static_cast<std::size_t>(2 * i)] = z_(i, 0);
        g[static_cast<std::size_t>(2 * i + 1)] = z_(i, 1);
      }
      for (Eigen::Index j = k - 1; j >= 0; --j) {
        const SparseMatrix& a = flows[interval_ext_[static_cast<std::size_t>(j)]];
        const auto* outer = a.outerIndexPtr();
        const auto* inner = a.innerIndexPtr();
        const double* val = a.valuePtr();
        for (std::uint64_t s = 0; s < steps_; ++s) {
          for (Eigen::Index i = 0; i < n; ++i) {
            double s0 = 0.0, s1 = 0.0;
            for (auto q = outer[i]; q < outer[i + 1]; ++q) {
              s0 += val[q] * g[static_cast<std::size_t>(2 * inner[q])];
              s1 += val[q] * g[static_cast<std::size_t>(2 * inner[q] + 1)];
            }
            next[static_cast<std::size_t>(2 * i)] = g[static_cast<std::size_t>(2 * i)] + delta_ * s0;
            next[static_cast<std::size_t>(2 * i + 1)] = g[static_cast<std::size_t>(2 * i + 1)] + delta_ * s1;
          }
          std::swap(g, next);
        }
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        p.D(2 * k, i) = g[static_cast<std::size_t>(2 * i)];
        p.D(2 * k + 1, i) = g[static_cast<std::size_t>(2 * i + 1)];
      }
      p.b(2 * k) = series_.y[static_cast<std::size_t>(k)][0];
      p.b(2 * k + 1) = series_.y[static_cast<std::size_t>(k)][1];
    }
    p.E.resize(3, n);
    p.E.topRows(2) = z_.transpose();
    p.E.row(2).setOnes();
    p.e = Vector(3);
    p.e << series_.y[0][0], series_.y[0][1], 1.0;
    return p;
  }

  /// A feasible pi0 for the equality constraint: independent two-point marginals on
  /// floor/ceil of y_0.
  RowVector feasible_pi0() const {
    const Capacities& caps = space_.capacities();
    const double ym = series_.y[0][0];
    const double yn = series_.y[0][1];
    auto two_point = [](double v, int cap) {
      std::vector<double> w(static_cast<std::size_t>(cap) + 1, 0.0);
      const int lo = std::min(static_cast<int>(std::floor(v)), cap);
      const double frac = v - lo;
      w[static_cast<std::size_t>(lo)] += 1.0 - frac;
      if (frac > 0.0) w[static_cast<std::size_t>(lo) + 1] += frac;
      return w;
    };
    const auto pm = two_point(ym, caps.m_ch);
    const auto pn = two_point(yn, caps.n_axp);
    RowVector pi = RowVector::Zero(static_cast<Eigen::Index>(space_.size()));
    for (int m = 0; m <= caps.m_ch; ++m) {
      for (int n = 0; n <= caps.n_axp; ++n) {
        pi(static_cast<Eigen::Index>(space_.index(m, n))) = pm[static_cast<std::size_t>(m)] * pn[static_cast<std::size_t>(n)];
      }
    }
    return pi;
  }

  /// Global minimizer of the convex pi0 subproblem for fixed x.
  QpResult fit_pi0(const ParamVector& x, const std::optional<RowVector>& warm = std::nullopt) const {
    const LsqProblem p = pi0_problem(x);
    const RowVector start = warm ? *warm : feasible_pi0();
    return solve_nonneg_lsq(p, start.transpose());
  }

 private:
  SparseMatrix flow(const ParamVector& x, std::size_t id) const {
    const auto& b = basis_[id];
    SparseMatrix a = x[0] * b[0];
    for (std::size_t j = 1; j < 4; ++j) a += x[j] * b[j];
    return a;
  }

  void require_feasible(const ParamVector& x) const {
    if (!x.nonnegative()) fail(ErrorKind::invalid_argument, "parameters must be >= 0");
    const double r = max_rate(x);
    if (delta_ * r >= 1.0) {
      fail(ErrorKind::numerical, "delta = " + std::to_string(delta_) + " is not below 1/max rate = " +
                                     std::to_string(1.0 / r) + " for these parameters");
    }
  }

  void check_pi0(const RowVector& pi0) const {
    if (pi0.size() != static_cast<Eigen::Index>(space_.size())) {
      fail(ErrorKind::invalid_argument, "pi0 size does not match the state space");
    }
  }

  Eigen::Vector2d residual(std::size_t k, const RowVector& u) const {
    const Eigen::RowVector2d o = u * z_;
    return {series_.y[k][0] - o(0), series_.y[k][1] - o(1)};
  }

  /// Calls visit(k, pi0' Phi_k) for every sample k.
  template <class F>
  void sweep(const ParamVector& x, const RowVector& pi0, F&& visit) const {
    RowVector u = pi0;
    visit(0, u);
    std::vector<std::optional<SparseMatrix>> flows(exts_.size());
    for (std::size_t k = 0; k + 1 < series_.size(); ++k) {
      auto& a = flows[interval_ext_[k]];
      if (!a) a = flow(x, interval_ext_[k]);
      for (std::uint64_t s = 0; s < steps_; ++s) u += delta_ * (u * *a);
      visit(k + 1, u);
    }
  }

  std::array<double, 4> gradient_forward(const ParamVector& x, const RowVector& pi0) const {
    const auto n = static_cast<Eigen::Index>(space_.size());
    std::array<double, 4> grad{};
    RowVector u = pi0;
    std::array<RowVector, 4> w;
    for (auto& v : w) v = RowVector::Zero(n);
    std::vector<std::optional<SparseMatrix>> flows(exts_.size());
    for (std::size_t k = 0; k + 1 < series_.size(); ++k) {
      const std::size_t id = interval_ext_[k];
      auto& a = flows[id];
      if (!a) a = flow(x, id);
      for (std::uint64_t s = 0; s < steps_; ++s) {
        // d(u P) = w P + u dP, with dP = delta B_j
        for (std::size_t j = 0; j < 4; ++j) {
          w[j] += delta_ * (w[j] * *a) + delta_ * (u * basis_[id][j]);
        }
        u += delta_ * (u * *a);
      }
      const Eigen::Vector2d r = residual(k + 1, u);
      for (std::size_t j = 0; j < 4; ++j) grad[j] -= (w[j] * z_).dot(r.transpose());
    }
    return grad;
  }

  std::array<double, 4> gradient_doubling(const ParamVector& x, const RowVector& pi0) const {
    const auto n = static_cast<Eigen::Index>(space_.size());
    std::array<double, 4> grad{};
    RowVector u = pi0;
    std::array<RowVector, 4> w;
    for (auto& v : w) v = RowVector::Zero(n);
    for (std::size_t k = 0; k + 1 < series_.size(); ++k) {
      const std::size_t id = interval_ext_[k];
      Matrix p = Matrix::Identity(n, n) + delta_ * Matrix(flow(x, id));
      std::array<Matrix, 4> dp;
      for (std::size_t j = 0; j < 4; ++j) dp[j] = delta_ * Matrix(basis_[id][j]);
      // d(P^2) = dP P + P dP, applied b times
      for (int b = 0; b < depth_; ++b) {
        for (std::size_t j = 0; j < 4; ++j) dp[j] = Matrix(dp[j] * p + p * dp[j]);
        p = Matrix(p * p);
      }
      for (std::size_t j = 0; j < 4; ++j) w[j] = w[j] * p + u * dp[j];
      u = u * p;
      const Eigen::Vector2d r = residual(k + 1, u);
      for (std::size_t j = 0; j < 4; ++j) grad[j] -= (w[j] * z_).dot(r.transpose());
    }
    return grad;
  }

  IsolatedIndex space_;
  TimeSeries series_;
  double delta_;
  std::uint64_t steps_ = 1;
  int depth_ = 0;
  Matrix z_;
  std::vector<ExternalState> exts_;
  std::vector<std::array<SparseMatrix, 4>> basis_;
  std::vector<std::size_t> interval_ext_;
};

inline double nll(const ParamVector& x, const RowVector& pi0, const TimeSeries& series,
                  const ExternalProfile& profile, const Capacities& caps, double delta) {
  return Likelihood(IsolatedIndex(caps), series, profile, delta).nll(x, pi0);
}

inline std::array<double, 4> nll_gradient(const ParamVector& x, const RowVector& pi0,
                                          const TimeSeries& series, const ExternalProfile& profile,
                                          const Capacities& caps, double delta,
                                          GradientMethod method = GradientMethod::automatic) {
  return Likelihood(IsolatedIndex(caps), series, profile, delta).gradient(x, pi0, method);
}

inline RowVector fit_pi0(const ParamVector& x, const TimeSeries& series, const ExternalProfile& profile,
                         const Capacities& caps, double delta) {
  return Likelihood(IsolatedIndex(caps), series, profile, delta).fit_pi0(x).x.transpose();
}

// ---------------------------------------------------------------------------
// Alternating fit

/// How the x update of each outer iteration is chosen. Both are followed by Armijo
/// backtracking, so accepted NLL values never increase.
enum class StepRule {
  projected_gradient,  // x <- (x - mu g)+ with a Barzilai-Borwein trial step
  gauss_newton,        // joint step in (x, pi0) toward the linearized constrained optimum
};

struct FitOptions {
  int max_outer = 500;
  double rel_tol = 1e-10;   // stop when (f_prev - f) <= rel_tol * f_prev
  double abs_tol = 0.0;     // stop once f <= abs_tol
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 60;
  GradientMethod gradient = GradientMethod::automatic;
  StepRule step_rule = StepRule::gauss_newton;
};

struct FitIteration {
  int iteration = 0;
  double nll = 0.0;
  double step = 0.0;
  int backtracks = 0;
  ParamVector x;
};

struct FitResult {
  ParamVector x;
  RowVector pi0;
  double nll = 0.0;
  std::vector<FitIteration> trace;
  bool converged = false;
  bool identifiable = true;
  std::string status;
  double qp_kkt = 0.0;
};

/// Alternates the pi0 QP with one x update per outer iteration.
///
/// projected_gradient: x <- (x - mu g)+, mu from Barzilai-Borwein and halved until the
/// Armijo condition holds.
///
/// gauss_newton: the observations are linear in pi0 (D pi0) and are linearized in x
/// (J_x), so the joint step solves the same constrained least squares as the pi0 QP over
/// [pi0; x] with x >= 0 added, then backtracks along the segment toward it. It falls back
/// to the gradient rule when that segment is not a descent direction.
///
/// Either way accepted NLL values never increase.
inline FitResult fit(const Likelihood& lik, const ParamVector& init_x, const FitOptions& opt = {}) {
  if (!lik.feasible(init_x)) {
    fail(ErrorKind::invalid_argument, "initial parameters are negative or make delta infeasible");
  }
  FitResult res;
  res.x = init_x;
  LsqProblem prob = lik.pi0_problem(init_x);
  QpResult qp = solve_nonneg_lsq(prob, lik.feasible_pi0().transpose());
  res.pi0 = qp.x.transpose();
  res.qp_kkt = qp.kkt.residual();
  res.nll = lik.nll(res.x, res.pi0);
  res.trace.push_back({0, res.nll, 0.0, 0, res.x});
  if (lik.series().size() < 2) {
    res.identifiable = false;
    res.converged = true;
    res.status = "no dynamics in a single-sample series; parameters left at their initial values";
    return res;
  }

  using Arr = Eigen::Array4d;
  auto to_arr = [](const ParamVector& p) { return Arr(p.gamma, p.rho, p.zeta, p.beta); };
  auto from_arr = [](const Arr& a) { return ParamVector{a(0), a(1), a(2), a(3)}; };
  const auto n = static_cast<Eigen::Index>(lik.space().size());

  std::optional<Arr> prev_x, prev_g;
  double prev_step = 0.0;
  res.status = "iteration budget exhausted";
  for (int it = 1; it <= opt.max_outer; ++it) {
    const Arr x = to_arr(res.x);
    const auto ga = lik.gradient(res.x, res.pi0, opt.gradient);
    const Arr g(ga[0], ga[1], ga[2], ga[3]);

    // Joint Gauss-Newton target (pi0, x); the pi0 gradient is exact because f is
    // quadratic in pi0.
    std::optional<Arr> x_target;
    RowVector pi_dir;
    double joint_slope = 0.0;
    if (opt.step_rule == StepRule::gauss_newton) {
      const Matrix jac = lik.sensitivities(res.x, res.pi0);
      LsqProblem joint;
      joint.D.resize(prob.D.rows(), n + 4);
      joint.D << prob.D, jac;
      joint.b = prob.b + jac * x.matrix();
      joint.E = Matrix::Zero(prob.E.rows(), n + 4);
      joint.E.leftCols(n) = prob.E;
      joint.e = prob.e;
      Vector start(n + 4);
      start << res.pi0.transpose(), x.matrix();
      const Vector y = solve_nonneg_lsq(joint, start).x;
      const Arr dx = y.tail(4).array() - x;
      pi_dir = y.head(n).transpose() - res.pi0;
      const Vector g_pi = prob.gradient(res.pi0.transpose());
      joint_slope = (g * dx).sum() + pi_dir.dot(g_pi.transpose());
      if (joint_slope < 0.0) x_target = y.tail(4).array();
    }

    if (!x_target) {
      const Arr pg = x - (x - g).max(0.0);  // projected gradient
      if ((pg.abs() == 0.0).all()) {
        res.converged = true;
        res.status = "projected gradient vanished";
        break;
      }
    }

    double step = 1.0;
    if (!x_target) {
      if (prev_x) {
        const Arr s = x - *prev_x;
        const Arr yv = g - *prev_g;
        const double sy = (s * yv).sum();
        step = sy > 0.0 ? (s * s).sum() / sy : 2.0 * prev_step;
      } else {
        step = 0.1 * std::max(x.abs().maxCoeff(), 1e-6) / g.abs().maxCoeff();
      }
    }

    int backtracks = 0;
    Arr x_new;
    RowVector pi_new = res.pi0;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (; backtracks <= opt.max_backtracks; ++backtracks) {
      double decrease;
      if (x_target) {
        x_new = x + step * (*x_target - x);
        pi_new = res.pi0 + step * pi_dir;
        decrease = step * joint_slope;
      } else {
        x_new = (x - step * g).max(0.0);
        decrease = (g * (x_new - x)).sum();
      }
      f_new = lik.nll_or_inf(from_arr(x_new), pi_new);
      if (f_new <= res.nll + opt.armijo_c * decrease) {
        accepted = true;
        break;
      }
      step *= opt.backtrack;
    }
    if (!accepted || ((x_new == x).all() && pi_new == res.pi0)) {
      res.converged = true;
      res.status = "line search found no further decrease";
      break;
    }

    const ParamVector xp = from_arr(x_new);
    prob = lik.pi0_problem(xp);
    const QpResult qp_new = solve_nonneg_lsq(prob, pi_new.transpose());
    const RowVector pi_qp = qp_new.x.transpose();
    const double f_qp = lik.nll(xp, pi_qp);
    const double f_prev = res.nll;
    res.pi0 = pi_new;
    if (f_qp <= f_new) {
      res.pi0 = pi_qp;
      res.qp_kkt = qp_new.kkt.residual();
      f_new = f_qp;
    }
    prev_x = x;
    prev_g = g;
    prev_step = step;
    res.x = xp;
    res.nll = f_new;
    res.trace.push_back({it, f_new, step, backtracks, xp});

    if (f_new <= opt.abs_tol) {
      res.converged = true;
      res.status = "NLL below absolute tolerance";
      break;
    }
    if (f_prev - f_new <= opt.rel_tol * f_prev) {
      res.converged = true;
      res.status = "relative NLL improvement below tolerance";
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Prediction

inline constexpr double kAtpMoleculesPerUnit = 1.08e8;
inline constexpr double kNadhMoleculesPerUnit = 0.432e8;

struct PredictionRow {
  double t = 0.0;
  double nadh_units = 0.0;
  double atp_units = 0.0;
  double nadh_raw = 0.0;
  double atp_raw = 0.0;
  double rate_atp_syn = 0.0;   // ATP molecules / cell / s
  double rate_atp_con = 0.0;
  double rate_nadh_gen = 0.0;  // NADH molecules / cell / s
  double rate_nadh_con = 0.0;
};

/// Expected levels pi0' P_t Z and expected flow rates under pi0' P_t on a grid.
inline std::vector<PredictionRow> predict(const RateModel& model, const RowVector& pi0,
                                          const ExternalProfile& profile, std::span<const double> grid,
                                          double alpha_nadh, double alpha_atp,
                                          const StepOptions& opt = {}) {
  const IsolatedIndex space(model.caps);
  if (pi0.size() != static_cast<Eigen::Index>(space.size())) {
    fail(ErrorKind::invalid_argument, "pi0 size does not match the state space");
  }
  PiecewiseSolver solver(space, model, profile, opt);
  std::vector<PredictionRow> rows;
  RowVector cur = pi0;
  double t = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid[k] < t) fail(ErrorKind::invalid_argument, "prediction grid must be increasing");
    cur = solver.advance(cur, t, grid[k]);
    t = grid[k];
    const ExternalState& ext = profile.at(t);
    PredictionRow r;
    r.t = t;
    double syn = 0.0, con = 0.0, gen = 0.0;
    for (Eigen::Index i = 0; i < cur.size(); ++i) {
      const double p = cur(i);
      if (p == 0.0) continue;
      const CellState s = space.state(static_cast<std::size_t>(i));
      r.nadh_units += p * s.m_ch;
      r.atp_units += p * s.n_atp;
      syn += p * rate_atp_syn(s, ext, model);
      con += p * rate_atp_con(s, ext, model);
      gen += p * rate_nadh_gen(s, ext, model);
    }
    r.nadh_raw = r.nadh_units * alpha_nadh;
    r.atp_raw = r.atp_units * alpha_atp;
    r.rate_atp_syn = syn * kAtpMoleculesPerUnit;
    r.rate_atp_con = con * kAtpMoleculesPerUnit;
    r.rate_nadh_gen = gen * kNadhMoleculesPerUnit;
    r.rate_nadh_con = syn * kNadhMoleculesPerUnit;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ecable
