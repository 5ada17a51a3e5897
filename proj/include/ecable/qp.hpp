#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ecable/error.hpp"

namespace ecable {

/// min 1/2 |D x - b|^2  subject to  E x = e,  x >= 0.
struct LsqProblem {
  Eigen::MatrixXd D;
  Eigen::VectorXd b;
  Eigen::MatrixXd E;
  Eigen::VectorXd e;

  double objective(const Eigen::VectorXd& x) const { return 0.5 * (D * x - b).squaredNorm(); }
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const { return D.transpose() * (D * x - b); }
};

struct KktReport {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  double scale = 1.0;

  /// Largest violation divided by max(1, |c|, |H|) with H = D'D, c = -D'b.
  double residual() const {
    return std::max({stationarity, primal, dual, complementarity}) / scale;
  }
};

struct QpOptions {
  int max_iterations = 0;  // 0: 50 * n
  double step_tol = 1e-13;
  double dual_tol = 1e-11;
};

struct QpResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  KktReport kkt;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline std::vector<Eigen::Index> free_indices(const std::vector<bool>& fixed) {
  std::vector<Eigen::Index> f;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (!fixed[i]) f.push_back(static_cast<Eigen::Index>(i));
  }
  return f;
}

inline Eigen::MatrixXd columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(idx[k]);
  return out;
}

/// Equality multipliers from the free-set rows of E' nu ~= g.
inline Eigen::VectorXd equality_multipliers(const LsqProblem& p, const Eigen::VectorXd& g,
                                            const std::vector<Eigen::Index>& free) {
  if (free.empty()) return Eigen::VectorXd::Zero(p.E.rows());
  const Eigen::MatrixXd ef_t = columns(p.E, free).transpose();
  Eigen::VectorXd gf(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) gf(static_cast<Eigen::Index>(k)) = g(free[k]);
  return ef_t.completeOrthogonalDecomposition().solve(gf);
}

}  // namespace detail

inline KktReport kkt_report(const LsqProblem& p, const Eigen::VectorXd& x) {
  KktReport r;
  const Eigen::VectorXd g = p.gradient(x);
  std::vector<bool> fixed(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) fixed[static_cast<std::size_t>(i)] = !(x(i) > 0.0);
  const auto free = detail::free_indices(fixed);
  const Eigen::VectorXd nu = detail::equality_multipliers(p, g, free);
  const Eigen::VectorXd mu = g - p.E.transpose() * nu;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (fixed[static_cast<std::size_t>(i)]) {
      r.dual = std::max(r.dual, -mu(i));
    } else {
      r.stationarity = std::max(r.stationarity, std::abs(mu(i)));
    }
    r.complementarity = std::max(r.complementarity, std::abs(x(i) * mu(i)));
    r.primal = std::max(r.primal, -x(i));
  }
  if (p.E.rows() > 0) r.primal = std::max(r.primal, (p.E * x - p.e).cwiseAbs().maxCoeff());
  const double h_norm = (p.D.transpose() * p.D).cwiseAbs().rowwise().sum().maxCoeff();
  const double c_norm = (p.D.transpose() * p.b).cwiseAbs().maxCoeff();
  r.scale = std::max({1.0, h_norm, c_norm});
  return r;
}

/// Primal active-set method. `start` must be feasible; each iteration minimizes over the
/// free variables in the null space of their equality block, then either takes the
/// longest feasible step or releases the bound with the most negative multiplier.
inline QpResult solve_nonneg_lsq(const LsqProblem& p, Eigen::VectorXd start, const QpOptions& opt = {}) {
  const Eigen::Index n = p.D.cols();
  if (p.b.size() != p.D.rows() || p.E.cols() != n || p.e.size() != p.E.rows() || start.size() != n) {
    fail(ErrorKind::invalid_argument, "QP dimensions do not match");
  }
  const double feas_scale = std::max(1.0, p.e.size() > 0 ? p.e.cwiseAbs().maxCoeff() : 0.0);
  if ((start.array() < -1e-12).any() ||
      (p.E.rows() > 0 && (p.E * start - p.e).cwiseAbs().maxCoeff() > 1e-9 * feas_scale)) {
    fail(ErrorKind::infeasible, "QP starting point is not feasible");
  }

  Eigen::VectorXd x = start.cwiseMax(0.0);
  std::vector<bool> fixed(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) fixed[static_cast<std::size_t>(i)] = x(i) == 0.0;

  // Multipliers below round-off of the problem's own scale are not worth releasing; chasing
  // them cycles through near-optimal supports.
  const double kkt_scale = std::max({1.0, (p.D.transpose() * p.D).cwiseAbs().rowwise().sum().maxCoeff(),
                                     (p.D.transpose() * p.b).cwiseAbs().maxCoeff()});
  const int max_iter = opt.max_iterations > 0 ? opt.max_iterations : static_cast<int>(50 * n + 50);
  QpResult res;
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    const auto free = detail::free_indices(fixed);
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::VectorXd s = Eigen::VectorXd::Zero(nf);
    if (nf > 0) {
      Eigen::MatrixXd basis;
      if (p.E.rows() > 0) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(detail::columns(p.E, free).transpose());
        const Eigen::Index rank = qr.rank();
        const Eigen::MatrixXd q = qr.householderQ();
        basis = q.rightCols(nf - rank);
      } else {
        basis = Eigen::MatrixXd::Identity(nf, nf);
      }
      if (basis.cols() > 0) {
        const Eigen::MatrixXd df = detail::columns(p.D, free);
        Eigen::VectorXd xf(nf);
        for (Eigen::Index k = 0; k < nf; ++k) xf(k) = x(free[static_cast<std::size_t>(k)]);
        const Eigen::VectorXd r = p.b - df * xf;
        const Eigen::VectorXd z = (df * basis).completeOrthogonalDecomposition().solve(r);
        s = basis * z;
      }
    }

    // A step along a numerically flat direction changes nothing but the active set and can
    // cycle; such steps count as zero.
    const double x_scale = std::max(1.0, x.cwiseAbs().maxCoeff());
    bool moves = nf > 0 && s.cwiseAbs().maxCoeff() > opt.step_tol * x_scale;
    if (moves) {
      Eigen::VectorXd trial = x;
      for (Eigen::Index k = 0; k < nf; ++k) trial(free[static_cast<std::size_t>(k)]) += s(k);
      const double f = p.objective(x);
      moves = f - p.objective(trial) > 1e-15 * std::max(f, p.b.squaredNorm());
    }
    if (moves) {
      double alpha = 1.0;
      Eigen::Index block = -1;
      for (Eigen::Index k = 0; k < nf; ++k) {
        if (s(k) < 0.0) {
          const double a = x(free[static_cast<std::size_t>(k)]) / -s(k);
          if (a < alpha) {
            alpha = a;
            block = k;
          }
        }
      }
      for (Eigen::Index k = 0; k < nf; ++k) x(free[static_cast<std::size_t>(k)]) += alpha * s(k);
      if (block >= 0) {
        const Eigen::Index i = free[static_cast<std::size_t>(block)];
        x(i) = 0.0;
        fixed[static_cast<std::size_t>(i)] = true;
      }
      for (Eigen::Index k = 0; k < nf; ++k) {
        const Eigen::Index i = free[static_cast<std::size_t>(k)];
        if (x(i) <= 0.0) {
          x(i) = 0.0;
          fixed[static_cast<std::size_t>(i)] = true;
        }
      }
      continue;
    }

    const Eigen::VectorXd g = p.gradient(x);
    const Eigen::VectorXd mu = g - p.E.transpose() * detail::equality_multipliers(p, g, free);
    Eigen::Index release = -1;
    double most_negative = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (fixed[static_cast<std::size_t>(i)] && mu(i) < most_negative) {
        most_negative = mu(i);
        release = i;
      }
    }
    const double g_scale = std::max(1.0, g.cwiseAbs().maxCoeff());
    if (release < 0 || most_negative >= -std::max(opt.dual_tol * g_scale, 1e-14 * kkt_scale)) {
      res.converged = true;
      break;
    }
    fixed[static_cast<std::size_t>(release)] = false;
  }
  res.x = x;
  res.objective = p.objective(x);
  res.kkt = kkt_report(p, x);
  return res;
}

}  // namespace ecable
