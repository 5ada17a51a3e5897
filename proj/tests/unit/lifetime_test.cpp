#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ecable/lifetime.hpp"
#include "ecable/simulation.hpp"
#include "oracles.hpp"

using namespace ecable;

namespace {

MarkovSystem death_only(double delta) { return MarkovSystem(Matrix::Zero(1, 1), Vector::Constant(1, delta)); }

// i -> j at a, j -> i at c, j -> DEAD at b.
MarkovSystem two_stage(double a, double b, double c = 0.0) {
  Matrix rates = Matrix::Zero(2, 2);
  rates(0, 1) = a;
  rates(1, 0) = c;
  Vector death(2);
  death << 0.0, b;
  return MarkovSystem(rates, death);
}

RowVector point(Eigen::Index n, Eigen::Index i) {
  RowVector v = RowVector::Zero(n);
  v(i) = 1.0;
  return v;
}

// Density of death at jump 2n summed over n: n sojourns in i (Gamma(n, a)) convolved with
// n sojourns in j (Gamma(n, b + c)), weighted by the jump-chain probability of the path.
double series_pdf(double a, double b, double c, double t) {
  const double r = b + c;
  double f = 0.0;
  double weight = b / r;
  for (int n = 1; n <= 80 && weight > 1e-16; ++n) {
    const int steps = 2000;
    const double h = t / steps;
    double conv = 0.0;
    for (int k = 0; k <= steps; ++k) {
      const double s = k * h;
      const double w = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      conv += w * oracle::erlang_pdf(n, a, s) * oracle::erlang_pdf(n, r, t - s);
    }
    f += weight * conv * h / 3.0;
    weight *= c / r;
  }
  return f;
}

RateModel random_cell(std::mt19937_64& rng, int m, int n) {
  std::uniform_real_distribution<double> rate(0.1, 5.0), death(0.01, 1.0);
  RateModel model;
  model.caps = {m, n};
  model.params = {rate(rng), rate(rng), rate(rng), rate(rng)};
  model.death = constant_rate(death(rng));
  return model;
}

}  // namespace

TEST(ExpectedLifetime, SingleStateIsInverseDeathRate) {
  EXPECT_DOUBLE_EQ(expected_lifetime(death_only(2.0), point(1, 0)), 0.5);
}

TEST(ExpectedLifetime, TwoStagesAddMeans) {
  EXPECT_NEAR(expected_lifetime(two_stage(3.0, 0.5), point(2, 0)), 1.0 / 3.0 + 2.0, 1e-14);
  EXPECT_NEAR(expected_lifetime(two_stage(3.0, 0.5), point(2, 1)), 2.0, 1e-14);
}

TEST(ExpectedLifetime, LoopAgreesWithGeometricVisits) {
  // Each visit to j ends in death with probability b/(b+c), so visits ~ Geometric.
  const double a = 1.5, b = 0.4, c = 2.0;
  const double visits = (b + c) / b;
  EXPECT_NEAR(expected_lifetime(two_stage(a, b, c), point(2, 0)), visits * (1.0 / a + 1.0 / (b + c)), 1e-12);
}

TEST(ExpectedLifetime, InfiniteWithoutReachableDeath) {
  EXPECT_TRUE(std::isinf(expected_lifetime(two_stage(1.0, 0.0, 1.0), point(2, 0))));
  // the unreachable dead end of an unused component does not matter
  Matrix rates = Matrix::Zero(3, 3);
  Vector death(3);
  death << 1.0, 0.0, 0.0;
  EXPECT_DOUBLE_EQ(expected_lifetime(MarkovSystem(rates, death), point(3, 0)), 1.0);
  EXPECT_TRUE(std::isinf(expected_lifetime(MarkovSystem(rates, death), point(3, 2))));
}

TEST(ExpectedLifetime, IsolatedCellWithoutDeathIsInfinite) {
  RateModel model;
  model.caps = {3, 3};
  model.params = {0.0, 2.31e-3, 4.866e-3, 0.85e-3};
  const IsolatedIndex space(model.caps);
  const auto sys = build_system(space, model, {30.0, 1.0});
  const auto r = analyze_lifetime(sys, point(16, 5));
  EXPECT_TRUE(std::isinf(r.expected));
  EXPECT_TRUE(r.pdf.empty());
}

TEST(ExpectedLifetime, RejectsBadDistribution) {
  EXPECT_THROW(expected_lifetime(death_only(1.0), RowVector::Constant(1, 1.5)), Error);
  EXPECT_THROW(expected_lifetime(death_only(1.0), RowVector::Constant(2, 0.5)), Error);
  EXPECT_THROW(expected_lifetime(death_only(1.0), RowVector::Constant(1, -0.1)), Error);
}

TEST(LifetimePdf, ExponentialValues) {
  const std::vector<double> grid{0.0, 0.5, 1.0};
  const auto f = lifetime_pdf(death_only(2.0), point(1, 0), grid);
  EXPECT_NEAR(f[0], 2.0, 1e-12);
  EXPECT_NEAR(f[1], 2.0 * std::exp(-1.0), 1e-12);
  EXPECT_NEAR(f[2], 0.27067, 1e-5);
  EXPECT_NEAR(f[2], 2.0 * std::exp(-2.0), 1e-12);
}

TEST(LifetimePdf, ZeroWithoutDeath) {
  RateModel model;
  model.caps = {2, 2};
  model.params = {0.1, 0.2, 0.3, 0.4};
  const auto sys = build_system(IsolatedIndex(model.caps), model, {1.0, 1.0});
  const auto grid = uniform_grid(100.0, 50);
  for (double v : lifetime_pdf(sys, point(9, 4), grid)) EXPECT_EQ(v, 0.0);
}

TEST(LifetimePdf, HypoexponentialClosedForm) {
  const double a = 2.0, b = 0.5;
  const auto sys = two_stage(a, b);
  const auto grid = uniform_grid(10.0, 21);
  const auto f = lifetime_pdf(sys, point(2, 0), grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    EXPECT_NEAR(f[k], a * b / (a - b) * (std::exp(-b * t) - std::exp(-a * t)), 1e-12);
  }
}

TEST(LifetimePdf, MatchesEventCountSeriesOnTwoStates) {
  const double a = 1.5, b = 0.4, c = 2.0;
  const auto sys = two_stage(a, b, c);
  const std::vector<double> grid{0.25, 1.0, 2.5, 6.0};
  const auto f = lifetime_pdf(sys, point(2, 0), grid);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(f[k], series_pdf(a, b, c, grid[k]), 1e-9) << grid[k];
}

TEST(LifetimePdf, IntegratesToOneAndMatchesMean) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const auto s = oracle::random_system(3, rng, 0.7, 0.1, 5.0, 0.01, 1.0);
    const MarkovSystem sys(s.rates, s.death);
    const RowVector pi0 = RowVector::Constant(3, 1.0 / 3.0);
    const double t_end = 50.0 / s.death.minCoeff();
    const auto grid = uniform_grid(t_end, 40001);
    const auto f = lifetime_pdf(sys, pi0, grid);
    EXPECT_NEAR(trapezoid(grid, f), 1.0, 1e-3);
    std::vector<double> tf(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) tf[k] = grid[k] * f[k];
    const double e = expected_lifetime(sys, pi0);
    EXPECT_NEAR(trapezoid(grid, tf), e, 5e-3 * e);
    EXPECT_TRUE(std::all_of(f.begin(), f.end(), [](double v) { return v >= 0.0; }));
  }
}

TEST(LifetimePdf, DefaultGridSpansTenMeans) {
  const auto r = analyze_lifetime(death_only(2.0), point(1, 0));
  EXPECT_DOUBLE_EQ(r.expected, 0.5);
  ASSERT_EQ(r.times.size(), 10000u);
  EXPECT_DOUBLE_EQ(r.times.back(), 5.0);
  EXPECT_NEAR(r.death_mass, 1.0, 1e-3);
}

TEST(LifetimePdf, RejectsUnsortedGrid) {
  const std::vector<double> grid{1.0, 0.5};
  EXPECT_THROW(lifetime_pdf(death_only(2.0), point(1, 0), grid), Error);
}

TEST(LifetimeMonteCarlo, ClosedFormWithinThreeStandardErrors) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 4; ++trial) {
    const RateModel model = random_cell(rng, 3, 3);
    const IsolatedIndex space(model.caps);
    const auto sys = build_system(space, model, {1.0, 1.0});
    const RowVector pi0 = RowVector::Constant(16, 1.0 / 16.0);
    const auto samples = sample_lifetimes(space, model, ExternalProfile::constant({1.0, 1.0}), pi0, 20000,
                                          static_cast<std::uint64_t>(trial));
    const double n = static_cast<double>(samples.size());
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / (n - 1.0) / n);
    EXPECT_NEAR(mean, expected_lifetime(sys, pi0), 3.0 * se);
  }
}

TEST(LifetimeMonteCarlo, DistributionPassesKolmogorovSmirnov) {
  std::mt19937_64 rng(78);
  const auto s = oracle::random_system(3, rng, 0.7, 0.1, 5.0, 0.01, 1.0);
  const MarkovSystem sys(s.rates, s.death);
  const RowVector pi0 = point(3, 0);
  // sample the absorption time straight from the rates
  Rng sampler(4);
  const int n = 20000;
  std::vector<double> samples(n);
  for (auto& out : samples) {
    Eigen::Index i = 0;
    double t = 0.0;
    for (;;) {
      t += sampler.exponential(sys.total_rates()(i));
      const double u = sampler.uniform();
      double cum = 0.0;
      Eigen::Index next = -1;
      for (Eigen::Index j = 0; j < 3; ++j) {
        cum += sys.jump()(i, j);
        if (u < cum) {
          next = j;
          break;
        }
      }
      if (next < 0) break;
      i = next;
    }
    out = t;
  }
  std::sort(samples.begin(), samples.end());
  const auto grid = uniform_grid(50.0 / s.death.minCoeff(), 50001);
  const auto f = lifetime_pdf(sys, pi0, grid);
  std::vector<double> cdf(grid.size(), 0.0);
  for (std::size_t k = 1; k < grid.size(); ++k) cdf[k] = cdf[k - 1] + 0.5 * (grid[k] - grid[k - 1]) * (f[k] + f[k - 1]);
  double d = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto it = std::lower_bound(grid.begin(), grid.end(), samples[static_cast<std::size_t>(k)]);
    const auto j = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - grid.begin(), static_cast<std::ptrdiff_t>(grid.size() - 1)));
    const double c = cdf[j];
    d = std::max({d, std::abs(c - static_cast<double>(k) / n), std::abs(c - static_cast<double>(k + 1) / n)});
  }
  EXPECT_LT(d, 1.63 / std::sqrt(static_cast<double>(n)));
}
