#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <numeric>

#include "ecable/simulation.hpp"
#include "ecable/transient.hpp"
#include "oracles.hpp"

using namespace ecable;

namespace {

RateModel small_model(int m, int n) {
  RateModel model;
  model.params = {0.01, 0.05, 0.2, 0.01};
  model.caps = {m, n};
  return model;
}

bool legal_step(const CellState& a, const CellState& b, EventKind kind) {
  if (b.dead) return kind == EventKind::death;
  const int dm = b.m_ch - a.m_ch;
  const int dn = b.n_atp - a.n_atp;
  switch (kind) {
    case EventKind::ed_diffusion: return dm == 1 && dn == 0;
    case EventKind::aerobic_synthesis: return dm == -1 && dn == 1;
    case EventKind::atp_consumption: return dm == 0 && dn == -1;
    default: return false;
  }
}

}  // namespace

TEST(RngTest, StreamsAreReproducibleAndDistinct) {
  Rng a = Rng::for_stream(42, 3), b = Rng::for_stream(42, 3), c = Rng::for_stream(42, 4);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_NE(Rng::for_stream(42, 3).uniform(), c.uniform());
}

TEST(RngTest, ExponentialMean) {
  Rng rng(7);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += rng.exponential(2.0);
  EXPECT_NEAR(sum / n, 0.5, 4.0 * 0.5 / std::sqrt(n));
}

TEST(Simulate, SameSeedSameTrajectory) {
  const RateModel model = small_model(5, 5);
  const auto profile = ExternalProfile::constant({2.0, 1.0});
  const auto init = CellState::alive(2, 1, 1, 0);
  const Trajectory a = simulate(model, profile, init, 500.0, 99);
  const Trajectory b = simulate(model, profile, init, 500.0, 99);
  ASSERT_EQ(a.events.size(), b.events.size());
  ASSERT_GT(a.events.size(), 10u);
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    EXPECT_EQ(a.events[i].t, b.events[i].t);
    EXPECT_EQ(a.events[i].post, b.events[i].post);
  }
  const Trajectory c = simulate(model, profile, init, 500.0, 100);
  EXPECT_FALSE(c.events.size() == a.events.size() && c.events.front().t == a.events.front().t);
}

TEST(Simulate, MovesAreLegalAndTimesIncrease) {
  RateModel model = small_model(4, 6);
  model.death = constant_rate(0.001);
  const ExternalProfile profile({{0, 100, {0.0, 1.0}}, {100, 300, {5.0, 0.5}}, {300, 1000, {1.0, 1.0}}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Trajectory tr = simulate(model, profile, CellState::alive(0, 3, 1, 0), 1000.0, seed);
    CellState prev = tr.initial;
    double t = 0.0;
    for (const auto& e : tr.events) {
      EXPECT_GT(e.t, t);
      EXPECT_LE(e.t, 1000.0);
      EXPECT_TRUE(legal_step(prev, e.post, e.kind)) << to_string(e.kind);
      EXPECT_TRUE(e.post.within(model.caps));
      // no electron donor before t = 100 means no ED events
      if (e.t < 100.0) {
        EXPECT_NE(e.kind, EventKind::ed_diffusion);
      }
      t = e.t;
      prev = e.post;
    }
    if (tr.dead) {
      EXPECT_EQ(tr.events.back().kind, EventKind::death);
    }
  }
}

TEST(Simulate, StallsWhenNoRates) {
  RateModel model = small_model(3, 3);
  model.params = {};
  const Trajectory tr = simulate(model, ExternalProfile::constant({1.0, 1.0}), CellState::alive(1, 1, 1, 0), 50.0, 1);
  EXPECT_TRUE(tr.events.empty());
  EXPECT_FALSE(tr.dead);
  EXPECT_EQ(tr.final_state, CellState::alive(1, 1, 1, 0));
}

TEST(Simulate, RejectsBadInput) {
  const RateModel model = small_model(3, 3);
  const auto profile = ExternalProfile::constant({1.0, 1.0});
  EXPECT_THROW(simulate(model, profile, CellState::alive(4, 0, 1, 0), 1.0, 1), Error);
  EXPECT_THROW(simulate(model, profile, CellState::alive(1, 0, 1, 0), -1.0, 1), Error);
  const ExternalProfile short_profile({{0, 10, {1.0, 1.0}}});
  EXPECT_THROW(simulate(model, short_profile, CellState::alive(1, 0, 1, 0), 20.0, 1), Error);
}

TEST(Simulate, MaxEventsCapsLength) {
  SimOptions opt;
  opt.max_events = 7;
  const Trajectory tr =
      simulate(small_model(5, 5), ExternalProfile::constant({5.0, 1.0}), CellState::alive(2, 2, 1, 0), 1e6, 3, opt);
  EXPECT_EQ(tr.event_count, 7u);
}

TEST(Simulate, DeathOnlyWaitingTimeIsExponential) {
  RateModel model = small_model(2, 2);
  model.params = {};
  model.death = constant_rate(2.0);
  const IsolatedIndex space(model.caps);
  RowVector pi0 = RowVector::Zero(static_cast<Eigen::Index>(space.size()));
  pi0(0) = 1.0;
  const auto samples = sample_lifetimes(space, model, ExternalProfile::constant({1.0, 1.0}), pi0, 100000, 5);
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  EXPECT_NEAR(mean, 0.5, 4.0 * 0.5 / std::sqrt(1e5));
}

TEST(Ensemble, OccupancyMatchesTransientByChiSquare) {
  RateModel model = small_model(3, 3);
  model.death = constant_rate(0.005);
  const IsolatedIndex space(model.caps);
  const ExternalProfile profile({{0, 20, {0.0, 1.0}}, {20, 80, {4.0, 0.7}}});
  RowVector pi0 = RowVector::Zero(static_cast<Eigen::Index>(space.size()));
  pi0(static_cast<Eigen::Index>(space.index(2, 0))) = 0.5;
  pi0(static_cast<Eigen::Index>(space.index(0, 3))) = 0.5;
  const std::vector<double> times{10.0, 40.0, 80.0};
  const std::uint64_t n = 20000;
  const EnsembleStats st = simulate_ensemble(space, model, profile, pi0, times, n, 2024);
  PiecewiseSolver solver(space, model, profile);
  RowVector cur = pi0;
  double prev_t = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    cur = solver.advance(cur, prev_t, times[k]);
    prev_t = times[k];
    std::vector<double> prob(space.size() + 1);
    std::vector<std::uint64_t> counts(space.size() + 1);
    for (std::size_t i = 0; i < space.size(); ++i) {
      prob[i] = cur(static_cast<Eigen::Index>(i));
      counts[i] = st.occupancy[k][i];
    }
    prob.back() = 1.0 - cur.sum();
    counts.back() = st.dead_count[k];
    const auto chi = oracle::chi_square(prob, counts, n);
    ASSERT_GT(chi.dof, 0);
    const boost::math::chi_squared dist(chi.dof);
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi.statistic)), 1e-3) << "t=" << times[k];
  }
}

TEST(Ensemble, IsReproducibleFromMasterSeed) {
  const RateModel model = small_model(3, 3);
  const IsolatedIndex space(model.caps);
  RowVector pi0 = RowVector::Constant(static_cast<Eigen::Index>(space.size()), 1.0 / 16.0);
  const std::vector<double> times{1.0, 5.0};
  const auto profile = ExternalProfile::constant({1.0, 1.0});
  const auto a = simulate_ensemble(space, model, profile, pi0, times, 500, 8);
  const auto b = simulate_ensemble(space, model, profile, pi0, times, 500, 8);
  EXPECT_EQ(a.occupancy, b.occupancy);
  EXPECT_EQ(a.mean_m, b.mean_m);
}

TEST(Ensemble, DeficitStartsDead) {
  const RateModel model = small_model(2, 2);
  const IsolatedIndex space(model.caps);
  RowVector pi0 = RowVector::Zero(static_cast<Eigen::Index>(space.size()));
  pi0(0) = 0.25;
  const std::vector<double> times{0.0};
  const auto st = simulate_ensemble(space, model, ExternalProfile::constant({1.0, 1.0}), pi0, times, 4000, 3);
  EXPECT_NEAR(st.death_fraction[0], 0.75, 4.0 * std::sqrt(0.75 * 0.25 / 4000));
}

TEST(Cable, OneCellReproducesIsolatedTrajectory) {
  RateModel model = small_model(4, 4);
  model.death = constant_rate(0.002);
  const ExternalProfile profile({{0, 50, {0.0, 1.0}}, {50, 400, {3.0, 0.8}}});
  RateModel cable_model = model;
  cable_model.mode = RateMode::cable;
  const CableIndex space(model.caps, 1);
  const std::vector<ExternalProfile> profiles{profile};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Trajectory iso = simulate(model, profile, CellState::alive(1, 2, 1, 0), 400.0, seed);
    const CableTrajectory cab = simulate_cable(space, cable_model, profiles, {{1}, {2}, {0, 0}}, 400.0, seed);
    ASSERT_EQ(iso.events.size(), cab.events.size());
    for (std::size_t i = 0; i < iso.events.size(); ++i) {
      EXPECT_EQ(iso.events[i].t, cab.events[i].t);
      EXPECT_EQ(iso.events[i].kind, cab.events[i].kind);
      EXPECT_EQ(iso.events[i].post.m_ch, cab.events[i].post.m_ch);
      EXPECT_EQ(iso.events[i].post.n_atp, cab.events[i].post.n_atp);
    }
    EXPECT_EQ(iso.dead, cab.dead);
  }
}

TEST(Cable, LedgerBalancesAndDeathEndsRun) {
  RateModel model = small_model(3, 3);
  model.mode = RateMode::cable;
  model.caps.q_l = 2;
  model.caps.q_h = 2;
  model.death = constant_rate(1e-4);
  model.cable.heem_synthesis = constant_rate(0.1);
  model.cable.anaerobic_weight = constant_rate(0.8);
  model.cable.electrode_in = 0.05;
  model.cable.electrode_out = 0.05;
  const CableIndex space(model.caps, 3);
  const std::vector<ExternalProfile> profiles{ExternalProfile::constant({2.0, 1.0}), ExternalProfile::constant({0.5, 0.2}),
                                              ExternalProfile::constant({1.0, 0.0})};
  int deaths = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const CableTrajectory tr = simulate_cable(space, model, profiles, {{1, 0, 2}, {0, 1, 1}, {1, 0, 2, 1}}, 5000.0, seed);
    for (std::size_t p = 0; p < tr.ledger.size(); ++p) {
      EXPECT_TRUE(tr.ledger[p].balanced()) << "pool " << p;
      EXPECT_EQ(tr.ledger[p].final_level, tr.final_state.pools[p]);
    }
    EXPECT_TRUE(space.contains(tr.final_state));
    if (tr.dead) {
      ++deaths;
      EXPECT_EQ(tr.events.back().kind, EventKind::death);
      EXPECT_EQ(tr.end_time, tr.death_time);
      EXPECT_GE(tr.dead_cell, 0);
    } else {
      EXPECT_EQ(tr.end_time, 5000.0);
    }
    double t = 0.0;
    for (const auto& e : tr.events) {
      EXPECT_GT(e.t, t);
      t = e.t;
    }
  }
  EXPECT_GT(deaths, 0);
}
