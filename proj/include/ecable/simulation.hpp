#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "ecable/error.hpp"
#include "ecable/kinetics.hpp"
#include "ecable/state_space.hpp"
#include "ecable/transient.hpp"

namespace ecable {

/// mt19937_64 with seeds derived from (master seed, stream id), so trajectory i of an
/// ensemble draws the same numbers no matter how the ensemble is scheduled.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng for_stream(std::uint64_t master, std::uint64_t stream) {
    return Rng(mix(mix(master) ^ (stream + 0x9e3779b97f4a7c15ULL)));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

/// One logged transition; `post` is the affected cell's state right after it.
struct LoggedEvent {
  std::uint64_t k = 0;
  double t = 0.0;
  EventKind kind = EventKind::initial;
  int cell = 0;
  CellState post;
};

struct Trajectory {
  CellState initial;
  std::vector<LoggedEvent> events;
  std::uint64_t event_count = 0;
  double horizon = 0.0;
  bool dead = false;
  double death_time = std::numeric_limits<double>::infinity();
  CellState final_state;
};

struct SimOptions {
  bool record_log = true;
  std::uint64_t max_events = std::numeric_limits<std::uint64_t>::max();
};

namespace detail {

inline void check_horizon(const ExternalProfile& profile, double horizon) {
  if (!(horizon > 0.0)) fail(ErrorKind::invalid_argument, "simulation horizon must be positive");
  if (horizon > profile.end_time()) {
    fail(ErrorKind::invalid_argument, "external profile does not cover the simulation horizon");
  }
}

/// Exact event-driven walk of an isolated cell. `on_event(t, before, kind, after)` fires for
/// every transition. Waiting times crossing a segment boundary are discarded and redrawn
/// from the boundary under the new rates.
template <class OnEvent>
CellState walk_isolated(const RateModel& model, const ExternalProfile& profile, CellState s,
                        double horizon, Rng& rng, std::uint64_t max_events, OnEvent&& on_event) {
  const auto& segs = profile.segments();
  std::size_t seg = 0;
  double t = 0.0;
  std::uint64_t count = 0;
  std::array<RateEvent, 4> events{};
  while (!s.dead && count < max_events) {
    const ExternalState& ext = segs[seg].ext;
    const double stop = std::min(segs[seg].end, horizon);
    std::size_t n_events = 0;
    double total = 0.0;
    for_each_isolated_event(s, ext, model, [&](const RateEvent& e) {
      events[n_events++] = e;
      total += e.rate;
    });
    const double w = total > 0.0 ? rng.exponential(total) : std::numeric_limits<double>::infinity();
    if (t + w >= stop) {
      if (stop >= horizon || seg + 1 >= segs.size()) break;
      t = segs[seg].end;
      ++seg;
      continue;
    }
    t += w;
    const double target = rng.uniform() * total;
    double cum = 0.0;
    std::size_t pick = n_events - 1;
    for (std::size_t k = 0; k < n_events; ++k) {
      cum += events[k].rate;
      if (target < cum) {
        pick = k;
        break;
      }
    }
    const CellState next = apply_isolated_event(events[pick].kind, s);
    ++count;
    on_event(t, s, events[pick].kind, next);
    s = next;
  }
  return s;
}

}  // namespace detail

/// Exact stochastic simulation of an isolated cell up to `horizon` (may be infinite when
/// the profile's last segment is open-ended).
inline Trajectory simulate(const RateModel& model, const ExternalProfile& profile,
                           const CellState& init, double horizon, std::uint64_t seed,
                           const SimOptions& opt = {}) {
  detail::check_horizon(profile, horizon);
  if (init.dead || !init.within(model.caps)) {
    fail(ErrorKind::invalid_argument, "initial state must be a transient state within capacity");
  }
  Trajectory tr;
  tr.initial = init;
  tr.horizon = horizon;
  Rng rng(seed);
  tr.final_state = detail::walk_isolated(
      model, profile, init, horizon, rng, opt.max_events,
      [&](double t, const CellState&, EventKind kind, const CellState& after) {
        ++tr.event_count;
        if (opt.record_log) tr.events.push_back({tr.event_count, t, kind, 0, after});
        if (after.dead) {
          tr.dead = true;
          tr.death_time = t;
        }
      });
  return tr;
}

/// Empirical state statistics of an ensemble at fixed sample times. Means and variances
/// are over trajectories still alive; dead ones appear only in death_fraction.
struct EnsembleStats {
  std::vector<double> times;
  std::vector<double> mean_m, var_m, mean_n, var_n;
  std::vector<double> death_fraction;
  /// occupancy[k][i]: trajectories in transient state i at times[k].
  std::vector<std::vector<std::uint64_t>> occupancy;
  std::vector<std::uint64_t> dead_count;
  std::uint64_t n_traj = 0;
};

namespace detail {

inline std::size_t sample_index(const RowVector& dist, double u) {
  double cum = 0.0;
  for (Eigen::Index i = 0; i < dist.size(); ++i) {
    cum += dist(i);
    if (u < cum) return static_cast<std::size_t>(i);
  }
  return static_cast<std::size_t>(dist.size());  // the deficit: starts dead
}

}  // namespace detail

/// Trajectory i uses Rng::for_stream(master_seed, i). Sums are integer, so the result does
/// not depend on evaluation order.
inline EnsembleStats simulate_ensemble(const IsolatedIndex& space, const RateModel& model,
                                       const ExternalProfile& profile, const RowVector& init_dist,
                                       std::span<const double> times, std::uint64_t n_traj,
                                       std::uint64_t master_seed) {
  if (n_traj < 1) fail(ErrorKind::invalid_argument, "ensemble needs at least one trajectory");
  if (init_dist.size() != static_cast<Eigen::Index>(space.size())) {
    fail(ErrorKind::invalid_argument, "initial distribution size does not match the state space");
  }
  if ((init_dist.array() < 0.0).any() || init_dist.sum() > 1.0 + 1e-9) {
    fail(ErrorKind::invalid_argument, "initial distribution must be non-negative with mass <= 1");
  }
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] < 0.0 || (k > 0 && times[k] < times[k - 1])) {
      fail(ErrorKind::invalid_argument, "sample times must be non-negative and sorted");
    }
  }
  const double horizon = times.empty() ? 0.0 : times.back();
  if (horizon > profile.end_time()) {
    fail(ErrorKind::invalid_argument, "external profile does not cover the sample times");
  }

  const std::size_t nt = times.size();
  EnsembleStats st;
  st.times.assign(times.begin(), times.end());
  st.n_traj = n_traj;
  st.occupancy.assign(nt, std::vector<std::uint64_t>(space.size(), 0));
  st.dead_count.assign(nt, 0);
  std::vector<std::uint64_t> sum_m(nt, 0), sum_m2(nt, 0), sum_n(nt, 0), sum_n2(nt, 0);

  auto record = [&](std::size_t k, const CellState& s) {
    if (s.dead) {
      ++st.dead_count[k];
      return;
    }
    ++st.occupancy[k][space.index(s)];
    const auto m = static_cast<std::uint64_t>(s.m_ch);
    const auto n = static_cast<std::uint64_t>(s.n_atp);
    sum_m[k] += m;
    sum_m2[k] += m * m;
    sum_n[k] += n;
    sum_n2[k] += n * n;
  };

  for (std::uint64_t i = 0; i < n_traj; ++i) {
    Rng rng = Rng::for_stream(master_seed, i);
    const std::size_t start = detail::sample_index(init_dist, rng.uniform());
    CellState s = start < space.size() ? space.state(start) : CellState::dead_state();
    std::size_t next = 0;
    if (!s.dead && horizon > 0.0) {
      s = detail::walk_isolated(model, profile, s, horizon, rng,
                                std::numeric_limits<std::uint64_t>::max(),
                                [&](double t, const CellState& before, EventKind, const CellState&) {
                                  while (next < nt && times[next] < t) record(next++, before);
                                });
    }
    while (next < nt) record(next++, s);
  }

  st.mean_m.resize(nt);
  st.var_m.resize(nt);
  st.mean_n.resize(nt);
  st.var_n.resize(nt);
  st.death_fraction.resize(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    const auto alive = static_cast<double>(n_traj - st.dead_count[k]);
    st.death_fraction[k] = static_cast<double>(st.dead_count[k]) / static_cast<double>(n_traj);
    if (alive > 0.0) {
      st.mean_m[k] = static_cast<double>(sum_m[k]) / alive;
      st.mean_n[k] = static_cast<double>(sum_n[k]) / alive;
      st.var_m[k] = std::max(0.0, static_cast<double>(sum_m2[k]) / alive - st.mean_m[k] * st.mean_m[k]);
      st.var_n[k] = std::max(0.0, static_cast<double>(sum_n2[k]) / alive - st.mean_n[k] * st.mean_n[k]);
    } else {
      st.mean_m[k] = st.mean_n[k] = st.var_m[k] = st.var_n[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return st;
}

/// Death times of n independent cells started from init_dist; +inf for survivors.
inline std::vector<double> sample_lifetimes(const IsolatedIndex& space, const RateModel& model,
                                            const ExternalProfile& profile,
                                            const RowVector& init_dist, std::uint64_t n,
                                            std::uint64_t master_seed) {
  std::vector<double> out(n, std::numeric_limits<double>::infinity());
  const double horizon = profile.end_time();
  for (std::uint64_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_stream(master_seed, i);
    const std::size_t start = detail::sample_index(init_dist, rng.uniform());
    if (start >= space.size()) {
      out[i] = 0.0;
      continue;
    }
    detail::walk_isolated(model, profile, space.state(start), horizon, rng,
                          std::numeric_limits<std::uint64_t>::max(),
                          [&](double t, const CellState&, EventKind, const CellState& after) {
                            if (after.dead) out[i] = t;
                          });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cables

/// Electron bookkeeping of one pool: in - out == final - initial.
struct PoolLedger {
  std::int64_t in = 0;
  std::int64_t out = 0;
  int initial = 0;
  int final_level = 0;

  bool balanced() const { return in - out == static_cast<std::int64_t>(final_level - initial); }
};

struct CableTrajectory {
  CableState initial;
  CableState final_state;
  std::vector<LoggedEvent> events;
  std::uint64_t event_count = 0;
  double horizon = 0.0;
  double end_time = 0.0;
  bool dead = false;
  int dead_cell = -1;
  double death_time = std::numeric_limits<double>::infinity();
  std::vector<PoolLedger> ledger;  // one entry per pool
};

namespace detail {

inline void post_to_ledger(const RateEvent& e, std::size_t n_cells, std::vector<PoolLedger>& ledger) {
  const auto c = static_cast<std::size_t>(e.cell);
  switch (e.kind) {
    case EventKind::anaerobic_synthesis: ++ledger[c + 1].in; break;
    case EventKind::heem_aerobic_synthesis: ++ledger[c].out; break;
    case EventKind::heem_anaerobic_synthesis: ++ledger[c].out; ++ledger[c + 1].in; break;
    case EventKind::electrode_in: ++ledger[0].in; break;
    case EventKind::electrode_out: ++ledger[n_cells].out; break;
    default: break;
  }
}

}  // namespace detail

/// Exact simulation of a cable of cells sharing inter-cell pools. The death of any cell
/// ends the run.
inline CableTrajectory simulate_cable(const CableIndex& space, const RateModel& model,
                                      std::span<const ExternalProfile> profiles,
                                      const CableState& init, double horizon, std::uint64_t seed,
                                      const SimOptions& opt = {}) {
  const auto n_cells = static_cast<std::size_t>(space.cells());
  if (profiles.size() != n_cells) fail(ErrorKind::invalid_argument, "need one profile per cell");
  if (!space.contains(init)) fail(ErrorKind::invalid_argument, "initial cable state out of range");
  for (const auto& p : profiles) detail::check_horizon(p, horizon);

  CableTrajectory tr;
  tr.initial = init;
  tr.horizon = horizon;
  tr.ledger.resize(space.pool_count());
  for (std::size_t p = 0; p < space.pool_count(); ++p) tr.ledger[p].initial = init.pools[p];

  const double profile_end = [&] {
    double e = std::numeric_limits<double>::infinity();
    for (const auto& p : profiles) e = std::min(e, p.end_time());
    return e;
  }();

  Rng rng(seed);
  CableState s = init;
  std::vector<ExternalState> ext(n_cells);
  std::vector<RateEvent> events;
  double t = 0.0;
  while (tr.event_count < opt.max_events) {
    double boundary = profile_end;
    for (std::size_t c = 0; c < n_cells; ++c) {
      const auto& segs = profiles[c].segments();
      const auto& seg = segs[profiles[c].segment_index_at(std::min(t, profiles[c].end_time()))];
      ext[c] = seg.ext;
      boundary = std::min(boundary, seg.end);
    }
    const double stop = std::min(boundary, horizon);
    events.clear();
    double total = 0.0;
    for_each_cable_event(space, s, ext, model, [&](const RateEvent& e) {
      events.push_back(e);
      total += e.rate;
    });
    const double w = total > 0.0 ? rng.exponential(total) : std::numeric_limits<double>::infinity();
    if (t + w >= stop) {
      if (stop >= horizon || stop >= profile_end) {
        t = std::min(stop, horizon);
        break;
      }
      t = boundary;
      continue;
    }
    t += w;
    const double target = rng.uniform() * total;
    double cum = 0.0;
    std::size_t pick = events.size() - 1;
    for (std::size_t k = 0; k < events.size(); ++k) {
      cum += events[k].rate;
      if (target < cum) {
        pick = k;
        break;
      }
    }
    const RateEvent& e = events[pick];
    ++tr.event_count;
    if (e.kind == EventKind::death) {
      tr.dead = true;
      tr.dead_cell = e.cell;
      tr.death_time = t;
      if (opt.record_log) tr.events.push_back({tr.event_count, t, e.kind, e.cell, CellState::dead_state()});
      break;
    }
    apply_cable_event(e, s);
    detail::post_to_ledger(e, n_cells, tr.ledger);
    if (opt.record_log) {
      tr.events.push_back({tr.event_count, t, e.kind, e.cell, s.cell(static_cast<std::size_t>(e.cell))});
    }
  }
  tr.end_time = t;
  tr.final_state = s;
  for (std::size_t p = 0; p < space.pool_count(); ++p) tr.ledger[p].final_level = s.pools[p];
  return tr;
}

}  // namespace ecable
