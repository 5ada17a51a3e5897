// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as arguments
// to run a subset.

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ecable/ecable.hpp"
#include "oracles.hpp"

using namespace ecable;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const ParamVector kFitted{0.0, 2.31e-3, 4.866e-3, 0.850e-3};

// Donor at 30 mM from t = 80 s, falling linearly to zero at 1300 s in 20 s steps.
ExternalProfile decay_profile() { return ExternalProfile::linear_decay(80.0, 30.0, 1300.0, 20.0, 1.0, 0.0, 0.0, 1400.0); }

RowVector random_distribution(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowVector pi(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < pi.size(); ++i) pi(i) = u(rng) * u(rng);
  return pi / pi.sum();
}

// pi0' prod_k exp(A_k len_k) with generators assembled straight from the rate functions.
RowVector oracle_distribution(const IsolatedIndex& space, const RateModel& model, const ExternalProfile& profile,
                              const RowVector& pi0, double t) {
  Eigen::RowVectorXd cur = pi0;
  for (const auto& seg : profile.segments()) {
    const double len = std::min(seg.end, t) - seg.start;
    if (len <= 0.0) break;
    Eigen::MatrixXd rates;
    Eigen::VectorXd death;
    oracle::isolated_rates(space, model, seg.ext, rates, death);
    cur = cur * oracle::series_expm(oracle::generator_from(rates, death) * len);
  }
  return cur;
}

// Lifetime: closed form vs the Monte Carlo mean of the death time.
Outcome lifetime_vs_simulation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> cap(1, 5);
  std::uniform_real_distribution<double> rate(0.1, 5.0), delta(0.01, 1.0);
  const int systems = 20;
  const std::uint64_t n = 100000;
  int within_se = 0, within_pct = 0;
  double worst_z = 0.0, worst_rel = 0.0;
  for (int s = 0; s < systems; ++s) {
    RateModel model;
    model.caps = {cap(rng), cap(rng)};
    model.params = {rate(rng), rate(rng), rate(rng), rate(rng)};
    const int stride = model.caps.n_axp + 1;
    std::vector<double> table(static_cast<std::size_t>((model.caps.m_ch + 1) * stride));
    for (double& d : table) d = delta(rng);
    model.death = [table, stride](const CellState& c, const ExternalState&) {
      return table[static_cast<std::size_t>(c.m_ch * stride + c.n_atp)];
    };
    const IsolatedIndex space(model.caps);
    const ExternalProfile profile = ExternalProfile::constant({1.0, 1.0});
    const RowVector pi0 = random_distribution(space.size(), rng);
    const double closed = expected_lifetime(build_system(space, model, {1.0, 1.0}), pi0);
    const auto samples = sample_lifetimes(space, model, profile, pi0, n, 7000 + static_cast<std::uint64_t>(s));
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    const double z = std::abs(mean - closed) / se;
    const double rel = std::abs(mean - closed) / closed;
    worst_z = std::max(worst_z, z);
    worst_rel = std::max(worst_rel, rel);
    within_se += z <= 3.0;
    within_pct += rel <= 0.01;
  }
  const double secs = seconds_since(t0);
  const bool pass = within_se == systems && within_pct >= (9 * systems + 9) / 10 && secs < 120.0;
  return {pass, fmt("%d systems x %llu runs: %d/%d within 3 SE (max %.2f SE), %d/%d within 1%% (max %.3g), %.1f s",
                    systems, static_cast<unsigned long long>(n), within_se, systems, worst_z, within_pct, systems,
                    worst_rel, secs)};
}

// Step-powered P_t vs uniformization and a scaled-and-squared series.
Outcome solver_vs_uniformization() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  double worst = 0.0, worst_first_order = 0.0;
  int checks = 0;
  for (int n : {2, 5, 10, 20, 35, 50}) {
    for (int rep = 0; rep < 2; ++rep) {
      const auto s = oracle::random_system(n, rng, 0.3, 0.1, 5.0, 0.0, 0.5);
      const MarkovSystem sys(s.rates, s.death);
      const double r = sys.max_rate();
      const double delta = 1e-4 / r;
      const Eigen::MatrixXd gen = s.generator();
      for (double scale : {0.1, 1.0, 10.0}) {
        const double t = scale / r;
        const Matrix p = transient_at(sys, t, delta);
        const Matrix u = uniformization_oracle(sys, t);
        const Eigen::MatrixXd e = oracle::series_expm(gen * t);
        worst = std::max({worst, (p - u).cwiseAbs().maxCoeff(), (p - e).cwiseAbs().maxCoeff()});
        worst_first_order = std::max(worst_first_order, (transient_at(sys, t, delta, 1) - e).cwiseAbs().maxCoeff());
        ++checks;
      }
    }
  }
  return {worst <= 1e-6, fmt("%d (system, t) pairs up to 50 states at delta = 1e-4/max R: max-abs %.2e "
                             "(first-order steps alone: %.2e), %.1f s",
                             checks, worst, worst_first_order, seconds_since(t0))};
}

// Row sums of P_t stay 1 without death.
Outcome conservation() {
  const auto t0 = std::chrono::steady_clock::now();
  RateModel model;
  model.caps = {20, 20};
  model.params = kFitted;
  const PiecewiseSolver solver(IsolatedIndex(model.caps), model, decay_profile());
  const Matrix p = solver.transient(1300.0);
  const double dev = (p.rowwise().sum().array() - 1.0).abs().maxCoeff();
  return {dev <= 1e-9, fmt("M=N=20, t=1300: max |row sum - 1| = %.2e, min entry %.2e, %.1f s", dev, p.minCoeff(),
                           seconds_since(t0))};
}

// Analytic NLL gradient vs central differences.
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0), px(0.005, 0.1), sig(0.2, 3.0);
  const Capacities caps{3, 3};
  const IsolatedIndex space(caps);
  double worst = 0.0;
  int instances = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const ExternalProfile profile({{0, 8, {sig(rng), 1.0}}, {8, 20, {sig(rng), u(rng)}}, {20, 200, {sig(rng), u(rng)}}});
    const std::size_t samples = 3 + static_cast<std::size_t>(trial % 6);
    TimeSeries ts;
    for (std::size_t k = 0; k < samples; ++k) {
      ts.t.push_back(8.0 * static_cast<double>(k));
      ts.y.push_back({3.0 * u(rng), 3.0 * u(rng)});
    }
    const ParamVector x{px(rng), px(rng), px(rng), px(rng)};
    const RowVector pi0 = random_distribution(space.size(), rng);
    const Likelihood lik(space, ts, profile, 1.0);
    const auto g = nll_gradient(x, pi0, ts, profile, caps, 1.0);
    const auto f = [&](const std::array<double, 4>& a) { return lik.nll(ParamVector::from_array(a), pi0); };
    for (std::size_t j = 0; j < 4; ++j) {
      // Richardson-extrapolated central difference
      const double h = 1e-3 * x[j];
      const double d1 = oracle::central_difference(f, x.as_array(), j, h);
      const double d2 = oracle::central_difference(f, x.as_array(), j, h / 2.0);
      const double fd = (4.0 * d2 - d1) / 3.0;
      worst = std::max(worst, std::abs(fd - g[j]) / std::abs(g[j]));
    }
    ++instances;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("%d instances on M=N=3: max componentwise relative error %.2e, %.1f s", instances, worst, secs)};
}

// Noiseless synthetic series, fitted from starts perturbed by factors of 2.
Outcome synthetic_recovery() {
  const IsolatedIndex space({20, 20});
  const ExternalProfile profile = decay_profile();
  const double period = 20.0;
  const double delta = period / 32.0;
  TimeSeries ts;
  for (int k = 0; k <= 65; ++k) {
    ts.t.push_back(period * k);
    ts.y.push_back({8.0, 12.0});
  }
  const Likelihood probe(space, ts, profile, delta);
  const RowVector pi_true = probe.feasible_pi0();
  ts.y = probe.expected_observations(kFitted, pi_true);
  const Likelihood lik(space, ts, profile, delta);
  const double nll_truth = lik.nll(kFitted, pi_true);

  bool pass = true;
  std::string detail = fmt("66 samples, T/delta = 32, NLL(x*) = %.1e;", nll_truth);
  for (bool up : {true, false}) {
    const auto t0 = std::chrono::steady_clock::now();
    const double a = up ? 2.0 : 0.5;
    const ParamVector start{kFitted.gamma * a, kFitted.rho * a, kFitted.zeta / a, kFitted.beta * a};
    const FitResult r = fit(lik, start, {});
    const double secs = seconds_since(t0);
    double worst = 0.0;
    for (std::size_t j = 1; j < 4; ++j) worst = std::max(worst, std::abs(r.x[j] / kFitted[j] - 1.0));
    const bool ok = r.nll <= nll_truth + 1e-8 && worst <= 0.1 && secs < 600.0;
    pass = pass && ok;
    detail += fmt(" start %s: NLL %.2e, max rel error (rho, zeta, beta) %.1e, %zu iterations, %.0f s;",
                  up ? "(x2, x2, /2, x2)" : "(/2, /2, x2, /2)", r.nll, worst, r.trace.size() - 1, secs);
  }
  detail.pop_back();
  return {pass, detail};
}

// Expected ATP level and per-cell rate peaks with the fitted parameters.
Outcome plausibility() {
  const auto t0 = std::chrono::steady_clock::now();
  RateModel model;
  model.caps = {20, 20};
  model.params = kFitted;
  const IsolatedIndex space(model.caps);
  const ExternalProfile profile = decay_profile();
  // starting levels of 4 NADH units and 10 ATP units (1.8 mM)
  TimeSeries first;
  first.t = {0.0};
  first.y = {{4.0, 10.0}};
  const RowVector pi0 = Likelihood(space, first, profile, 1.0).feasible_pi0();
  const auto grid = uniform_grid(1300.0, 1301);
  const auto rows = predict(model, pi0, profile, grid, 12.985 / 20.0, 3.6 / 20.0);
  double atp = 0.0, syn = 0.0, con = 0.0, gen = 0.0, ncon = 0.0;
  for (const auto& r : rows) {
    atp = std::max(atp, r.atp_raw);
    syn = std::max(syn, r.rate_atp_syn);
    con = std::max(con, r.rate_atp_con);
    gen = std::max(gen, r.rate_nadh_gen);
    ncon = std::max(ncon, r.rate_nadh_con);
  }
  const auto band = [](double v, double ref) { return v >= ref / 3.0 && v <= ref * 3.0; };
  const bool pass = atp <= 3.6 && band(syn, 5e5) && band(con, 3e6) && band(gen, 2e6) && band(ncon, 2e5);
  return {pass, fmt("peak ATP %.3f mM; peak rates ATP syn %.2e / con %.2e, NADH gen %.2e / con %.2e "
                    "molecules/cell/s, %.1f s",
                    atp, syn, con, gen, ncon, seconds_since(t0))};
}

// Occupancy of simulated cells vs pi0' P_t.
Outcome simulator_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(707);
  RateModel model;
  model.caps = {4, 4};
  model.params = {0.05, 0.3, 0.4, 0.1};
  model.death = constant_rate(0.02);
  const IsolatedIndex space(model.caps);
  const ExternalProfile profile({{0, 3, {0.0, 1.0}}, {3, 8, {2.0, 0.7}}, {8, 100, {0.5, 1.0}}});
  const RowVector pi0 = random_distribution(space.size(), rng);
  const double t = 10.0;
  const std::uint64_t n = 100000;
  const std::vector<double> times{t};
  const EnsembleStats st = simulate_ensemble(space, model, profile, pi0, times, n, 4242);
  const RowVector ref = oracle_distribution(space, model, profile, pi0, t);
  std::vector<double> prob(space.size() + 1);
  std::vector<std::uint64_t> counts(space.size() + 1);
  for (std::size_t i = 0; i < space.size(); ++i) {
    prob[i] = ref(static_cast<Eigen::Index>(i));
    counts[i] = st.occupancy[0][i];
  }
  prob.back() = 1.0 - ref.sum();
  counts.back() = st.dead_count[0];
  const auto chi = oracle::chi_square(prob, counts, n);
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(chi.dof), chi.statistic));
  return {p > 0.01, fmt("25 states + DEAD, 1e5 runs to t = %.0f: chi2 = %.2f on %d dof, p = %.3f, %.1f s", t,
                        chi.statistic, chi.dof, p, seconds_since(t0))};
}

// Pool ledgers of 3-cell cables, recounted from the event logs.
Outcome cable_ledger() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<int> cap(1, 4), pool(1, 3);
  std::uniform_real_distribution<double> rate(0.1, 5.0), unit(0.0, 1.0);
  const std::uint64_t events = 10000;
  int runs = 0, balanced = 0;
  std::uint64_t total_events = 0;
  for (int run = 0; run < 20; ++run) {
    RateModel model;
    model.mode = RateMode::cable;
    model.caps = {cap(rng), cap(rng), pool(rng), pool(rng)};
    model.params = {rate(rng), rate(rng), rate(rng), rate(rng)};
    model.cable.heem_synthesis = constant_rate(rate(rng));
    model.cable.anaerobic_weight = constant_rate(rate(rng));
    model.cable.aerobic_affinity = rate(rng);
    model.cable.electrode_in = rate(rng);
    model.cable.electrode_out = rate(rng);
    const CableIndex space(model.caps, 3);
    std::vector<ExternalProfile> profiles;
    for (int c = 0; c < 3; ++c) profiles.push_back(ExternalProfile::constant({rate(rng), unit(rng)}));
    CableState init;
    for (int c = 0; c < 3; ++c) {
      init.m_ch.push_back(static_cast<int>(rng() % static_cast<unsigned>(model.caps.m_ch + 1)));
      init.n_atp.push_back(static_cast<int>(rng() % static_cast<unsigned>(model.caps.n_axp + 1)));
    }
    for (int p = 0; p < 4; ++p) {
      init.pools.push_back(static_cast<int>(rng() % static_cast<unsigned>(space.pool_capacity(p) + 1)));
    }
    const CableTrajectory tr =
        simulate_cable(space, model, profiles, init, 1e15, 9000 + static_cast<std::uint64_t>(run), {true, events});
    ++runs;
    total_events += tr.event_count;

    // Replay the log: every event moves pools by fixed integer amounts.
    std::vector<long> in(4, 0), out(4, 0);
    const long electrons = std::accumulate(init.m_ch.begin(), init.m_ch.end(), 0L) +
                     std::accumulate(init.pools.begin(), init.pools.end(), 0L);
    long sources = 0, sinks = 0;
    bool ok = tr.event_count == events && !tr.dead;
    for (const auto& e : tr.events) {
      const auto c = static_cast<std::size_t>(e.cell);
      switch (e.kind) {
        case EventKind::ed_diffusion: ++sources; break;
        case EventKind::aerobic_synthesis: ++sinks; break;
        case EventKind::anaerobic_synthesis: ++in[c + 1]; break;
        case EventKind::heem_aerobic_synthesis: ++out[c]; ++sinks; break;
        case EventKind::heem_anaerobic_synthesis: ++out[c]; ++in[c + 1]; break;
        case EventKind::electrode_in: ++in[0]; ++sources; break;
        case EventKind::electrode_out: ++out[3]; ++sinks; break;
        default: break;
      }
      const auto level = [&](std::size_t p) { return init.pools[p] + in[p] - out[p]; };
      ok = ok && e.post.q_h == level(c) && e.post.q_l == level(c + 1);
    }
    const long final_electrons = std::accumulate(tr.final_state.m_ch.begin(), tr.final_state.m_ch.end(), 0L) +
                           std::accumulate(tr.final_state.pools.begin(), tr.final_state.pools.end(), 0L);
    ok = ok && final_electrons - electrons == sources - sinks;
    for (std::size_t p = 0; p < 4; ++p) {
      ok = ok && in[p] - out[p] == tr.final_state.pools[p] - init.pools[p];
      ok = ok && tr.ledger[p].in == in[p] && tr.ledger[p].out == out[p] && tr.ledger[p].balanced();
    }
    balanced += ok;
  }
  return {balanced == runs, fmt("%d random 3-cell cables, %llu events: %d/%d ledgers balance and match the "
                                "recount from the event log, %.1f s",
                                runs, static_cast<unsigned long long>(total_events), balanced, runs,
                                seconds_since(t0))};
}

// Splitting constant segments leaves P_t unchanged.
Outcome split_invariance() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int splits = 0;
  for (int trial = 0; trial < 10; ++trial) {
    RateModel model;
    model.caps = {5, 5};
    model.params = {0.02 + 0.1 * u(rng), 0.05 + 0.2 * u(rng), 0.1 + 0.3 * u(rng), 0.02 + 0.1 * u(rng)};
    model.death = constant_rate(0.01 * u(rng));
    const IsolatedIndex space(model.caps);
    const ExternalProfile base = ExternalProfile::linear_decay(2.0, 3.0, 12.0, 2.5, 0.8, 0.5, 0.1, 20.0);
    ExternalProfile cut = base;
    for (int k = 0; k < 4; ++k) {
      const auto i = static_cast<std::size_t>(rng() % cut.segments().size());
      const auto& s = cut.segments()[i];
      cut = cut.split(i, s.start + (0.05 + 0.9 * u(rng)) * (s.end - s.start));
      ++splits;
    }
    const double t = 19.0;
    const Matrix a = PiecewiseSolver(space, model, base).transient(t);
    const Matrix b = PiecewiseSolver(space, model, cut).transient(t);
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  RateModel cable;
  cable.mode = RateMode::cable;
  cable.caps = {1, 1};
  cable.params = {0.3, 0.4, 0.5, 0.2};
  cable.cable.heem_synthesis = constant_rate(0.3);
  cable.cable.anaerobic_weight = constant_rate(0.6);
  cable.cable.electrode_in = 0.2;
  const CableIndex space(cable.caps, 2);
  const std::vector<ExternalProfile> whole{ExternalProfile({{0, 2, {1.0, 1.0}}, {2, 9, {2.0, 0.4}}}),
                                           ExternalProfile::constant({0.5, 0.8})};
  const std::vector<ExternalProfile> cut{whole[0].split(1, 3.7).split(0, 0.6), whole[1].split(0, 5.1)};
  worst = std::max(worst, (transient_piecewise(space, cable, whole, 8.0) -
                           transient_piecewise(space, cable, cut, 8.0)).cwiseAbs().maxCoeff());
  splits += 3;
  return {worst < 1e-9, fmt("%d random splits (isolated M=N=5 and a 2-cell cable): max-abs change %.2e, %.1f s",
                            splits, worst, seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"closed-form expected lifetime vs Monte Carlo", lifetime_vs_simulation},
      {"transient solver vs uniformization", solver_vs_uniformization},
      {"probability conservation without death", conservation},
      {"likelihood gradient vs finite differences", gradient_check},
      {"synthetic parameter recovery", synthetic_recovery},
      {"fitted-parameter plausibility", plausibility},
      {"simulator occupancy chi-square", simulator_exactness},
      {"cable electron ledger", cable_ledger},
      {"piecewise split invariance", split_invariance},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
