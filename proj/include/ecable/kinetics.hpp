#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ecable/error.hpp"
#include "ecable/state_space.hpp"

namespace ecable {

/// Ambient electron donor / acceptor levels seen by a cell. sigma_a is a dimensionless
/// availability when the acceptor is "sufficient" (1.0 by convention).
struct ExternalState {
  double sigma_d = 0.0;  // mM
  double sigma_a = 1.0;

  friend bool operator==(const ExternalState&, const ExternalState&) = default;
};

struct ProfileSegment {
  double start = 0.0;
  double end = std::numeric_limits<double>::infinity();
  ExternalState ext;

  friend bool operator==(const ProfileSegment&, const ProfileSegment&) = default;
};

/// Piecewise-constant external state over [0, end_time()).
class ExternalProfile {
 public:
  ExternalProfile() : ExternalProfile(constant({})) {}

  explicit ExternalProfile(std::vector<ProfileSegment> segments) : segments_(std::move(segments)) {
    validate();
  }

  static ExternalProfile constant(const ExternalState& ext) {
    return ExternalProfile({ProfileSegment{0.0, std::numeric_limits<double>::infinity(), ext}});
  }

  /// sigma_d = `before` on [0, onset), then a staircase of width `step` sampling the line
  /// from `peak` at onset down to 0 at `zero_at` (left-endpoint values), then `after`.
  static ExternalProfile linear_decay(double onset, double peak, double zero_at, double step,
                                      double sigma_a = 1.0, double before = 0.0,
                                      double after = 0.0,
                                      double end = std::numeric_limits<double>::infinity()) {
    if (!(onset >= 0.0) || !(zero_at > onset) || !(step > 0.0) || !(end > zero_at)) {
      fail(ErrorKind::invalid_argument, "linear_decay needs 0 <= onset < zero_at < end and step > 0");
    }
    std::vector<ProfileSegment> segs;
    if (onset > 0.0) segs.push_back({0.0, onset, {before, sigma_a}});
    const auto pieces = static_cast<long>(std::ceil((zero_at - onset) / step - 1e-9));
    for (long k = 0; k < pieces; ++k) {
      const double a = onset + static_cast<double>(k) * step;
      const double b = (k + 1 == pieces) ? zero_at : onset + static_cast<double>(k + 1) * step;
      const double level = peak * (zero_at - a) / (zero_at - onset);
      segs.push_back({a, b, {level, sigma_a}});
    }
    segs.push_back({zero_at, end, {after, sigma_a}});
    return ExternalProfile(std::move(segs));
  }

  const std::vector<ProfileSegment>& segments() const { return segments_; }
  double end_time() const { return segments_.back().end; }

  std::size_t segment_index_at(double t) const {
    if (t < 0.0 || t >= end_time()) {
      if (!(t == end_time() && t > 0.0)) {
        fail(ErrorKind::invalid_argument,
             "time " + std::to_string(t) + " outside the external profile span");
      }
      return segments_.size() - 1;
    }
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double v, const ProfileSegment& s) { return v < s.start; });
    return static_cast<std::size_t>(std::distance(segments_.begin(), it)) - 1;
  }

  const ExternalState& at(double t) const { return segments_[segment_index_at(t)].ext; }

  /// The same profile with segment `i` split at interior point `t`.
  ExternalProfile split(std::size_t i, double t) const {
    const auto& s = segments_.at(i);
    if (!(t > s.start && t < s.end)) fail(ErrorKind::invalid_argument, "split point not interior");
    auto segs = segments_;
    segs[i].end = t;
    segs.insert(segs.begin() + static_cast<std::ptrdiff_t>(i) + 1, ProfileSegment{t, s.end, s.ext});
    return ExternalProfile(std::move(segs));
  }

  friend bool operator==(const ExternalProfile&, const ExternalProfile&) = default;

 private:
  void validate() const {
    if (segments_.empty()) fail(ErrorKind::invalid_argument, "external profile has no segments");
    if (segments_.front().start != 0.0) {
      fail(ErrorKind::invalid_argument, "external profile must start at t = 0");
    }
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& s = segments_[i];
      if (!(s.start < s.end)) {
        fail(ErrorKind::invalid_argument, "profile segment " + std::to_string(i) +
                                              " has start >= end");
      }
      if (!(s.ext.sigma_d >= 0.0) || !(s.ext.sigma_a >= 0.0) || std::isinf(s.ext.sigma_d) ||
          std::isinf(s.ext.sigma_a)) {
        fail(ErrorKind::invalid_argument,
             "profile segment " + std::to_string(i) + " has a negative or non-finite level");
      }
      if (i > 0) {
        const double prev_end = segments_[i - 1].end;
        if (s.start < prev_end) {
          fail(ErrorKind::invalid_argument, "profile segments " + std::to_string(i - 1) + " and " +
                                                std::to_string(i) + " overlap");
        }
        if (s.start > prev_end) {
          fail(ErrorKind::invalid_argument, "gap between profile segments " +
                                                std::to_string(i - 1) + " and " +
                                                std::to_string(i));
        }
      }
    }
  }

  std::vector<ProfileSegment> segments_;
};

/// x = [gamma, rho, zeta, beta].
struct ParamVector {
  double gamma = 0.0;  // units/mM/s
  double rho = 0.0;    // units/mM/s
  double zeta = 0.0;   // units/s
  double beta = 0.0;   // units/mM/s

  static constexpr std::size_t size() { return 4; }

  double& operator[](std::size_t i) { return i == 0 ? gamma : i == 1 ? rho : i == 2 ? zeta : beta; }
  double operator[](std::size_t i) const {
    return i == 0 ? gamma : i == 1 ? rho : i == 2 ? zeta : beta;
  }

  std::array<double, 4> as_array() const { return {gamma, rho, zeta, beta}; }
  static ParamVector from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

  bool nonnegative() const { return gamma >= 0.0 && rho >= 0.0 && zeta >= 0.0 && beta >= 0.0; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

inline constexpr std::array<const char*, 4> kParamNames = {"gamma", "rho", "zeta", "beta"};

using StateRate = std::function<double(const CellState&, const ExternalState&)>;

/// Cable-only flows. Synthesis events pair a source (IECP or HEEM) with an exit route;
/// the rate of a pair is source_rate * route_weight, so
///   mu_CH + mu_EXT^H == lambda_EXT^L + mu_OUT
/// holds with mu_OUT = (sources) * sigma_a * aerobic_affinity.
struct CableKinetics {
  /// Potential HEEM -> ETC flow (units/s) before clamping; null means zero.
  StateRate heem_synthesis;
  double aerobic_affinity = 1.0;
  /// Dimensionless weight of the anaerobic (LEEM) route; null means zero.
  StateRate anaerobic_weight;
  double electrode_in = 0.0;   // units/s into the first cell's HEEM
  double electrode_out = 0.0;  // units/s out of the last cell's LEEM
};

enum class RateMode { isolated, cable };

struct RateModel {
  ParamVector params;
  Capacities caps;
  StateRate death;  // null means zero
  RateMode mode = RateMode::isolated;
  CableKinetics cable;

  double death_rate(const CellState& s, const ExternalState& ext) const {
    return death ? death(s, ext) : 0.0;
  }

  void validate() const {
    caps.validate();
    if (!params.nonnegative()) fail(ErrorKind::invalid_argument, "rate parameters must be >= 0");
    if (cable.aerobic_affinity < 0.0 || cable.electrode_in < 0.0 || cable.electrode_out < 0.0) {
      fail(ErrorKind::invalid_argument, "cable rates must be >= 0");
    }
  }
};

inline StateRate constant_rate(double r) {
  return [r](const CellState&, const ExternalState&) { return r; };
}

// ---------------------------------------------------------------------------
// Parametric flows of an isolated cell. Each evaluates the formula, then applies the
// empty-source / full-destination clamp.

/// lambda_CH = gamma*sigma_d + rho*(1 - m/M)*sigma_d; zero at a full IECP.
inline double rate_nadh_gen(const CellState& s, const ExternalState& ext, const RateModel& model) {
  const double m_frac = static_cast<double>(s.m_ch) / static_cast<double>(model.caps.m_ch);
  const double rate = model.params.gamma * ext.sigma_d + model.params.rho * (1.0 - m_frac) * ext.sigma_d;
  if (s.m_ch >= model.caps.m_ch) return 0.0;
  return std::max(rate, 0.0);
}

/// mu_CH = zeta*(1 - n/N), scaled by acceptor availability (the electron exits
/// aerobically); zero with an empty IECP or a full ATP pool.
inline double rate_atp_syn(const CellState& s, const ExternalState& ext, const RateModel& model) {
  const double n_frac = static_cast<double>(s.n_atp) / static_cast<double>(model.caps.n_axp);
  const double rate = model.params.zeta * (1.0 - n_frac) * ext.sigma_a;
  if (s.m_ch <= 0 || s.n_atp >= model.caps.n_axp) return 0.0;
  return std::max(rate, 0.0);
}

/// mu_ATP = beta*sigma_d; zero with an empty ATP pool.
inline double rate_atp_con(const CellState& s, const ExternalState& ext, const RateModel& model) {
  const double rate = model.params.beta * ext.sigma_d;
  if (s.n_atp <= 0) return 0.0;
  return std::max(rate, 0.0);
}

// ---------------------------------------------------------------------------
// Events

enum class EventKind : unsigned char {
  initial,
  ed_diffusion,
  aerobic_synthesis,
  anaerobic_synthesis,
  heem_aerobic_synthesis,
  heem_anaerobic_synthesis,
  atp_consumption,
  death,
  electrode_in,
  electrode_out,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::initial: return "initial";
    case EventKind::ed_diffusion: return "ed_diffusion";
    case EventKind::aerobic_synthesis: return "aerobic_synthesis";
    case EventKind::anaerobic_synthesis: return "anaerobic_synthesis";
    case EventKind::heem_aerobic_synthesis: return "heem_aerobic_synthesis";
    case EventKind::heem_anaerobic_synthesis: return "heem_anaerobic_synthesis";
    case EventKind::atp_consumption: return "atp_consumption";
    case EventKind::death: return "death";
    case EventKind::electrode_in: return "electrode_in";
    case EventKind::electrode_out: return "electrode_out";
  }
  return "unknown";
}

struct RateEvent {
  EventKind kind;
  int cell;
  double rate;
};

/// Calls f(RateEvent) for every isolated-cell event with positive rate, in the fixed
/// order ED diffusion, aerobic synthesis, ATP consumption, death.
template <class F>
void for_each_isolated_event(const CellState& s, const ExternalState& ext, const RateModel& model,
                             F&& f) {
  if (s.dead) return;
  const double rates[4] = {rate_nadh_gen(s, ext, model), rate_atp_syn(s, ext, model),
                           rate_atp_con(s, ext, model), model.death_rate(s, ext)};
  constexpr EventKind kinds[4] = {EventKind::ed_diffusion, EventKind::aerobic_synthesis,
                                  EventKind::atp_consumption, EventKind::death};
  for (int k = 0; k < 4; ++k) {
    if (rates[k] > 0.0) f(RateEvent{kinds[k], 0, rates[k]});
  }
}

inline std::vector<RateEvent> isolated_events(const CellState& s, const ExternalState& ext,
                                              const RateModel& model) {
  std::vector<RateEvent> out;
  for_each_isolated_event(s, ext, model, [&](const RateEvent& e) { out.push_back(e); });
  return out;
}

inline CellState apply_isolated_event(EventKind kind, CellState s) {
  switch (kind) {
    case EventKind::ed_diffusion: ++s.m_ch; break;
    case EventKind::aerobic_synthesis: --s.m_ch; ++s.n_atp; break;
    case EventKind::atp_consumption: --s.n_atp; break;
    case EventKind::death: return CellState::dead_state();
    default: fail(ErrorKind::invalid_argument, std::string("event not legal for an isolated cell: ") +
                                                   to_string(kind));
  }
  return s;
}

/// Per-cell flows of a cable; ext_per_cell has one entry per cell.
template <class F>
void for_each_cable_event(const CableIndex& space, const CableState& s,
                          std::span<const ExternalState> ext_per_cell, const RateModel& model,
                          F&& f) {
  const auto& caps = model.caps;
  const std::size_t n = s.cells();
  for (std::size_t c = 0; c < n; ++c) {
    const CellState cell = s.cell(c);
    const ExternalState& ext = ext_per_cell[c];
    const int id = static_cast<int>(c);
    const bool atp_room = cell.n_atp < caps.n_axp;
    const bool leem_room = s.pools[c + 1] < space.pool_capacity(c + 1);

    const double ed = rate_nadh_gen(cell, ext, model);
    const double n_frac = static_cast<double>(cell.n_atp) / static_cast<double>(caps.n_axp);
    const double iecp = (cell.m_ch > 0 && atp_room) ? model.params.zeta * (1.0 - n_frac) : 0.0;
    double heem = 0.0;
    if (model.cable.heem_synthesis && s.pools[c] > 0 && atp_room) {
      heem = std::max(model.cable.heem_synthesis(cell, ext), 0.0);
    }
    const double aerobic = ext.sigma_a * model.cable.aerobic_affinity;
    double anaerobic = 0.0;
    if (model.cable.anaerobic_weight && leem_room) {
      anaerobic = std::max(model.cable.anaerobic_weight(cell, ext), 0.0);
    }

    const RateEvent events[7] = {
        {EventKind::ed_diffusion, id, ed},
        {EventKind::aerobic_synthesis, id, iecp * aerobic},
        {EventKind::anaerobic_synthesis, id, iecp * anaerobic},
        {EventKind::heem_aerobic_synthesis, id, heem * aerobic},
        {EventKind::heem_anaerobic_synthesis, id, heem * anaerobic},
        {EventKind::atp_consumption, id, rate_atp_con(cell, ext, model)},
        {EventKind::death, id, model.death_rate(cell, ext)},
    };
    for (const auto& e : events) {
      if (e.rate > 0.0) f(e);
    }
  }
  if (model.cable.electrode_in > 0.0 && s.pools.front() < space.pool_capacity(0)) {
    f(RateEvent{EventKind::electrode_in, 0, model.cable.electrode_in});
  }
  if (model.cable.electrode_out > 0.0 && s.pools.back() > 0) {
    f(RateEvent{EventKind::electrode_out, static_cast<int>(n) - 1, model.cable.electrode_out});
  }
}

inline std::vector<RateEvent> cable_rates(const CableIndex& space, const CableState& s,
                                          std::span<const ExternalState> ext_per_cell,
                                          const RateModel& model) {
  if (ext_per_cell.size() != s.cells()) {
    fail(ErrorKind::invalid_argument, "cable_rates needs one external state per cell");
  }
  std::vector<RateEvent> out;
  for_each_cable_event(space, s, ext_per_cell, model, [&](const RateEvent& e) { out.push_back(e); });
  return out;
}

/// Applies a non-death cable event in place.
inline void apply_cable_event(const RateEvent& e, CableState& s) {
  const auto c = static_cast<std::size_t>(e.cell);
  switch (e.kind) {
    case EventKind::ed_diffusion: ++s.m_ch[c]; break;
    case EventKind::aerobic_synthesis: --s.m_ch[c]; ++s.n_atp[c]; break;
    case EventKind::anaerobic_synthesis: --s.m_ch[c]; ++s.n_atp[c]; ++s.pools[c + 1]; break;
    case EventKind::heem_aerobic_synthesis: --s.pools[c]; ++s.n_atp[c]; break;
    case EventKind::heem_anaerobic_synthesis: --s.pools[c]; ++s.n_atp[c]; ++s.pools[c + 1]; break;
    case EventKind::atp_consumption: --s.n_atp[c]; break;
    case EventKind::electrode_in: ++s.pools.front(); break;
    case EventKind::electrode_out: --s.pools.back(); break;
    default: fail(ErrorKind::invalid_argument, "apply_cable_event: unsupported event");
  }
}

// ---------------------------------------------------------------------------
// Linear structure in x: each isolated event rate equals coeffs . x. Used to build
// dA/dx for inference.

struct LinearRateTerms {
  std::array<double, 4> ed_diffusion{};
  std::array<double, 4> aerobic_synthesis{};
  std::array<double, 4> atp_consumption{};
};

inline LinearRateTerms linear_rate_terms(const CellState& s, const ExternalState& ext,
                                         const Capacities& caps) {
  LinearRateTerms t;
  if (s.m_ch < caps.m_ch) {
    t.ed_diffusion = {ext.sigma_d,
                      (1.0 - static_cast<double>(s.m_ch) / caps.m_ch) * ext.sigma_d, 0.0, 0.0};
  }
  if (s.m_ch > 0 && s.n_atp < caps.n_axp) {
    t.aerobic_synthesis = {0.0, 0.0,
                           (1.0 - static_cast<double>(s.n_atp) / caps.n_axp) * ext.sigma_a, 0.0};
  }
  if (s.n_atp > 0) t.atp_consumption = {0.0, 0.0, 0.0, ext.sigma_d};
  return t;
}

}  // namespace ecable
