#pragma once

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ecable/error.hpp"
#include "ecable/inference.hpp"
#include "ecable/io/csv.hpp"
#include "ecable/kinetics.hpp"
#include "ecable/state_space.hpp"
#include "ecable/transient.hpp"

namespace ecable::io {

/// Starting distribution: a point mass, or independent two-point marginals matching a mean.
struct InitialConfig {
  bool from_mean = false;
  int m_ch = 0;
  int n_atp = 0;
  double mean_m = 0.0;
  double mean_n = 0.0;
};

struct CableConfig {
  int n_cells = 1;
  double heem_synthesis = 0.0;
  double anaerobic_weight = 0.0;
  double aerobic_affinity = 1.0;
  double electrode_in = 0.0;
  double electrode_out = 0.0;
  std::uint64_t dense_bound = kDefaultDenseBound;
  std::optional<CableState> initial;
};

struct SolverConfig {
  double safety = 0.1;
  std::optional<double> delta;
  int taylor_order = kAdaptiveOrder;
};

struct TransientConfig {
  double t = 0.0;
};

struct SimulateConfig {
  double horizon = 100.0;
  std::uint64_t n_traj = 1;
  int samples = 11;
  std::uint64_t max_events = std::numeric_limits<std::uint64_t>::max();
};

struct LifetimeConfig {
  std::optional<double> t_end;  // default 10 E[L]
  int points = 10000;
};

struct FitConfig {
  std::string data;  // t,nadh,atp CSV, relative to the config file
  FullScale scale;
  ConvertOptions convert;
  int doubling_depth = 5;  // delta = T / 2^b
  std::optional<ParamVector> init;
  FitOptions options;
};

struct PredictConfig {
  std::optional<double> t_end;
  double step = 10.0;
};

struct RunConfig {
  Capacities caps;
  std::optional<ParamVector> params;
  double death = 0.0;            // constant death rate
  double death_atp_empty = 0.0;  // extra death rate while the ATP pool is empty
  ExternalProfile profile;
  SolverConfig solver;
  std::uint64_t seed = 0;
  RateMode mode = RateMode::isolated;
  CableConfig cable;
  InitialConfig initial;
  TransientConfig transient;
  SimulateConfig simulate;
  LifetimeConfig lifetime;
  FitConfig fit;
  PredictConfig predict;

  std::filesystem::path base_dir;
  std::vector<std::string> warnings;
  std::set<std::string> sections;  // top-level keys present in the source

  RateModel model() const {
    RateModel m;
    m.params = params.value_or(ParamVector{});
    m.caps = caps;
    m.mode = mode;
    if (death > 0.0 || death_atp_empty > 0.0) {
      const double base = death;
      const double starve = death_atp_empty;
      m.death = [base, starve](const CellState& s, const ExternalState&) {
        return base + (s.n_atp == 0 ? starve : 0.0);
      };
    }
    if (mode == RateMode::cable) {
      if (cable.heem_synthesis > 0.0) m.cable.heem_synthesis = constant_rate(cable.heem_synthesis);
      if (cable.anaerobic_weight > 0.0) m.cable.anaerobic_weight = constant_rate(cable.anaerobic_weight);
      m.cable.aerobic_affinity = cable.aerobic_affinity;
      m.cable.electrode_in = cable.electrode_in;
      m.cable.electrode_out = cable.electrode_out;
    }
    return m;
  }

  StepOptions step_options() const { return {solver.delta, solver.safety, solver.taylor_order}; }

  RowVector initial_distribution(const IsolatedIndex& space) const {
    RowVector pi = RowVector::Zero(static_cast<Eigen::Index>(space.size()));
    if (!initial.from_mean) {
      pi(static_cast<Eigen::Index>(space.index(initial.m_ch, initial.n_atp))) = 1.0;
      return pi;
    }
    TimeSeries one;
    one.t = {0.0};
    one.y = {{initial.mean_m, initial.mean_n}};
    return Likelihood(space, one, profile, 1.0).feasible_pi0();
  }

  CableState cable_initial() const {
    if (cable.initial) return *cable.initial;
    const auto n = static_cast<std::size_t>(cable.n_cells);
    CableState s;
    s.m_ch.assign(n, initial.from_mean ? 0 : initial.m_ch);
    s.n_atp.assign(n, initial.from_mean ? 0 : initial.n_atp);
    s.pools.assign(n + 1, 0);
    return s;
  }
};

namespace detail {

[[noreturn]] inline void config_fail(const YAML::Node& at, const std::string& msg) {
  const YAML::Mark m = at.Mark();
  if (m.is_null()) fail(ErrorKind::config, msg);
  fail(ErrorKind::config, "line " + std::to_string(m.line + 1) + ", column " +
                              std::to_string(m.column + 1) + ": " + msg);
}

template <class T>
T scalar(const YAML::Node& n, const std::string& name) {
  if (!n.IsScalar()) config_fail(n, "'" + name + "' must be a scalar");
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    config_fail(n, "'" + name + "' has an invalid value '" + n.Scalar() + "'");
  }
}

template <class T>
T get(const YAML::Node& map, const std::string& key, const std::string& path, T fallback) {
  const YAML::Node n = map[key];
  if (!n) return fallback;
  return scalar<T>(n, path + key);
}

template <class T>
T require(const YAML::Node& map, const std::string& key, const std::string& path) {
  const YAML::Node n = map[key];
  if (!n) config_fail(map, "missing required field '" + path + key + "'");
  return scalar<T>(n, path + key);
}

inline void check_keys(const YAML::Node& map, const std::string& path,
                       std::initializer_list<const char*> known, std::vector<std::string>& warnings) {
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) {
      warnings.push_back("line " + std::to_string(kv.first.Mark().line + 1) + ": unknown key '" +
                         path + key + "' ignored");
    }
  }
}

inline YAML::Node require_map(const YAML::Node& parent, const std::string& key, const std::string& path) {
  const YAML::Node n = parent[key];
  if (!n) config_fail(parent, "missing required section '" + path + key + "'");
  if (!n.IsMap()) config_fail(n, "'" + path + key + "' must be a mapping");
  return n;
}

inline ExternalProfile parse_profile(const YAML::Node& n, std::vector<std::string>& warnings) {
  if (!n.IsMap()) config_fail(n, "'profile' must be a mapping");
  check_keys(n, "profile.", {"segments", "constant", "linear_decay"}, warnings);
  try {
    if (const YAML::Node seg = n["segments"]) {
      if (!seg.IsSequence() || seg.size() == 0) config_fail(seg, "'profile.segments' must be a non-empty list");
      std::vector<ProfileSegment> out;
      for (std::size_t i = 0; i < seg.size(); ++i) {
        const YAML::Node s = seg[i];
        const std::string p = "profile.segments[" + std::to_string(i) + "].";
        check_keys(s, p, {"start", "end", "sigma_d", "sigma_a"}, warnings);
        ProfileSegment ps;
        ps.start = require<double>(s, "start", p);
        ps.end = get<double>(s, "end", p, std::numeric_limits<double>::infinity());
        ps.ext.sigma_d = require<double>(s, "sigma_d", p);
        ps.ext.sigma_a = get<double>(s, "sigma_a", p, 1.0);
        out.push_back(ps);
      }
      try {
        return ExternalProfile(std::move(out));
      } catch (const Error& e) {
        config_fail(seg, e.what());
      }
    }
    if (const YAML::Node c = n["constant"]) {
      check_keys(c, "profile.constant.", {"sigma_d", "sigma_a"}, warnings);
      return ExternalProfile::constant({require<double>(c, "sigma_d", "profile.constant."),
                                        get<double>(c, "sigma_a", "profile.constant.", 1.0)});
    }
    if (const YAML::Node d = n["linear_decay"]) {
      const std::string p = "profile.linear_decay.";
      check_keys(d, p, {"onset", "peak", "zero_at", "step", "sigma_a", "before", "after", "end"}, warnings);
      try {
        return ExternalProfile::linear_decay(
            require<double>(d, "onset", p), require<double>(d, "peak", p), require<double>(d, "zero_at", p),
            require<double>(d, "step", p), get<double>(d, "sigma_a", p, 1.0), get<double>(d, "before", p, 0.0),
            get<double>(d, "after", p, 0.0),
            get<double>(d, "end", p, std::numeric_limits<double>::infinity()));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::config) throw;
        config_fail(d, e.what());
      }
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) throw;
    config_fail(n, e.what());
  }
  config_fail(n, "'profile' needs one of 'segments', 'constant' or 'linear_decay'");
}

inline std::vector<int> int_list(const YAML::Node& n, const std::string& name) {
  if (!n.IsSequence()) config_fail(n, "'" + name + "' must be a list");
  std::vector<int> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(scalar<int>(n[i], name));
  return out;
}

inline std::string yaml_double(double v) {
  if (std::isinf(v)) return v > 0 ? ".inf" : "-.inf";
  return fmt(v);
}

}  // namespace detail

/// Parses a YAML document. `base_dir` resolves relative paths (e.g. fit.data).
inline RunConfig parse_config(const YAML::Node& root, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  RunConfig c;
  c.base_dir = base_dir;
  if (!root.IsMap()) config_fail(root, "config must be a mapping");
  check_keys(root, "",
             {"capacities", "params", "death", "profile", "solver", "seed", "mode", "cable", "initial",
              "transient", "simulate", "lifetime", "fit", "predict"},
             c.warnings);
  for (const auto& kv : root) c.sections.insert(kv.first.as<std::string>());

  const YAML::Node caps = require_map(root, "capacities", "");
  check_keys(caps, "capacities.", {"m_ch", "n_axp", "q_l", "q_h"}, c.warnings);
  c.caps.m_ch = require<int>(caps, "m_ch", "capacities.");
  c.caps.n_axp = require<int>(caps, "n_axp", "capacities.");
  c.caps.q_l = get<int>(caps, "q_l", "capacities.", 1);
  c.caps.q_h = get<int>(caps, "q_h", "capacities.", 1);
  try {
    c.caps.validate();
    IsolatedIndex check(c.caps);
  } catch (const Error& e) {
    config_fail(caps, e.what());
  }

  if (const YAML::Node p = root["params"]) {
    if (!p.IsMap()) config_fail(p, "'params' must be a mapping");
    check_keys(p, "params.", {"gamma", "rho", "zeta", "beta"}, c.warnings);
    ParamVector x;
    for (std::size_t j = 0; j < 4; ++j) x[j] = require<double>(p, kParamNames[j], "params.");
    if (!x.nonnegative()) config_fail(p, "'params' entries must be >= 0");
    c.params = x;
  }

  if (const YAML::Node d = root["death"]) {
    if (d.IsScalar()) {
      c.death = scalar<double>(d, "death");
    } else {
      check_keys(d, "death.", {"constant", "atp_empty"}, c.warnings);
      c.death = get<double>(d, "constant", "death.", 0.0);
      c.death_atp_empty = get<double>(d, "atp_empty", "death.", 0.0);
    }
    if (!(c.death >= 0.0) || !(c.death_atp_empty >= 0.0)) config_fail(d, "death rates must be >= 0");
  }

  if (const YAML::Node p = root["profile"]) {
    c.profile = parse_profile(p, c.warnings);
  } else {
    c.warnings.push_back("no 'profile' given; using sigma_d = 0, sigma_a = 1 throughout");
  }

  if (const YAML::Node s = root["solver"]) {
    check_keys(s, "solver.", {"safety", "delta", "taylor_order"}, c.warnings);
    c.solver.safety = get<double>(s, "safety", "solver.", 0.1);
    if (!(c.solver.safety > 0.0 && c.solver.safety < 1.0)) config_fail(s, "'solver.safety' must lie in (0, 1)");
    if (s["delta"]) c.solver.delta = require<double>(s, "delta", "solver.");
    c.solver.taylor_order = get<int>(s, "taylor_order", "solver.", kAdaptiveOrder);
    if (c.solver.taylor_order < 0) config_fail(s, "'solver.taylor_order' must be >= 0");
  }

  c.seed = get<std::uint64_t>(root, "seed", "", 0);

  if (const YAML::Node m = root["mode"]) {
    const auto mode = scalar<std::string>(m, "mode");
    if (mode == "isolated") {
      c.mode = RateMode::isolated;
    } else if (mode == "cable") {
      c.mode = RateMode::cable;
    } else {
      config_fail(m, "'mode' must be 'isolated' or 'cable'");
    }
  }

  if (const YAML::Node i = root["initial"]) {
    check_keys(i, "initial.", {"m_ch", "n_atp", "mean"}, c.warnings);
    if (const YAML::Node mean = i["mean"]) {
      if (!mean.IsSequence() || mean.size() != 2) config_fail(mean, "'initial.mean' must be [m_ch, n_atp]");
      c.initial.from_mean = true;
      c.initial.mean_m = scalar<double>(mean[0], "initial.mean");
      c.initial.mean_n = scalar<double>(mean[1], "initial.mean");
      if (!(c.initial.mean_m >= 0.0 && c.initial.mean_m <= c.caps.m_ch && c.initial.mean_n >= 0.0 &&
            c.initial.mean_n <= c.caps.n_axp)) {
        config_fail(mean, "'initial.mean' lies outside the capacity box");
      }
    } else {
      c.initial.m_ch = require<int>(i, "m_ch", "initial.");
      c.initial.n_atp = require<int>(i, "n_atp", "initial.");
      if (!IsolatedIndex(c.caps).contains(c.initial.m_ch, c.initial.n_atp)) {
        config_fail(i, "'initial' state lies outside the capacities");
      }
    }
  }

  if (const YAML::Node cb = root["cable"]) {
    const std::string p = "cable.";
    check_keys(cb, p,
               {"n_cells", "heem_synthesis", "anaerobic_weight", "aerobic_affinity", "electrode_in",
                "electrode_out", "dense_bound", "initial"},
               c.warnings);
    c.cable.n_cells = require<int>(cb, "n_cells", p);
    if (c.cable.n_cells < 1) config_fail(cb, "'cable.n_cells' must be >= 1");
    c.cable.heem_synthesis = get<double>(cb, "heem_synthesis", p, 0.0);
    c.cable.anaerobic_weight = get<double>(cb, "anaerobic_weight", p, 0.0);
    c.cable.aerobic_affinity = get<double>(cb, "aerobic_affinity", p, 1.0);
    c.cable.electrode_in = get<double>(cb, "electrode_in", p, 0.0);
    c.cable.electrode_out = get<double>(cb, "electrode_out", p, 0.0);
    c.cable.dense_bound = get<std::uint64_t>(cb, "dense_bound", p, kDefaultDenseBound);
    for (double v : {c.cable.heem_synthesis, c.cable.anaerobic_weight, c.cable.aerobic_affinity,
                     c.cable.electrode_in, c.cable.electrode_out}) {
      if (!(v >= 0.0)) config_fail(cb, "cable rates must be >= 0");
    }
    if (const YAML::Node ci = cb["initial"]) {
      check_keys(ci, "cable.initial.", {"m_ch", "n_atp", "pools"}, c.warnings);
      CableState s;
      for (const char* key : {"m_ch", "n_atp", "pools"}) {
        if (!ci[key]) config_fail(ci, std::string("missing required field 'cable.initial.") + key + "'");
      }
      s.m_ch = int_list(ci["m_ch"], "cable.initial.m_ch");
      s.n_atp = int_list(ci["n_atp"], "cable.initial.n_atp");
      s.pools = int_list(ci["pools"], "cable.initial.pools");
      if (!CableIndex(c.caps, c.cable.n_cells, c.cable.dense_bound).contains(s)) {
        config_fail(ci, "'cable.initial' does not match the cable shape or capacities");
      }
      c.cable.initial = s;
    }
  }

  if (const YAML::Node t = root["transient"]) {
    check_keys(t, "transient.", {"t"}, c.warnings);
    c.transient.t = get<double>(t, "t", "transient.", 0.0);
    if (!(c.transient.t >= 0.0)) config_fail(t, "'transient.t' must be >= 0");
  }

  if (const YAML::Node s = root["simulate"]) {
    const std::string p = "simulate.";
    check_keys(s, p, {"horizon", "n_traj", "samples", "max_events"}, c.warnings);
    c.simulate.horizon = get<double>(s, "horizon", p, 100.0);
    c.simulate.n_traj = get<std::uint64_t>(s, "n_traj", p, 1);
    c.simulate.samples = get<int>(s, "samples", p, 11);
    c.simulate.max_events = get<std::uint64_t>(s, "max_events", p, std::numeric_limits<std::uint64_t>::max());
    if (!(c.simulate.horizon > 0.0)) config_fail(s, "'simulate.horizon' must be > 0");
    if (c.simulate.n_traj < 1) config_fail(s, "'simulate.n_traj' must be >= 1");
    if (c.simulate.samples < 2) config_fail(s, "'simulate.samples' must be >= 2");
  }

  if (const YAML::Node l = root["lifetime"]) {
    check_keys(l, "lifetime.", {"t_end", "points"}, c.warnings);
    if (l["t_end"]) c.lifetime.t_end = require<double>(l, "t_end", "lifetime.");
    c.lifetime.points = get<int>(l, "points", "lifetime.", 10000);
    if (c.lifetime.points < 2) config_fail(l, "'lifetime.points' must be >= 2");
  }

  if (const YAML::Node f = root["fit"]) {
    const std::string p = "fit.";
    check_keys(f, p,
               {"data", "nadh_max", "atp_max", "discard_after", "keep_all", "doubling_depth", "init",
                "max_outer", "rel_tol", "abs_tol", "gradient", "step_rule"},
               c.warnings);
    c.fit.data = require<std::string>(f, "data", p);
    c.fit.scale.nadh_max = get<double>(f, "nadh_max", p, 12.985);
    c.fit.scale.atp_max = get<double>(f, "atp_max", p, 3.6);
    c.fit.convert.discard_after = get<double>(f, "discard_after", p, 1300.0);
    c.fit.convert.keep_all = get<bool>(f, "keep_all", p, false);
    c.fit.doubling_depth = get<int>(f, "doubling_depth", p, 5);
    if (c.fit.doubling_depth < 1 || c.fit.doubling_depth > 30) config_fail(f, "'fit.doubling_depth' must be in 1..30");
    if (const YAML::Node in = f["init"]) {
      check_keys(in, "fit.init.", {"gamma", "rho", "zeta", "beta"}, c.warnings);
      ParamVector x;
      for (std::size_t j = 0; j < 4; ++j) x[j] = require<double>(in, kParamNames[j], "fit.init.");
      if (!x.nonnegative()) config_fail(in, "'fit.init' entries must be >= 0");
      c.fit.init = x;
    }
    c.fit.options.max_outer = get<int>(f, "max_outer", p, 500);
    c.fit.options.rel_tol = get<double>(f, "rel_tol", p, 1e-10);
    c.fit.options.abs_tol = get<double>(f, "abs_tol", p, 0.0);
    if (const YAML::Node g = f["gradient"]) {
      const auto s = scalar<std::string>(g, "fit.gradient");
      if (s == "auto") {
        c.fit.options.gradient = GradientMethod::automatic;
      } else if (s == "doubling") {
        c.fit.options.gradient = GradientMethod::doubling;
      } else if (s == "forward") {
        c.fit.options.gradient = GradientMethod::forward;
      } else {
        config_fail(g, "'fit.gradient' must be auto, doubling or forward");
      }
    }
    if (const YAML::Node r = f["step_rule"]) {
      const auto s = scalar<std::string>(r, "fit.step_rule");
      if (s == "gauss_newton") {
        c.fit.options.step_rule = StepRule::gauss_newton;
      } else if (s == "projected_gradient") {
        c.fit.options.step_rule = StepRule::projected_gradient;
      } else {
        config_fail(r, "'fit.step_rule' must be gauss_newton or projected_gradient");
      }
    }
  }

  if (const YAML::Node pr = root["predict"]) {
    check_keys(pr, "predict.", {"t_end", "step"}, c.warnings);
    if (pr["t_end"]) c.predict.t_end = require<double>(pr, "t_end", "predict.");
    c.predict.step = get<double>(pr, "step", "predict.", 10.0);
    if (!(c.predict.step > 0.0)) config_fail(pr, "'predict.step' must be > 0");
  }
  return c;
}

inline RunConfig parse_config_string(const std::string& text, const std::filesystem::path& base_dir = {}) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    fail(ErrorKind::config, "line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  return parse_config(root, base_dir);
}

/// Sets a dotted key (e.g. "params.rho") to a YAML scalar, creating maps on the way.
inline void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorKind::config, "override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::config, "override '" + assignment + "': " + e.what());
  }
  std::vector<std::string> keys;
  std::stringstream ss(path);
  for (std::string k; std::getline(ss, k, '.');) keys.push_back(k);
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    YAML::Node next = chain.back()[keys[i]];
    if (!next.IsDefined() || next.IsNull()) {
      chain.back()[keys[i]] = YAML::Node(YAML::NodeType::Map);
      next = chain.back()[keys[i]];
    }
    chain.push_back(next);
  }
  chain.back()[keys.back()] = value;
}

inline YAML::Node load_yaml_file(const std::filesystem::path& path) {
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    fail(ErrorKind::io, "cannot read config file " + path.string());
  } catch (const YAML::ParserException& e) {
    fail(ErrorKind::config, path.string() + ": line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  YAML::Node root = load_yaml_file(path);
  for (const auto& o : overrides) apply_override(root, o);
  try {
    return parse_config(root, path.parent_path());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::config) throw;
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
}

/// Canonical YAML with every default spelled out. Parsing it yields the same string.
inline std::string normalized_yaml(const RunConfig& c) {
  using detail::yaml_double;
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "capacities" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "m_ch"
      << YAML::Value << c.caps.m_ch << YAML::Key << "n_axp" << YAML::Value << c.caps.n_axp << YAML::Key
      << "q_l" << YAML::Value << c.caps.q_l << YAML::Key << "q_h" << YAML::Value << c.caps.q_h
      << YAML::EndMap;
  if (c.params) {
    out << YAML::Key << "params" << YAML::Value << YAML::Flow << YAML::BeginMap;
    for (std::size_t j = 0; j < 4; ++j) out << YAML::Key << kParamNames[j] << YAML::Value << yaml_double((*c.params)[j]);
    out << YAML::EndMap;
  }
  out << YAML::Key << "death" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "constant"
      << YAML::Value << yaml_double(c.death) << YAML::Key << "atp_empty" << YAML::Value
      << yaml_double(c.death_atp_empty) << YAML::EndMap;
  out << YAML::Key << "profile" << YAML::Value << YAML::BeginMap << YAML::Key << "segments" << YAML::Value
      << YAML::BeginSeq;
  for (const auto& s : c.profile.segments()) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "start" << YAML::Value << yaml_double(s.start)
        << YAML::Key << "end" << YAML::Value << yaml_double(s.end) << YAML::Key << "sigma_d" << YAML::Value
        << yaml_double(s.ext.sigma_d) << YAML::Key << "sigma_a" << YAML::Value << yaml_double(s.ext.sigma_a)
        << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  out << YAML::Key << "solver" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "safety"
      << YAML::Value << yaml_double(c.solver.safety);
  if (c.solver.delta) out << YAML::Key << "delta" << YAML::Value << yaml_double(*c.solver.delta);
  out << YAML::Key << "taylor_order" << YAML::Value << c.solver.taylor_order << YAML::EndMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "mode" << YAML::Value << (c.mode == RateMode::cable ? "cable" : "isolated");
  out << YAML::Key << "initial" << YAML::Value << YAML::Flow << YAML::BeginMap;
  if (c.initial.from_mean) {
    out << YAML::Key << "mean" << YAML::Value << YAML::Flow << YAML::BeginSeq << yaml_double(c.initial.mean_m)
        << yaml_double(c.initial.mean_n) << YAML::EndSeq;
  } else {
    out << YAML::Key << "m_ch" << YAML::Value << c.initial.m_ch << YAML::Key << "n_atp" << YAML::Value
        << c.initial.n_atp;
  }
  out << YAML::EndMap;
  if (c.sections.count("cable")) {
    out << YAML::Key << "cable" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "n_cells" << YAML::Value << c.cable.n_cells;
    out << YAML::Key << "heem_synthesis" << YAML::Value << yaml_double(c.cable.heem_synthesis);
    out << YAML::Key << "anaerobic_weight" << YAML::Value << yaml_double(c.cable.anaerobic_weight);
    out << YAML::Key << "aerobic_affinity" << YAML::Value << yaml_double(c.cable.aerobic_affinity);
    out << YAML::Key << "electrode_in" << YAML::Value << yaml_double(c.cable.electrode_in);
    out << YAML::Key << "electrode_out" << YAML::Value << yaml_double(c.cable.electrode_out);
    out << YAML::Key << "dense_bound" << YAML::Value << c.cable.dense_bound;
    if (c.cable.initial) {
      out << YAML::Key << "initial" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "m_ch"
          << YAML::Value << YAML::Flow << c.cable.initial->m_ch << YAML::Key << "n_atp" << YAML::Value
          << YAML::Flow << c.cable.initial->n_atp << YAML::Key << "pools" << YAML::Value << YAML::Flow
          << c.cable.initial->pools << YAML::EndMap;
    }
    out << YAML::EndMap;
  }
  if (c.sections.count("transient")) {
    out << YAML::Key << "transient" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "t"
        << YAML::Value << yaml_double(c.transient.t) << YAML::EndMap;
  }
  if (c.sections.count("simulate")) {
    out << YAML::Key << "simulate" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "horizon"
        << YAML::Value << yaml_double(c.simulate.horizon) << YAML::Key << "n_traj" << YAML::Value
        << c.simulate.n_traj << YAML::Key << "samples" << YAML::Value << c.simulate.samples;
    if (c.simulate.max_events != std::numeric_limits<std::uint64_t>::max()) {
      out << YAML::Key << "max_events" << YAML::Value << c.simulate.max_events;
    }
    out << YAML::EndMap;
  }
  if (c.sections.count("lifetime")) {
    out << YAML::Key << "lifetime" << YAML::Value << YAML::Flow << YAML::BeginMap;
    if (c.lifetime.t_end) out << YAML::Key << "t_end" << YAML::Value << yaml_double(*c.lifetime.t_end);
    out << YAML::Key << "points" << YAML::Value << c.lifetime.points << YAML::EndMap;
  }
  if (c.sections.count("fit")) {
    out << YAML::Key << "fit" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "data" << YAML::Value << YAML::DoubleQuoted << c.fit.data;
    out << YAML::Key << "nadh_max" << YAML::Value << yaml_double(c.fit.scale.nadh_max);
    out << YAML::Key << "atp_max" << YAML::Value << yaml_double(c.fit.scale.atp_max);
    out << YAML::Key << "discard_after" << YAML::Value << yaml_double(c.fit.convert.discard_after);
    out << YAML::Key << "keep_all" << YAML::Value << c.fit.convert.keep_all;
    out << YAML::Key << "doubling_depth" << YAML::Value << c.fit.doubling_depth;
    if (c.fit.init) {
      out << YAML::Key << "init" << YAML::Value << YAML::Flow << YAML::BeginMap;
      for (std::size_t j = 0; j < 4; ++j) out << YAML::Key << kParamNames[j] << YAML::Value << yaml_double((*c.fit.init)[j]);
      out << YAML::EndMap;
    }
    out << YAML::Key << "max_outer" << YAML::Value << c.fit.options.max_outer;
    out << YAML::Key << "rel_tol" << YAML::Value << yaml_double(c.fit.options.rel_tol);
    out << YAML::Key << "abs_tol" << YAML::Value << yaml_double(c.fit.options.abs_tol);
    const char* g = c.fit.options.gradient == GradientMethod::doubling  ? "doubling"
                    : c.fit.options.gradient == GradientMethod::forward ? "forward"
                                                                        : "auto";
    out << YAML::Key << "gradient" << YAML::Value << g;
    out << YAML::Key << "step_rule" << YAML::Value
        << (c.fit.options.step_rule == StepRule::gauss_newton ? "gauss_newton" : "projected_gradient");
    out << YAML::EndMap;
  }
  if (c.sections.count("predict")) {
    out << YAML::Key << "predict" << YAML::Value << YAML::Flow << YAML::BeginMap;
    if (c.predict.t_end) out << YAML::Key << "t_end" << YAML::Value << yaml_double(*c.predict.t_end);
    out << YAML::Key << "step" << YAML::Value << yaml_double(c.predict.step) << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace ecable::io
