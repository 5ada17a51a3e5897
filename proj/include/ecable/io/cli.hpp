#pragma once

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ecable/ecable.hpp"
#include "ecable/io/config.hpp"
#include "ecable/io/csv.hpp"
#include "ecable/io/manifest.hpp"

namespace ecable::io {

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"transient", "simulate", "lifetime", "fit", "predict", "panels"};
  return names;
}

struct ResultBundle {
  std::filesystem::path out_dir;
  std::vector<std::string> files;  // relative to out_dir, manifest last
  Manifest manifest;
};

namespace detail {

inline void warn_unused_sections(const std::string& cmd, const RunConfig& cfg, std::ostream& log) {
  static const std::map<std::string, std::vector<std::string>> used{
      {"transient", {"transient", "cable"}},
      {"simulate", {"simulate", "cable"}},
      {"lifetime", {"lifetime"}},
      {"fit", {"fit", "predict"}},
      {"predict", {"predict", "fit"}},
      {"panels", {"predict", "fit"}},
  };
  for (const char* s : {"transient", "simulate", "lifetime", "fit", "predict", "cable"}) {
    const auto& u = used.at(cmd);
    if (cfg.sections.count(s) && std::find(u.begin(), u.end(), s) == u.end()) {
      log << "warning: section '" << s << "' is not used by '" << cmd << "'\n";
    }
  }
}

inline const ParamVector& require_params(const RunConfig& cfg, const std::string& cmd) {
  if (!cfg.params) fail(ErrorKind::config, "config field 'params' is required for '" + cmd + "'");
  return *cfg.params;
}

inline std::vector<double> grid_range(double t_end, double step) {
  std::vector<double> g;
  const auto n = static_cast<long>(std::floor(t_end / step + 1e-9));
  for (long k = 0; k <= n; ++k) g.push_back(static_cast<double>(k) * step);
  if (t_end - g.back() > 1e-9 * t_end) g.push_back(t_end);
  return g;
}

class Writer {
 public:
  Writer(std::filesystem::path dir, ResultBundle& bundle) : dir_(std::move(dir)), bundle_(bundle) {}

  void csv(const std::string& name, const CsvTable& t) {
    write_csv((dir_ / name).string(), t);
    bundle_.files.push_back(name);
  }

  void text(const std::string& name, const std::string& body) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + (dir_ / name).string());
    out << body;
    bundle_.files.push_back(name);
  }

 private:
  std::filesystem::path dir_;
  ResultBundle& bundle_;
};

inline void run_transient(const RunConfig& cfg, Writer& w, std::ostream& log) {
  const RateModel model = cfg.model();
  const double t = cfg.transient.t;
  if (cfg.mode == RateMode::cable) {
    const CableIndex space(cfg.caps, cfg.cable.n_cells, cfg.cable.dense_bound);
    space.require_dense();
    const std::vector<ExternalProfile> profiles(static_cast<std::size_t>(space.cells()), cfg.profile);
    RowVector start = RowVector::Zero(static_cast<Eigen::Index>(space.size()));
    start(static_cast<Eigen::Index>(space.index(cfg.cable_initial()))) = 1.0;
    const RowVector row = advance_cable(space, model, profiles, start, t, cfg.step_options());
    CsvTable tab{{"index", "p"}, {}};
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      if (row(i) != 0.0) tab.rows.push_back({std::to_string(i), fmt(row(i))});
    }
    w.csv("transient.csv", tab);
    log << "t=" << fmt(t) << " mass=" << fmt(row.sum()) << "\n";
    return;
  }
  const IsolatedIndex space(cfg.caps);
  const PiecewiseSolver solver(space, model, cfg.profile, cfg.step_options());
  const RowVector pi0 = cfg.initial_distribution(space);
  const RowVector pt = solver.advance(pi0, 0.0, t);
  CsvTable tab{{"index", "m_ch", "n_atp", "p"}, {}};
  for (Eigen::Index i = 0; i < pt.size(); ++i) {
    const CellState s = space.state(static_cast<std::size_t>(i));
    tab.rows.push_back({std::to_string(i), std::to_string(s.m_ch), std::to_string(s.n_atp), fmt(pt(i))});
  }
  w.csv("transient.csv", tab);
  log << "t=" << fmt(t) << " mass=" << fmt(pt.sum()) << " death=" << fmt(1.0 - pt.sum()) << "\n";
}

inline void run_simulate(const RunConfig& cfg, Writer& w, std::ostream& log) {
  const RateModel model = cfg.model();
  const SimulateConfig& sc = cfg.simulate;
  const SimOptions opt{true, sc.max_events};
  if (cfg.mode == RateMode::cable) {
    const CableIndex space(cfg.caps, cfg.cable.n_cells, cfg.cable.dense_bound);
    const std::vector<ExternalProfile> profiles(static_cast<std::size_t>(space.cells()), cfg.profile);
    const CableTrajectory tr = simulate_cable(space, model, profiles, cfg.cable_initial(), sc.horizon, cfg.seed, opt);
    w.csv("events.csv", event_log_table(tr.initial, tr.events));
    w.csv("ledger.csv", ledger_table(tr.ledger));
    bool balanced = true;
    for (const auto& l : tr.ledger) balanced = balanced && l.balanced();
    log << "events=" << tr.event_count << " end=" << fmt(tr.end_time) << (tr.dead ? " dead" : " alive")
        << " ledger=" << (balanced ? "balanced" : "UNBALANCED") << "\n";
    return;
  }
  const IsolatedIndex space(cfg.caps);
  const RowVector pi0 = cfg.initial_distribution(space);
  Rng pick = Rng::for_stream(cfg.seed, std::numeric_limits<std::uint64_t>::max());
  const std::size_t start = ecable::detail::sample_index(pi0, pick.uniform());
  const CellState init = space.state(std::min(start, space.size() - 1));
  const Trajectory tr = simulate(model, cfg.profile, init, sc.horizon, cfg.seed, opt);
  w.csv("events.csv", event_log_table(tr.initial, tr.events));
  const auto times = uniform_grid(sc.horizon, static_cast<std::size_t>(sc.samples));
  const EnsembleStats st = simulate_ensemble(space, model, cfg.profile, pi0, times, sc.n_traj, cfg.seed);
  w.csv("ensemble.csv", ensemble_table(st));
  log << "events=" << tr.event_count << (tr.dead ? " dead at t=" + fmt(tr.death_time) : " alive at horizon")
      << " n_traj=" << sc.n_traj << "\n";
}

inline void run_lifetime(const RunConfig& cfg, Writer& w, std::ostream& log) {
  if (cfg.profile.segments().size() != 1) {
    fail(ErrorKind::invalid_argument, "lifetime analysis needs a constant external profile (one segment)");
  }
  const IsolatedIndex space(cfg.caps);
  const MarkovSystem sys = build_system(space, cfg.model(), cfg.profile.segments().front().ext);
  const RowVector pi0 = cfg.initial_distribution(space);
  std::vector<double> grid;
  if (cfg.lifetime.t_end) grid = uniform_grid(*cfg.lifetime.t_end, static_cast<std::size_t>(cfg.lifetime.points));
  LifetimeResult r;
  r.expected = expected_lifetime(sys, pi0);
  if (grid.empty() && std::isfinite(r.expected) && r.expected > 0.0) {
    grid = uniform_grid(10.0 * r.expected, static_cast<std::size_t>(cfg.lifetime.points));
  }
  if (!grid.empty()) {
    r.times = grid;
    r.pdf = lifetime_pdf(sys, pi0, grid, cfg.step_options());
    r.death_mass = trapezoid(r.times, r.pdf);
  }
  w.csv("lifetime.csv", lifetime_table(r.times, r.pdf));
  log << "E[L]=" << fmt(r.expected) << "\n";
  if (!grid.empty()) log << "death mass on grid=" << fmt(r.death_mass) << "\n";
}

inline std::vector<PredictionRow> prediction_rows(const RunConfig& cfg, const ParamVector& x,
                                                  const RowVector& pi0, double default_end,
                                                  double alpha_nadh, double alpha_atp) {
  RateModel model = cfg.model();
  model.params = x;
  model.death = nullptr;
  const double t_end = cfg.predict.t_end.value_or(default_end);
  return predict(model, pi0, cfg.profile, grid_range(t_end, cfg.predict.step), alpha_nadh, alpha_atp,
                 cfg.step_options());
}

inline double default_prediction_end(const RunConfig& cfg) {
  if (std::isfinite(cfg.profile.end_time())) return cfg.profile.end_time();
  return cfg.sections.count("fit") ? cfg.fit.convert.discard_after : 1300.0;
}

inline std::string fit_report(const FitResult& r, const IsolatedIndex& space, const Likelihood& lik) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "status" << YAML::Value << r.status;
  out << YAML::Key << "converged" << YAML::Value << r.converged;
  out << YAML::Key << "identifiable" << YAML::Value << r.identifiable;
  out << YAML::Key << "final_nll" << YAML::Value << fmt(r.nll);
  out << YAML::Key << "delta" << YAML::Value << fmt(lik.delta());
  out << YAML::Key << "steps_per_sample" << YAML::Value << lik.steps_per_interval();
  out << YAML::Key << "x_hat" << YAML::Value << YAML::Flow << YAML::BeginMap;
  for (std::size_t j = 0; j < 4; ++j) out << YAML::Key << kParamNames[j] << YAML::Value << fmt(r.x[j]);
  out << YAML::EndMap;
  double mm = 0.0, mn = 0.0;
  int support = 0;
  for (Eigen::Index i = 0; i < r.pi0.size(); ++i) {
    const CellState s = space.state(static_cast<std::size_t>(i));
    mm += r.pi0(i) * s.m_ch;
    mn += r.pi0(i) * s.n_atp;
    if (r.pi0(i) > 0.0) ++support;
  }
  out << YAML::Key << "pi0" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mean" << YAML::Value << YAML::Flow << YAML::BeginSeq << fmt(mm) << fmt(mn) << YAML::EndSeq;
  out << YAML::Key << "support_size" << YAML::Value << support;
  out << YAML::Key << "qp_kkt_residual" << YAML::Value << fmt(r.qp_kkt);
  out << YAML::Key << "states" << YAML::Value << YAML::BeginSeq;
  for (Eigen::Index i = 0; i < r.pi0.size(); ++i) {
    if (r.pi0(i) <= 0.0) continue;
    const CellState s = space.state(static_cast<std::size_t>(i));
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "m_ch" << YAML::Value << s.m_ch << YAML::Key << "n_atp"
        << YAML::Value << s.n_atp << YAML::Key << "p" << YAML::Value << fmt(r.pi0(i)) << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  out << YAML::Key << "trace" << YAML::Value << YAML::BeginSeq;
  for (const auto& it : r.trace) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "iteration" << YAML::Value << it.iteration << YAML::Key
        << "nll" << YAML::Value << fmt(it.nll) << YAML::Key << "step" << YAML::Value << fmt(it.step)
        << YAML::Key << "backtracks" << YAML::Value << it.backtracks;
    for (std::size_t j = 0; j < 4; ++j) out << YAML::Key << kParamNames[j] << YAML::Value << fmt(it.x[j]);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

inline std::filesystem::path data_path(const RunConfig& cfg) {
  std::filesystem::path p(cfg.fit.data);
  return p.is_absolute() ? p : cfg.base_dir / p;
}

inline void run_fit(const RunConfig& cfg, Writer& w, Manifest& manifest, std::ostream& log) {
  if (!cfg.sections.count("fit")) fail(ErrorKind::config, "config section 'fit' is required for 'fit'");
  const IsolatedIndex space(cfg.caps);
  const auto path = data_path(cfg);
  std::vector<std::string> warnings;
  const TimeSeries ts = load_timeseries(path.string(), cfg.caps, cfg.fit.scale, cfg.fit.convert, &warnings);
  for (const auto& s : warnings) log << "warning: " << s << "\n";
  manifest.inputs.push_back({cfg.fit.data, file_hash(path)});
  const double period = ts.size() > 1 ? ts.spacing() : 1.0;
  const double delta = period / std::ldexp(1.0, cfg.fit.doubling_depth);
  const Likelihood lik(space, ts, cfg.profile, delta);
  const ParamVector init = cfg.fit.init ? *cfg.fit.init : require_params(cfg, "fit");
  const FitResult r = fit(lik, init, cfg.fit.options);
  w.text("fit_report.yaml", fit_report(r, space, lik));
  w.csv("prediction.csv", prediction_table(prediction_rows(cfg, r.x, r.pi0, ts.t.back(), ts.alpha_nadh, ts.alpha_atp)));
  log << "final NLL=" << fmt(r.nll) << " iterations=" << r.trace.size() - 1 << " (" << r.status << ")\n";
  log << "x_hat:";
  for (std::size_t j = 0; j < 4; ++j) log << " " << kParamNames[j] << "=" << fmt(r.x[j]);
  log << "\n";
}

inline std::vector<PredictionRow> run_prediction(const RunConfig& cfg, const std::string& cmd) {
  const IsolatedIndex space(cfg.caps);
  const ParamVector& x = require_params(cfg, cmd);
  const double an = cfg.fit.scale.nadh_max / cfg.caps.m_ch;
  const double aa = cfg.fit.scale.atp_max / cfg.caps.n_axp;
  return prediction_rows(cfg, x, cfg.initial_distribution(space), default_prediction_end(cfg), an, aa);
}

inline void run_predict(const RunConfig& cfg, Writer& w, std::ostream& log) {
  const auto rows = run_prediction(cfg, "predict");
  w.csv("prediction.csv", prediction_table(rows));
  double peak_atp = 0.0;
  for (const auto& r : rows) peak_atp = std::max(peak_atp, r.atp_raw);
  log << "rows=" << rows.size() << " peak expected ATP=" << fmt(peak_atp) << " mM\n";
}

inline void run_panels(const RunConfig& cfg, Writer& w, std::ostream& log) {
  const auto rows = run_prediction(cfg, "panels");
  CsvTable nadh{{"t", "exp_nadh_raw"}, {}}, atp{{"t", "exp_atp_raw"}, {}};
  CsvTable atp_rates{{"t", "rate_atp_syn", "rate_atp_con"}, {}};
  CsvTable nadh_rates{{"t", "rate_nadh_gen", "rate_nadh_con"}, {}};
  for (const auto& r : rows) {
    nadh.rows.push_back({fmt(r.t), fmt(r.nadh_raw)});
    atp.rows.push_back({fmt(r.t), fmt(r.atp_raw)});
    atp_rates.rows.push_back({fmt(r.t), fmt(r.rate_atp_syn), fmt(r.rate_atp_con)});
    nadh_rates.rows.push_back({fmt(r.t), fmt(r.rate_nadh_gen), fmt(r.rate_nadh_con)});
  }
  w.csv("panel_nadh.csv", nadh);
  w.csv("panel_atp.csv", atp);
  w.csv("panel_atp_rates.csv", atp_rates);
  w.csv("panel_nadh_rates.csv", nadh_rates);
  log << "wrote 4 panels with " << rows.size() << " rows each\n";
}

}  // namespace detail

/// Runs one subcommand, writes its files and a manifest.json into out_dir.
inline ResultBundle run_subcommand(const std::string& cmd, const RunConfig& cfg,
                                   const std::filesystem::path& out_dir, std::ostream& log) {
  if (std::find(subcommands().begin(), subcommands().end(), cmd) == subcommands().end()) {
    fail(ErrorKind::invalid_argument, "unknown subcommand '" + cmd + "'");
  }
  for (const auto& s : cfg.warnings) log << "warning: " << s << "\n";
  detail::warn_unused_sections(cmd, cfg, log);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create output directory " + out_dir.string());

  ResultBundle bundle;
  bundle.out_dir = out_dir;
  Manifest& m = bundle.manifest;
  m.command = cmd;
  m.config = normalized_yaml(cfg);
  m.config_hash = hex64(fnv1a(m.config));
  m.seed = cfg.seed;
  m.base_dir = std::filesystem::absolute(cfg.base_dir).lexically_normal().string();

  detail::Writer w(out_dir, bundle);
  if (cmd == "transient") detail::run_transient(cfg, w, log);
  if (cmd == "simulate") detail::run_simulate(cfg, w, log);
  if (cmd == "lifetime") detail::run_lifetime(cfg, w, log);
  if (cmd == "fit") detail::run_fit(cfg, w, m, log);
  if (cmd == "predict") detail::run_predict(cfg, w, log);
  if (cmd == "panels") detail::run_panels(cfg, w, log);

  for (const auto& f : bundle.files) m.outputs.push_back({f, file_hash(out_dir / f)});
  m.write(out_dir / "manifest.json");
  bundle.files.push_back("manifest.json");
  return bundle;
}

/// Reruns a manifest into out_dir and checks every output hash. Returns the mismatching
/// file names (empty on an exact reproduction).
inline std::vector<std::string> replay(const std::filesystem::path& manifest_path,
                                       const std::filesystem::path& out_dir, std::ostream& log) {
  const Manifest m = Manifest::read(manifest_path);
  if (hex64(fnv1a(m.config)) != m.config_hash) fail(ErrorKind::data, "manifest config hash mismatch");
  const RunConfig cfg = parse_config_string(m.config, m.base_dir);
  for (const auto& in : m.inputs) {
    std::filesystem::path p(in.file);
    if (!p.is_absolute()) p = std::filesystem::path(m.base_dir) / p;
    if (file_hash(p) != in.hash) fail(ErrorKind::data, "input " + p.string() + " changed since the original run");
  }
  const ResultBundle b = run_subcommand(m.command, cfg, out_dir, log);
  std::vector<std::string> mismatched;
  for (const auto& o : m.outputs) {
    const auto it = std::find_if(b.manifest.outputs.begin(), b.manifest.outputs.end(),
                                 [&](const ManifestEntry& e) { return e.file == o.file; });
    if (it == b.manifest.outputs.end() || it->hash != o.hash) mismatched.push_back(o.file);
  }
  return mismatched;
}

}  // namespace ecable::io
