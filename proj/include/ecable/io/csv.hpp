#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ecable/error.hpp"
#include "ecable/inference.hpp"
#include "ecable/simulation.hpp"

namespace ecable::io {

/// Shortest decimal string that parses back to exactly `v`.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  const auto r = std::from_chars(first, s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) {
    fail(ErrorKind::data, where + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::data, path + ": empty file");
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      fail(ErrorKind::data, path + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                                std::to_string(cells.size()) + " fields, expected " +
                                std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline void write_csv(std::ostream& out, const CsvTable& t) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

inline void write_csv(const std::string& path, const CsvTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  write_csv(out, t);
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

/// Raw readings from a `t,nadh,atp` file.
inline std::vector<RawSample> read_raw_series(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"t", "nadh", "atp"}) {
    fail(ErrorKind::data, path + ": header must be t,nadh,atp");
  }
  std::vector<RawSample> out;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const std::string where = path + " row " + std::to_string(k + 1);
    RawSample s{parse_double(t.rows[k][0], where), parse_double(t.rows[k][1], where),
                parse_double(t.rows[k][2], where)};
    if (!(s.nadh >= 0.0) || !(s.atp >= 0.0)) fail(ErrorKind::data, where + ": negative reading");
    if (k > 0 && !(s.t > out.back().t)) fail(ErrorKind::data, where + ": time stamps must increase");
    out.push_back(s);
  }
  return out;
}

/// Parses, converts to model units and checks uniform spacing.
inline TimeSeries load_timeseries(const std::string& path, const Capacities& caps,
                                  const FullScale& scale = {}, const ConvertOptions& opt = {},
                                  std::vector<std::string>* warnings = nullptr) {
  const auto raw = read_raw_series(path);
  TimeSeries ts = convert_units(raw, caps, scale, opt, warnings);
  ts.validate(caps);
  return ts;
}

inline CsvTable timeseries_table(const TimeSeries& ts) {
  CsvTable t{{"t", "nadh", "atp"}, {}};
  for (std::size_t k = 0; k < ts.size(); ++k) {
    t.rows.push_back({fmt(ts.t[k]), fmt(ts.y[k][0] * ts.alpha_nadh), fmt(ts.y[k][1] * ts.alpha_atp)});
  }
  return t;
}

inline CsvTable prediction_table(const std::vector<PredictionRow>& rows) {
  CsvTable t{{"t", "exp_nadh_units", "exp_atp_units", "exp_nadh_raw", "exp_atp_raw", "rate_atp_syn",
              "rate_atp_con", "rate_nadh_gen", "rate_nadh_con"},
             {}};
  for (const auto& r : rows) {
    t.rows.push_back({fmt(r.t), fmt(r.nadh_units), fmt(r.atp_units), fmt(r.nadh_raw), fmt(r.atp_raw),
                      fmt(r.rate_atp_syn), fmt(r.rate_atp_con), fmt(r.rate_nadh_gen),
                      fmt(r.rate_nadh_con)});
  }
  return t;
}

inline CsvTable lifetime_table(const std::vector<double>& times, const std::vector<double>& pdf) {
  CsvTable t{{"t", "pdf"}, {}};
  for (std::size_t k = 0; k < times.size(); ++k) t.rows.push_back({fmt(times[k]), fmt(pdf[k])});
  return t;
}

inline std::vector<std::string> event_row(const LoggedEvent& e) {
  if (e.post.dead) return {std::to_string(e.k), fmt(e.t), to_string(e.kind), std::to_string(e.cell), "", "", "", ""};
  return {std::to_string(e.k), fmt(e.t), to_string(e.kind), std::to_string(e.cell),
          std::to_string(e.post.m_ch), std::to_string(e.post.n_atp), std::to_string(e.post.q_l),
          std::to_string(e.post.q_h)};
}

/// Event log with a k = 0 row holding the initial state of `cell0`.
inline CsvTable event_log_table(const CellState& initial, const std::vector<LoggedEvent>& events) {
  CsvTable t{{"k", "t", "event", "cell", "m_ch", "n_atp", "q_l", "q_h"}, {}};
  t.rows.push_back(event_row({0, 0.0, EventKind::initial, 0, initial}));
  for (const auto& e : events) t.rows.push_back(event_row(e));
  return t;
}

/// Cable event log: one k = 0 row per cell, then the events.
inline CsvTable event_log_table(const CableState& initial, const std::vector<LoggedEvent>& events) {
  CsvTable t{{"k", "t", "event", "cell", "m_ch", "n_atp", "q_l", "q_h"}, {}};
  for (std::size_t c = 0; c < initial.cells(); ++c) {
    t.rows.push_back(event_row({0, 0.0, EventKind::initial, static_cast<int>(c), initial.cell(c)}));
  }
  for (const auto& e : events) t.rows.push_back(event_row(e));
  return t;
}

inline CsvTable ensemble_table(const EnsembleStats& st) {
  CsvTable t{{"t", "mean_m_ch", "var_m_ch", "mean_n_atp", "var_n_atp", "death_fraction"}, {}};
  for (std::size_t k = 0; k < st.times.size(); ++k) {
    t.rows.push_back({fmt(st.times[k]), fmt(st.mean_m[k]), fmt(st.var_m[k]), fmt(st.mean_n[k]),
                      fmt(st.var_n[k]), fmt(st.death_fraction[k])});
  }
  return t;
}

inline CsvTable ledger_table(const std::vector<PoolLedger>& ledger) {
  CsvTable t{{"pool", "in", "out", "initial", "final", "balanced"}, {}};
  for (std::size_t p = 0; p < ledger.size(); ++p) {
    const auto& l = ledger[p];
    t.rows.push_back({std::to_string(p), std::to_string(l.in), std::to_string(l.out),
                      std::to_string(l.initial), std::to_string(l.final_level),
                      l.balanced() ? "true" : "false"});
  }
  return t;
}

}  // namespace ecable::io
