#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ecable/error.hpp"

namespace ecable {

/// Pool capacities of one cell, in model units.
struct Capacities {
  int m_ch = 0;   // internal electron carrier pool (IECP)
  int n_axp = 0;  // ATP + ADP
  int q_l = 1;    // low-energy external membrane (LEEM)
  int q_h = 1;    // high-energy external membrane (HEEM)

  void validate() const {
    auto check = [](int v, const char* name) {
      if (v <= 0) {
        fail(ErrorKind::invalid_argument,
             std::string("capacity ") + name + " must be a positive integer, got " +
                 std::to_string(v));
      }
    };
    check(m_ch, "m_ch");
    check(n_axp, "n_axp");
    check(q_l, "q_l");
    check(q_h, "q_h");
  }

  friend bool operator==(const Capacities&, const Capacities&) = default;
};

/// Internal state of one cell. A dead cell carries no pool values.
struct CellState {
  int m_ch = 0;
  int n_atp = 0;
  int q_l = 0;
  int q_h = 0;
  bool dead = false;

  static CellState alive(int m, int n, int ql = 0, int qh = 0) { return {m, n, ql, qh, false}; }
  static CellState dead_state() { return {0, 0, 0, 0, true}; }

  bool within(const Capacities& caps) const {
    if (dead) return true;
    return m_ch >= 0 && m_ch <= caps.m_ch && n_atp >= 0 && n_atp <= caps.n_axp && q_l >= 0 &&
           q_l <= caps.q_l && q_h >= 0 && q_h <= caps.q_h;
  }

  friend bool operator==(const CellState&, const CellState&) = default;
};

namespace detail {

// Saturating product of radices; returns max() on overflow.
inline std::uint64_t checked_product(const std::vector<std::uint64_t>& radices) {
  std::uint64_t total = 1;
  for (auto r : radices) {
    if (r != 0 && total > std::numeric_limits<std::uint64_t>::max() / r) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    total *= r;
  }
  return total;
}

}  // namespace detail

/// Transient states of an isolated cell, (m_ch, n_atp) row-major with m_ch outermost.
/// The external membrane is fixed at (q_l, q_h) = (Q_L, 0) and DEAD is not indexed.
class IsolatedIndex {
 public:
  explicit IsolatedIndex(const Capacities& caps) : caps_(caps) {
    caps.validate();
    const std::uint64_t total = detail::checked_product(
        {static_cast<std::uint64_t>(caps.m_ch) + 1, static_cast<std::uint64_t>(caps.n_axp) + 1});
    if (total > static_cast<std::uint64_t>(std::numeric_limits<int>::max())) {
      fail(ErrorKind::invalid_argument, "isolated state space overflows the index domain");
    }
    size_ = static_cast<std::size_t>(total);
  }

  std::size_t size() const { return size_; }
  const Capacities& capacities() const { return caps_; }

  std::size_t index(int m, int n) const {
    return static_cast<std::size_t>(m) * static_cast<std::size_t>(caps_.n_axp + 1) +
           static_cast<std::size_t>(n);
  }
  std::size_t index(const CellState& s) const { return index(s.m_ch, s.n_atp); }

  CellState state(std::size_t i) const {
    const auto stride = static_cast<std::size_t>(caps_.n_axp + 1);
    return CellState::alive(static_cast<int>(i / stride), static_cast<int>(i % stride), caps_.q_l, 0);
  }

  bool contains(int m, int n) const {
    return m >= 0 && m <= caps_.m_ch && n >= 0 && n <= caps_.n_axp;
  }

 private:
  Capacities caps_;
  std::size_t size_ = 0;
};

inline IsolatedIndex build_isolated_space(const Capacities& caps) { return IsolatedIndex(caps); }

/// Joint state of a cable: per-cell IECP and ATP levels plus n_cells + 1 electron pools.
/// Pool 0 is the HEEM of cell 0, pool c (0 < c < n_cells) is shared between cells c-1 and c,
/// and pool n_cells is the LEEM of the last cell. Cell c reads its HEEM from pool c and
/// writes its LEEM into pool c + 1.
struct CableState {
  std::vector<int> m_ch;
  std::vector<int> n_atp;
  std::vector<int> pools;

  std::size_t cells() const { return m_ch.size(); }

  /// View of cell c as a single-cell state (q_l = downstream pool, q_h = upstream pool).
  CellState cell(std::size_t c) const {
    return CellState::alive(m_ch[c], n_atp[c], pools[c + 1], pools[c]);
  }

  friend bool operator==(const CableState&, const CableState&) = default;
};

inline constexpr std::uint64_t kDefaultDenseBound = 1'000'000;

/// Mixed-radix index over a cable's joint state space. Digits are ordered
/// (m_0, n_0, m_1, n_1, ..., pool_0, ..., pool_n) with the first digit most significant,
/// so a one-cell cable orders (m, n) exactly like IsolatedIndex.
class CableIndex {
 public:
  CableIndex(const Capacities& caps, int n_cells, std::uint64_t dense_bound = kDefaultDenseBound)
      : caps_(caps), n_cells_(n_cells), dense_bound_(dense_bound) {
    caps.validate();
    if (n_cells < 1) fail(ErrorKind::invalid_argument, "a cable needs at least one cell");
    // Interior pools merge the LEEM of cell c-1 with the HEEM of cell c and take the
    // upstream LEEM capacity. Only the boundary HEEM of cell 0 uses q_h.
    pool_caps_.assign(static_cast<std::size_t>(n_cells) + 1, caps.q_l);
    pool_caps_.front() = caps.q_h;

    for (int c = 0; c < n_cells; ++c) {
      radices_.push_back(static_cast<std::uint64_t>(caps.m_ch) + 1);
      radices_.push_back(static_cast<std::uint64_t>(caps.n_axp) + 1);
    }
    for (int q : pool_caps_) radices_.push_back(static_cast<std::uint64_t>(q) + 1);
    size_ = detail::checked_product(radices_);
  }

  int cells() const { return n_cells_; }
  std::size_t pool_count() const { return pool_caps_.size(); }
  int pool_capacity(std::size_t p) const { return pool_caps_[p]; }
  const Capacities& capacities() const { return caps_; }

  /// Joint state count; saturates at uint64 max.
  std::uint64_t size() const { return size_; }
  std::uint64_t dense_bound() const { return dense_bound_; }
  bool dense_allowed() const { return size_ <= dense_bound_; }

  void require_dense() const {
    if (!dense_allowed()) {
      fail(ErrorKind::numerical, "cable joint space has " + std::to_string(size_) +
                                     " states, above the dense-matrix bound of " +
                                     std::to_string(dense_bound_) +
                                     "; use trajectory simulation instead");
    }
  }

  bool contains(const CableState& s) const {
    if (s.m_ch.size() != static_cast<std::size_t>(n_cells_) || s.n_atp.size() != s.m_ch.size() ||
        s.pools.size() != pool_caps_.size()) {
      return false;
    }
    for (std::size_t c = 0; c < s.m_ch.size(); ++c) {
      if (s.m_ch[c] < 0 || s.m_ch[c] > caps_.m_ch || s.n_atp[c] < 0 || s.n_atp[c] > caps_.n_axp) {
        return false;
      }
    }
    for (std::size_t p = 0; p < s.pools.size(); ++p) {
      if (s.pools[p] < 0 || s.pools[p] > pool_caps_[p]) return false;
    }
    return true;
  }

  std::uint64_t index(const CableState& s) const {
    std::uint64_t idx = 0;
    std::size_t d = 0;
    for (std::size_t c = 0; c < s.m_ch.size(); ++c) {
      idx = idx * radices_[d++] + static_cast<std::uint64_t>(s.m_ch[c]);
      idx = idx * radices_[d++] + static_cast<std::uint64_t>(s.n_atp[c]);
    }
    for (int q : s.pools) idx = idx * radices_[d++] + static_cast<std::uint64_t>(q);
    return idx;
  }

  CableState state(std::uint64_t idx) const {
    std::vector<int> digits(radices_.size());
    for (std::size_t d = radices_.size(); d-- > 0;) {
      digits[d] = static_cast<int>(idx % radices_[d]);
      idx /= radices_[d];
    }
    CableState s;
    const auto n = static_cast<std::size_t>(n_cells_);
    for (std::size_t c = 0; c < n; ++c) {
      s.m_ch.push_back(digits[2 * c]);
      s.n_atp.push_back(digits[2 * c + 1]);
    }
    s.pools.assign(digits.begin() + static_cast<std::ptrdiff_t>(2 * n), digits.end());
    return s;
  }

 private:
  Capacities caps_;
  int n_cells_;
  std::uint64_t dense_bound_;
  std::vector<int> pool_caps_;
  std::vector<std::uint64_t> radices_;
  std::uint64_t size_ = 0;
};

inline CableIndex build_cable_space(const Capacities& caps, int n_cells,
                                    std::uint64_t dense_bound = kDefaultDenseBound) {
  return CableIndex(caps, n_cells, dense_bound);
}

}  // namespace ecable
