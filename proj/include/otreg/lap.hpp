#pragma once

// Exact linear assignment solvers.
//
// Both solvers are shortest augmenting path methods with dual potentials in
// the Jonker-Volgenant family: a column reduction gives a feasible dual start
// and a partial matching, then every free row is augmented along a shortest
// path in reduced costs (Dijkstra). The dense variant scans full rows; the
// sparse variant only follows stored edges and keeps its frontier in a heap.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "otreg/common.hpp"

namespace otreg::lap {

// No perfect matching exists among the stored entries of a sparse matrix.
class InfeasibleAssignment : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CostMatrix {
 public:
  CostMatrix() = default;

  explicit CostMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

  CostMatrix(std::size_t n, std::vector<double> data) : n_(n), data_(std::move(data)) {
    detail::require(data_.size() == n_ * n_, "cost matrix must be square: ", data_.size(), " entries for n=", n_);
    validate();
  }

  static CostMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    std::vector<double> data;
    data.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      detail::require(rows[i].size() == n, "cost matrix must be square: row ", i, " has ", rows[i].size(),
                                     " entries, expected ", n);
      data.insert(data.end(), rows[i].begin(), rows[i].end());
    }
    return CostMatrix(n, std::move(data));
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * n_, n_}; }
  const std::vector<double>& data() const { return data_; }

  void validate() const {
    for (std::size_t k = 0; k < data_.size(); ++k) {
      const double c = data_[k];
      if (!(std::isfinite(c) && c >= 0.0))
        throw std::invalid_argument(detail::concat("cost entry (", k / n_, ", ", k % n_, ") = ", c,
                                                   " is not finite and non-negative"));
    }
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

struct SparseEntry {
  int col;
  double cost;
};

// Row-compressed square cost structure. Columns are strictly increasing
// within each row.
class SparseCostMatrix {
 public:
  SparseCostMatrix() = default;

  explicit SparseCostMatrix(const std::vector<std::vector<SparseEntry>>& rows) {
    n_ = rows.size();
    row_start_.reserve(n_ + 1);
    row_start_.push_back(0);
    for (const auto& r : rows) {
      entries_.insert(entries_.end(), r.begin(), r.end());
      row_start_.push_back(entries_.size());
    }
    validate();
  }

  // Takes ownership of already-compressed storage.
  SparseCostMatrix(std::size_t n, std::vector<std::size_t> row_start, std::vector<SparseEntry> entries)
      : n_(n), row_start_(std::move(row_start)), entries_(std::move(entries)) {
    validate();
  }

  static SparseCostMatrix from_dense(const CostMatrix& dense) {
    const std::size_t n = dense.size();
    std::vector<std::size_t> start(n + 1, 0);
    std::vector<SparseEntry> entries;
    entries.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) entries.push_back({static_cast<int>(j), dense(i, j)});
      start[i + 1] = entries.size();
    }
    return SparseCostMatrix(n, std::move(start), std::move(entries));
  }

  std::size_t size() const { return n_; }
  std::size_t nnz() const { return entries_.size(); }

  std::span<const SparseEntry> row(std::size_t i) const {
    return {entries_.data() + row_start_[i], row_start_[i + 1] - row_start_[i]};
  }

  // Cost of (i, j); NaN when the entry is not stored.
  double find(std::size_t i, int j) const {
    const auto r = row(i);
    const auto it = std::lower_bound(r.begin(), r.end(), j,
                                     [](const SparseEntry& e, int col) { return e.col < col; });
    if (it == r.end() || it->col != j) return std::numeric_limits<double>::quiet_NaN();
    return it->cost;
  }

 private:
  void validate() const {
    detail::require(row_start_.size() == n_ + 1 && row_start_.back() == entries_.size(),
                    "sparse cost matrix has inconsistent row offsets");
    for (std::size_t i = 0; i < n_; ++i) {
      const auto r = row(i);
      if (r.empty()) throw std::invalid_argument(detail::concat("sparse cost row ", i, " has no entries"));
      int prev = -1;
      for (const auto& e : r) {
        if (e.col < 0 || static_cast<std::size_t>(e.col) >= n_)
          throw std::invalid_argument(detail::concat("sparse cost row ", i, ": column ", e.col, " out of range"));
        if (e.col <= prev)
          throw std::invalid_argument(
              detail::concat("sparse cost row ", i, ": columns must be strictly increasing"));
        if (!(std::isfinite(e.cost) && e.cost >= 0.0))
          throw std::invalid_argument(detail::concat("sparse cost (", i, ", ", e.col, ") = ", e.cost,
                                                     " is not finite and non-negative"));
        prev = e.col;
      }
    }
  }

  std::size_t n_ = 0;
  std::vector<std::size_t> row_start_;
  std::vector<SparseEntry> entries_;
};

struct Assignment {
  std::vector<int> row_to_col;
  double total_cost = 0.0;
};

namespace detail_sap {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Matching state shared by both solvers. Reduced cost of (i, j) is
// c(i, j) - u[i] - v[j] >= 0, and zero on matched pairs.
struct State {
  explicit State(std::size_t n)
      : u(n, 0.0), v(n, kInf), row4col(n, -1), col4row(n, -1), path(n, -1), dist(n, kInf),
        scanned_col(n, false) {}

  std::vector<double> u, v;
  std::vector<int> row4col, col4row, path;
  std::vector<double> dist;
  std::vector<bool> scanned_col;
  std::vector<int> scanned_rows, scanned_cols;

  // Dual update and path flip once a sink column has been reached at
  // distance `min_val` from `start`.
  void finish(int start, int sink, double min_val) {
    u[start] += min_val;
    for (int i : scanned_rows)
      if (i != start) u[i] += min_val - dist[col4row[i]];
    for (int j : scanned_cols) v[j] -= min_val - dist[j];

    int j = sink;
    while (true) {
      const int i = path[j];
      row4col[j] = i;
      std::swap(col4row[i], j);
      if (i == start) break;
    }
  }
};

}  // namespace detail_sap

inline Assignment solve_dense(const CostMatrix& cost) {
  using detail_sap::kInf;
  const std::size_t n = cost.size();
  Assignment out;
  if (n == 0) return out;
  cost.validate();

  detail_sap::State s(n);

  // Column reduction: v[j] = min_i c(i, j); matching each column to its
  // argmin row when that row is still free.
  std::vector<int> argmin(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = cost.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (r[j] < s.v[j]) {
        s.v[j] = r[j];
        argmin[j] = static_cast<int>(i);
      }
    }
  }
  for (std::size_t jj = n; jj-- > 0;) {
    const int i = argmin[jj];
    if (s.col4row[i] == -1) {
      s.col4row[i] = static_cast<int>(jj);
      s.row4col[jj] = i;
    }
  }

  // Free rows take u[i] = min_j c(i, j) - v[j], which keeps every reduced
  // cost non-negative, and grab a free column on that minimum if there is
  // one. Repeated rows share their tight columns, so this settles most of
  // them without a search.
  for (std::size_t i = 0; i < n; ++i) {
    if (s.col4row[i] != -1) continue;
    const auto r = cost.row(i);
    double lowest = kInf;
    int pick = -1;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = r[j] - s.v[j];
      if (d < lowest || (d == lowest && pick != -1 && s.row4col[pick] != -1 && s.row4col[j] == -1)) {
        lowest = d;
        pick = static_cast<int>(j);
      }
    }
    s.u[i] = lowest;
    if (s.row4col[pick] == -1) {
      s.col4row[i] = pick;
      s.row4col[pick] = static_cast<int>(i);
    }
  }

  std::vector<int> remaining(n);
  for (std::size_t start = 0; start < n; ++start) {
    if (s.col4row[start] != -1) continue;

    std::size_t num_remaining = n;
    for (std::size_t k = 0; k < n; ++k) remaining[k] = static_cast<int>(n - k - 1);
    std::fill(s.dist.begin(), s.dist.end(), kInf);
    s.scanned_rows.clear();
    s.scanned_cols.clear();

    int i = static_cast<int>(start);
    int sink = -1;
    double min_val = 0.0;
    while (sink == -1) {
      s.scanned_rows.push_back(i);
      const auto r = cost.row(i);
      const double base = min_val - s.u[i];
      std::size_t best = 0;
      double lowest = kInf;
      for (std::size_t k = 0; k < num_remaining; ++k) {
        const int j = remaining[k];
        const double d = base + r[j] - s.v[j];
        if (d < s.dist[j]) {
          s.path[j] = i;
          s.dist[j] = d;
        }
        // Prefer a free column on ties: it ends the search.
        if (s.dist[j] < lowest || (s.dist[j] == lowest && s.row4col[j] == -1)) {
          lowest = s.dist[j];
          best = k;
        }
      }
      min_val = lowest;
      const int j = remaining[best];
      s.scanned_cols.push_back(j);
      remaining[best] = remaining[--num_remaining];
      if (s.row4col[j] == -1) {
        sink = j;
      } else {
        i = s.row4col[j];
      }
    }
    s.finish(static_cast<int>(start), sink, min_val);
  }

  out.row_to_col = std::move(s.col4row);
  for (std::size_t i = 0; i < n; ++i) out.total_cost += cost(i, out.row_to_col[i]);
  return out;
}

inline Assignment solve_sparse(const SparseCostMatrix& cost) {
  using detail_sap::kInf;
  const std::size_t n = cost.size();
  Assignment out;
  if (n == 0) return out;

  detail_sap::State s(n);

  std::vector<int> argmin(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& e : cost.row(i)) {
      if (e.cost < s.v[e.col]) {
        s.v[e.col] = e.cost;
        argmin[e.col] = static_cast<int>(i);
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (argmin[j] == -1)
      throw InfeasibleAssignment(detail::concat("column ", j, " has no stored entries"));
  }
  for (std::size_t jj = n; jj-- > 0;) {
    const int i = argmin[jj];
    if (s.col4row[i] == -1) {
      s.col4row[i] = static_cast<int>(jj);
      s.row4col[jj] = i;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (s.col4row[i] != -1) continue;
    double lowest = kInf;
    int pick = -1;
    for (const auto& e : cost.row(i)) {
      const double d = e.cost - s.v[e.col];
      if (d < lowest || (d == lowest && s.row4col[pick] != -1 && s.row4col[e.col] == -1)) {
        lowest = d;
        pick = e.col;
      }
    }
    s.u[i] = lowest;
    if (s.row4col[pick] == -1) {
      s.col4row[i] = pick;
      s.row4col[pick] = static_cast<int>(i);
    }
  }

  // Frontier ordered by (distance, column is matched, column index).
  struct Item {
    double dist;
    bool matched;
    int col;
    bool operator>(const Item& o) const {
      if (dist != o.dist) return dist > o.dist;
      if (matched != o.matched) return matched > o.matched;
      return col > o.col;
    }
  };
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  std::vector<int> touched;

  for (std::size_t start = 0; start < n; ++start) {
    if (s.col4row[start] != -1) continue;

    s.scanned_rows.clear();
    s.scanned_cols.clear();
    touched.clear();

    int i = static_cast<int>(start);
    int sink = -1;
    double min_val = 0.0;
    while (sink == -1) {
      s.scanned_rows.push_back(i);
      const double base = min_val - s.u[i];
      for (const auto& e : cost.row(i)) {
        const int j = e.col;
        if (s.scanned_col[j]) continue;
        const double d = base + e.cost - s.v[j];
        if (d < s.dist[j]) {
          if (s.dist[j] == kInf) touched.push_back(j);
          s.dist[j] = d;
          s.path[j] = i;
          heap.push({d, s.row4col[j] != -1, j});
        }
      }
      int j = -1;
      while (!heap.empty()) {
        const Item top = heap.top();
        heap.pop();
        if (!s.scanned_col[top.col] && top.dist == s.dist[top.col]) {
          j = top.col;
          break;
        }
      }
      if (j == -1) {
        heap = {};
        for (int t : touched) {
          s.dist[t] = kInf;
          s.scanned_col[t] = false;
        }
        throw InfeasibleAssignment(
            detail::concat("no augmenting path from row ", start, " within stored entries"));
      }
      min_val = s.dist[j];
      s.scanned_col[j] = true;
      s.scanned_cols.push_back(j);
      if (s.row4col[j] == -1) {
        sink = j;
      } else {
        i = s.row4col[j];
      }
    }
    s.finish(static_cast<int>(start), sink, min_val);

    for (int t : touched) {
      s.dist[t] = kInf;
      s.scanned_col[t] = false;
    }
    heap = {};
  }

  out.row_to_col = std::move(s.col4row);
  for (std::size_t i = 0; i < n; ++i) out.total_cost += cost.find(i, out.row_to_col[i]);
  return out;
}

// Exhaustive search over all permutations; the lexicographically smallest
// optimal permutation wins ties.
inline Assignment brute_force(const CostMatrix& cost) {
  const std::size_t n = cost.size();
  detail::require(n <= 10, "brute_force supports n <= 10, got n=", n);
  cost.validate();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best{perm, std::numeric_limits<double>::infinity()};
  if (n == 0) {
    best.total_cost = 0.0;
    return best;
  }
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost(i, perm[i]);
    if (total < best.total_cost) {
      best.total_cost = total;
      best.row_to_col = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace otreg::lap
