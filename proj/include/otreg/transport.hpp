#pragma once

// Ground cost between labelled samples, dense and k-NN sparsified cost
// matrices over real/generated sample sets, and the empirical transport cost
// with its optimal plan.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "otreg/common.hpp"
#include "otreg/lap.hpp"

namespace otreg {

struct TransportConfig {
  double lambda = 0.9;  // weight of the x part; 1 - lambda weighs y
  double p = 1.0;       // L_p exponent
  int k_neighbors = 10; // unique x-neighbours kept per row (sparse mode)
  std::size_t n = 1;    // feature dimension
  std::size_t m = 1;    // target dimension

  void validate() const {
    detail::require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1], got ", lambda);
    detail::require(p >= 1.0, "p must be >= 1, got ", p);
    detail::require(k_neighbors >= 1, "k_neighbors must be >= 1, got ", k_neighbors);
    detail::require(n >= 1 && m >= 1, "feature and target dimensions must be >= 1");
  }
};

// Non-owning view of one (x, y) pair.
struct LabeledSample {
  std::span<const double> x;
  std::span<const double> y;
};

// Row-aligned sample set: row i of x pairs with row i of y.
struct SampleSet {
  Matrix x;
  Matrix y;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }

  LabeledSample operator[](std::size_t i) const {
    return {detail::row_span(x, static_cast<Eigen::Index>(i)),
            detail::row_span(y, static_cast<Eigen::Index>(i))};
  }
};

// Group labels for the repeated-real batch layout: real i and fake j belong
// to the unique real real_parent[i] / fake_parent[j].
struct Grouping {
  std::vector<int> real_parent;
  std::vector<int> fake_parent;

  static Grouping identity(std::size_t n) {
    Grouping g;
    g.real_parent.resize(n);
    std::iota(g.real_parent.begin(), g.real_parent.end(), 0);
    g.fake_parent = g.real_parent;
    return g;
  }

  int group_count() const {
    int count = 0;
    for (int g : real_parent) count = std::max(count, g + 1);
    return count;
  }
};

struct TransportPlan {
  std::vector<std::pair<int, int>> pairs;  // (real index, fake index)
  double total_cost = 0.0;                 // sum of matched unit costs
};

struct OtResult {
  double cost = 0.0;  // total_cost / N
  TransportPlan plan;
};

namespace detail {

inline void check_sample(const LabeledSample& a, const LabeledSample& b, const TransportConfig& cfg) {
  if (a.x.size() != cfg.n || b.x.size() != cfg.n)
    throw std::invalid_argument(
        concat("x dimension mismatch: ", a.x.size(), " and ", b.x.size(), ", expected ", cfg.n));
  if (a.y.size() != cfg.m || b.y.size() != cfg.m)
    throw std::invalid_argument(
        concat("y dimension mismatch: ", a.y.size(), " and ", b.y.size(), ", expected ", cfg.m));
}

inline double pow_abs(double d, double p) {
  const double a = std::abs(d);
  return p == 1.0 ? a : (p == 2.0 ? a * a : std::pow(a, p));
}

// The bracketed sum before the 1/p root.
inline double cost_inner(const LabeledSample& a, const LabeledSample& b, const TransportConfig& cfg) {
  double sx = 0.0;
  for (std::size_t i = 0; i < cfg.n; ++i) sx += pow_abs(a.x[i] - b.x[i], cfg.p);
  double sy = 0.0;
  for (std::size_t i = 0; i < cfg.m; ++i) sy += pow_abs(a.y[i] - b.y[i], cfg.p);
  return cfg.lambda / static_cast<double>(cfg.n) * sx +
         (1.0 - cfg.lambda) / static_cast<double>(cfg.m) * sy;
}

inline double root(double s, double p) {
  return p == 1.0 ? s : (p == 2.0 ? std::sqrt(s) : std::pow(s, 1.0 / p));
}

inline void check_sets(const SampleSet& reals, const SampleSet& fakes, const TransportConfig& cfg) {
  require(reals.size() == fakes.size(), "real and fake sets differ in size: ", reals.size(), " vs ", fakes.size());
  require(static_cast<std::size_t>(reals.x.cols()) == cfg.n &&
              static_cast<std::size_t>(fakes.x.cols()) == cfg.n, "x dimension mismatch, expected ", cfg.n);
  require(static_cast<std::size_t>(reals.y.cols()) == cfg.m &&
              static_cast<std::size_t>(fakes.y.cols()) == cfg.m, "y dimension mismatch, expected ", cfg.m);
  require(reals.y.rows() == reals.x.rows() && fakes.y.rows() == fakes.x.rows(),
          "x and y row counts differ within a sample set");
}

}  // namespace detail

// Weighted L_p ground cost
//   [ lambda/n sum |x_a - x_b|^p + (1 - lambda)/m sum |y_a - y_b|^p ]^(1/p).
inline double unit_cost(const LabeledSample& a, const LabeledSample& b, const TransportConfig& cfg) {
  detail::check_sample(a, b, cfg);
  return detail::root(detail::cost_inner(a, b, cfg), cfg.p);
}

// Partial derivative of unit_cost with respect to the generated target y_b.
// At p = 1 this is the subgradient with sign(0) = 0; for p > 1 the gradient
// is taken as zero where the cost itself is zero.
inline std::vector<double> unit_cost_grad_fake_y(const LabeledSample& a, const LabeledSample& b,
                                                 const TransportConfig& cfg) {
  detail::check_sample(a, b, cfg);
  std::vector<double> grad(cfg.m, 0.0);
  const double wy = (1.0 - cfg.lambda) / static_cast<double>(cfg.m);
  if (cfg.p == 1.0) {
    for (std::size_t i = 0; i < cfg.m; ++i) {
      const double d = b.y[i] - a.y[i];
      grad[i] = wy * static_cast<double>((d > 0.0) - (d < 0.0));
    }
    return grad;
  }
  const double s = detail::cost_inner(a, b, cfg);
  if (s <= 0.0) return grad;
  // d/dy_b s^(1/p) = s^(1/p - 1) * wy * |d|^(p-1) * sign(d)
  const double outer = std::pow(s, 1.0 / cfg.p - 1.0);
  for (std::size_t i = 0; i < cfg.m; ++i) {
    const double d = b.y[i] - a.y[i];
    const double sign = static_cast<double>((d > 0.0) - (d < 0.0));
    grad[i] = outer * wy * std::pow(std::abs(d), cfg.p - 1.0) * sign;
  }
  return grad;
}

inline lap::CostMatrix build_dense_cost(const SampleSet& reals, const SampleSet& fakes,
                                        const TransportConfig& cfg) {
  cfg.validate();
  detail::check_sets(reals, fakes, cfg);
  const std::size_t n = reals.size();
  lap::CostMatrix cost(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = reals[i];
    for (std::size_t j = 0; j < n; ++j)
      cost(i, j) = detail::root(detail::cost_inner(a, fakes[j], cfg), cfg.p);
  }
  return cost;
}

// For each unique real (group), the neighbour groups kept in its sparse rows:
// itself plus the k - 1 nearest other groups in x (pure L_p on x), ties
// broken by lower group index. Row g of the result lives at [g * k, g * k + k).
struct NeighborTable {
  int k = 0;
  std::vector<int> groups;
  std::span<const int> of(int g) const { return {groups.data() + static_cast<std::size_t>(g) * k, static_cast<std::size_t>(k)}; }
};

inline NeighborTable unique_x_neighbors(const SampleSet& reals, const Grouping& groups, const TransportConfig& cfg) {
  const int count = groups.group_count();
  const auto nx = static_cast<std::size_t>(reals.x.cols());
  std::vector<int> representative(count, -1);
  for (std::size_t i = 0; i < groups.real_parent.size(); ++i) {
    const int g = groups.real_parent[i];
    if (representative[g] == -1) representative[g] = static_cast<int>(i);
  }
  // Representative x rows, packed.
  std::vector<double> xs(static_cast<std::size_t>(count) * nx);
  for (int g = 0; g < count; ++g) {
    detail::require(representative[g] != -1, "group ", g, " has no real sample");
    std::copy_n(reals.x.data() + static_cast<std::size_t>(representative[g]) * nx, nx, xs.begin() + g * nx);
  }

  NeighborTable table;
  table.k = std::min(cfg.k_neighbors, count);
  table.groups.resize(static_cast<std::size_t>(count) * table.k);
  const auto keep = static_cast<std::size_t>(table.k - 1);

  // Sweep outward along the widest coordinate a; |dx_a|^p never exceeds the
  // full sum, so a side can stop once it is above the current k-th best.
  // Stopping only on strictly larger keeps lower-index ties reachable.
  std::size_t axis = 0;
  double widest = -1.0;
  for (std::size_t c = 0; c < nx && count > 0; ++c) {
    double lo = xs[c], hi = xs[c];
    for (int g = 1; g < count; ++g) {
      lo = std::min(lo, xs[g * nx + c]);
      hi = std::max(hi, xs[g * nx + c]);
    }
    if (hi - lo > widest) widest = hi - lo, axis = c;
  }
  // Rows reordered by the sweep key, with the key coordinate moved to slot 0.
  std::vector<int> by_x0(count);
  std::iota(by_x0.begin(), by_x0.end(), 0);
  std::sort(by_x0.begin(), by_x0.end(), [&](int a, int b) {
    const double ka = xs[a * nx + axis], kb = xs[b * nx + axis];
    return ka < kb || (ka == kb && a < b);
  });
  std::vector<double> sorted(xs.size());
  for (int r = 0; r < count; ++r) {
    std::copy_n(xs.begin() + by_x0[r] * nx, nx, sorted.begin() + r * nx);
    std::swap(sorted[r * nx], sorted[r * nx + axis]);
  }

  auto sweep = [&](auto pw) {
    std::vector<double> bd(keep + 1);
    std::vector<int> bi(keep + 1);
    for (int r = 0; r < count; ++r) {
      const double* xg = sorted.data() + r * nx;
      std::size_t filled = 0;
      // Both sides advance in lockstep; each stops on its own bound.
      auto visit = [&](int at_r) {
        const double* xh = sorted.data() + at_r * nx;
        const double lb = pw(xg[0] - xh[0]);
        if (filled == keep && lb > bd[keep - 1]) return false;
        double d = lb;
        for (std::size_t c = 1; c < nx; ++c) d += pw(xg[c] - xh[c]);
        const int h = by_x0[at_r];
        auto before = [&](std::size_t t) { return d < bd[t] || (d == bd[t] && h < bi[t]); };
        if (filled == keep && !before(keep - 1)) return true;
        std::size_t at = filled < keep ? filled++ : keep - 1;
        for (; at > 0 && before(at - 1); --at) {
          bd[at] = bd[at - 1];
          bi[at] = bi[at - 1];
        }
        bd[at] = d;
        bi[at] = h;
        return true;
      };
      int lo = keep > 0 ? r - 1 : -1, hi = keep > 0 ? r + 1 : count;
      while (lo >= 0 || hi < count) {
        if (lo >= 0) lo = visit(lo) ? lo - 1 : -1;
        if (hi < count) hi = visit(hi) ? hi + 1 : count;
      }
      int* row = table.groups.data() + static_cast<std::size_t>(by_x0[r]) * table.k;
      row[0] = by_x0[r];
      std::copy_n(bi.begin(), keep, row + 1);
    }
  };
  const double p = cfg.p;
  if (p == 1.0)
    sweep([](double d) { return std::abs(d); });
  else if (p == 2.0)
    sweep([](double d) { return d * d; });
  else
    sweep([p](double d) { return std::pow(std::abs(d), p); });
  return table;
}

// Sparse cost structure: row i keeps only fakes generated from one of the
// k nearest unique reals of real i (itself included), so block
// self-assignment is always feasible.
inline lap::SparseCostMatrix build_sparse_cost(const SampleSet& reals, const SampleSet& fakes,
                                               const TransportConfig& cfg, const Grouping& groups) {
  cfg.validate();
  detail::check_sets(reals, fakes, cfg);
  const std::size_t n = reals.size();
  detail::require(groups.real_parent.size() == n && groups.fake_parent.size() == n,
                  "grouping does not match the sample set sizes");

  const auto table = unique_x_neighbors(reals, groups, cfg);
  const int count = static_cast<int>(table.groups.size() / std::max(table.k, 1));

  // Fakes bucketed by parent group (counting sort keeps them in index order).
  std::vector<std::size_t> fstart(count + 1, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const int g = groups.fake_parent[j];
    if (g < 0 || g >= count) throw std::invalid_argument(detail::concat("fake ", j, " has unknown parent ", g));
    ++fstart[g + 1];
  }
  for (int g = 0; g < count; ++g) fstart[g + 1] += fstart[g];
  std::vector<int> fakes_by_group(n);
  {
    auto fill = fstart;
    for (std::size_t j = 0; j < n; ++j) fakes_by_group[fill[groups.fake_parent[j]]++] = static_cast<int>(j);
  }

  // Column pattern per group, shared by all reals of that group. When every
  // group's fakes occupy one contiguous index range (the batch layout),
  // ordering the k neighbour groups by range start already sorts the columns.
  bool contiguous = true;
  for (int g = 0; g < count && contiguous; ++g)
    if (fstart[g + 1] > fstart[g])
      contiguous = fakes_by_group[fstart[g + 1] - 1] - fakes_by_group[fstart[g]] ==
                   static_cast<int>(fstart[g + 1] - fstart[g]) - 1;
  std::vector<std::size_t> pstart(count + 1, 0);
  for (int g = 0; g < count; ++g) {
    std::size_t len = 0;
    for (int h : table.of(g)) len += fstart[h + 1] - fstart[h];
    pstart[g + 1] = pstart[g] + len;
  }
  std::vector<int> pattern(pstart[count]);
  if (contiguous) {
    // Walk neighbour groups in order of their fake ranges and append each
    // range to every group that lists it; no per-group sort needed.
    std::vector<int> first(count), by_first(count);
    for (int h = 0; h < count; ++h) first[h] = fstart[h + 1] > fstart[h] ? fakes_by_group[fstart[h]] : -1;
    std::iota(by_first.begin(), by_first.end(), 0);
    auto earlier = [&](int a, int b) { return first[a] < first[b]; };
    if (!std::is_sorted(by_first.begin(), by_first.end(), earlier)) std::sort(by_first.begin(), by_first.end(), earlier);
    std::vector<std::size_t> lstart(count + 1, 0);  // listeners of h
    for (int h : table.groups) ++lstart[h + 1];
    for (int h = 0; h < count; ++h) lstart[h + 1] += lstart[h];
    std::vector<int> listeners(table.groups.size());
    {
      auto at = lstart;
      for (int g = 0; g < count; ++g)
        for (int h : table.of(g)) listeners[at[h]++] = g;
    }
    std::vector<std::size_t> cursor(pstart.begin(), pstart.end() - 1);
    for (int h : by_first) {
      const auto f0 = fakes_by_group.begin() + fstart[h], f1 = fakes_by_group.begin() + fstart[h + 1];
      for (std::size_t t = lstart[h]; t < lstart[h + 1]; ++t) {
        const int g = listeners[t];
        std::copy(f0, f1, pattern.begin() + cursor[g]);
        cursor[g] += fstart[h + 1] - fstart[h];
      }
    }
  } else {
    for (int g = 0; g < count; ++g) {
      auto out = pattern.begin() + pstart[g];
      for (int h : table.of(g)) out = std::copy(fakes_by_group.begin() + fstart[h], fakes_by_group.begin() + fstart[h + 1], out);
      std::sort(pattern.begin() + pstart[g], out);
    }
  }

  std::vector<std::size_t> start(n + 1);
  start[0] = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int g = groups.real_parent[i];
    start[i + 1] = start[i] + (pstart[g + 1] - pstart[g]);
  }
  std::vector<lap::SparseEntry> entries;
  entries.reserve(start[n]);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = reals[i];
    const int g = groups.real_parent[i];
    for (std::size_t t = pstart[g]; t < pstart[g + 1]; ++t) {
      const int j = pattern[t];
      entries.push_back({j, detail::root(detail::cost_inner(a, fakes[j], cfg), cfg.p)});
    }
  }
  return lap::SparseCostMatrix(n, std::move(start), std::move(entries));
}

inline TransportPlan to_plan(const lap::Assignment& a) {
  TransportPlan plan;
  plan.total_cost = a.total_cost;
  plan.pairs.reserve(a.row_to_col.size());
  for (std::size_t i = 0; i < a.row_to_col.size(); ++i)
    plan.pairs.emplace_back(static_cast<int>(i), a.row_to_col[i]);
  return plan;
}

// Empirical optimal transport cost (1/N) min_M sum M_ab c(a, b) and its plan.
// Sparse mode needs the grouping and throws lap::InfeasibleAssignment when
// the pruned pattern admits no perfect matching.
inline OtResult ot_cost_and_plan(const SampleSet& reals, const SampleSet& fakes,
                                 const TransportConfig& cfg, Mode mode,
                                 const Grouping* groups = nullptr) {
  const lap::Assignment a = [&] {
    if (mode == Mode::dense) return lap::solve_dense(build_dense_cost(reals, fakes, cfg));
    detail::require(groups != nullptr, "sparse transport needs a real/fake grouping");
    return lap::solve_sparse(build_sparse_cost(reals, fakes, cfg, *groups));
  }();
  OtResult out;
  out.plan = to_plan(a);
  out.cost = reals.size() == 0 ? 0.0 : a.total_cost / static_cast<double>(reals.size());
  return out;
}

inline double wasserstein_p(double ot_cost, double p) {
  detail::require(ot_cost >= 0.0, "transport cost must be >= 0, got ", ot_cost);
  detail::require(p >= 1.0, "p must be >= 1, got ", p);
  return std::pow(ot_cost, 1.0 / p);
}

}  // namespace otreg
