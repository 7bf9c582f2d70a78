#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "otreg/transport.hpp"

using namespace otreg;

namespace {

struct Owned {
  std::vector<double> x, y;
  LabeledSample view() const { return {x, y}; }
};

Owned random_point(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Owned o{std::vector<double>(n), std::vector<double>(m)};
  for (auto& v : o.x) v = g(rng);
  for (auto& v : o.y) v = g(rng);
  return o;
}

SampleSet random_set(std::size_t rows, std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  SampleSet s{Matrix(rows, n), Matrix(rows, m)};
  for (Eigen::Index i = 0; i < s.x.size(); ++i) s.x.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < s.y.size(); ++i) s.y.data()[i] = g(rng);
  return s;
}

// `uniques` distinct reals each repeated `reps` times; fakes share the x of
// their parent and carry fresh y values.
struct GroupedBatch {
  SampleSet reals, fakes;
  Grouping groups;
};

GroupedBatch grouped_batch(std::size_t uniques, std::size_t reps, std::size_t n, std::mt19937_64& rng) {
  const auto base = random_set(uniques, n, 1, rng);
  std::normal_distribution<double> g;
  GroupedBatch b;
  const auto rows = static_cast<Eigen::Index>(uniques * reps);
  b.reals = {Matrix(rows, n), Matrix(rows, 1)};
  b.fakes = {Matrix(rows, n), Matrix(rows, 1)};
  for (std::size_t u = 0; u < uniques; ++u) {
    for (std::size_t r = 0; r < reps; ++r) {
      const auto row = static_cast<Eigen::Index>(u * reps + r);
      b.reals.x.row(row) = base.x.row(u);
      b.reals.y.row(row) = base.y.row(u);
      b.fakes.x.row(row) = base.x.row(u);
      b.fakes.y(row, 0) = g(rng);
      b.groups.real_parent.push_back(static_cast<int>(u));
      b.groups.fake_parent.push_back(static_cast<int>(u));
    }
  }
  return b;
}

TransportConfig config(double lambda, double p, std::size_t n = 1, std::size_t m = 1, int k = 10) {
  TransportConfig c;
  c.lambda = lambda;
  c.p = p;
  c.n = n;
  c.m = m;
  c.k_neighbors = k;
  return c;
}

}  // namespace

TEST(UnitCost, HandComputedValues) {
  const Owned a{{0.0}, {0.0}};
  const Owned b{{1.0}, {2.0}};
  EXPECT_DOUBLE_EQ(unit_cost(a.view(), a.view(), config(0.5, 1)), 0.0);
  EXPECT_DOUBLE_EQ(unit_cost(a.view(), b.view(), config(0.5, 1)), 1.5);
  EXPECT_NEAR(unit_cost(a.view(), b.view(), config(0.5, 2)), std::sqrt(2.5), 1e-15);
}

TEST(UnitCost, DimensionMismatch) {
  const Owned a{{0.0, 1.0}, {0.0}};
  const Owned b{{1.0}, {2.0}};
  EXPECT_THROW(unit_cost(a.view(), b.view(), config(0.5, 1)), std::invalid_argument);
  EXPECT_THROW(unit_cost_grad_fake_y(a.view(), b.view(), config(0.5, 1)), std::invalid_argument);
}

TEST(UnitCost, MetricPropertiesOnRandomTriples) {
  std::mt19937_64 rng(1);
  for (double p : {1.0, 2.0}) {
    for (int t = 0; t < 200; ++t) {
      const auto cfg = config(0.7, p, 3, 2);
      const auto a = random_point(3, 2, rng), b = random_point(3, 2, rng), c = random_point(3, 2, rng);
      const double ab = unit_cost(a.view(), b.view(), cfg);
      EXPECT_GE(ab, 0.0);
      EXPECT_DOUBLE_EQ(ab, unit_cost(b.view(), a.view(), cfg));
      EXPECT_EQ(unit_cost(a.view(), a.view(), cfg), 0.0);
      EXPECT_LE(ab, unit_cost(a.view(), c.view(), cfg) + unit_cost(c.view(), b.view(), cfg) + 1e-12);
    }
  }
}

TEST(UnitCost, MonotoneInLambdaTowardsTheLargerTerm) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_point(2, 1, rng), b = random_point(2, 1, rng);
    auto lo = config(0.4, 1, 2, 1), hi = config(0.4 + 1e-3, 1, 2, 1);
    double dx = 0.0, dy = 0.0;
    for (int i = 0; i < 2; ++i) dx += std::abs(a.x[i] - b.x[i]) / 2;
    dy = std::abs(a.y[0] - b.y[0]);
    const double diff = unit_cost(a.view(), b.view(), hi) - unit_cost(a.view(), b.view(), lo);
    if (dx > dy) {
      EXPECT_GT(diff, 0.0);
    } else if (dx < dy) {
      EXPECT_LT(diff, 0.0);
    }
  }
}

TEST(UnitCostGrad, PEqualsOneSubgradient) {
  const Owned a{{0.0}, {1.0}};
  const Owned above{{0.3}, {2.0}};
  const Owned same{{0.3}, {1.0}};
  EXPECT_DOUBLE_EQ(unit_cost_grad_fake_y(a.view(), above.view(), config(0.5, 1))[0], 0.5);
  EXPECT_DOUBLE_EQ(unit_cost_grad_fake_y(above.view(), a.view(), config(0.5, 1))[0], -0.5);
  EXPECT_EQ(unit_cost_grad_fake_y(a.view(), same.view(), config(0.5, 1))[0], 0.0);
}

TEST(UnitCostGrad, MatchesCentralDifferences) {
  std::mt19937_64 rng(3);
  const double h = 1e-5;
  for (double p : {2.0, 1.5, 3.0}) {
    for (int t = 0; t < 50; ++t) {
      const auto cfg = config(0.6, p, 2, 3);
      const auto a = random_point(2, 3, rng);
      auto b = random_point(2, 3, rng);
      const auto g = unit_cost_grad_fake_y(a.view(), b.view(), cfg);
      for (std::size_t i = 0; i < 3; ++i) {
        const double keep = b.y[i];
        b.y[i] = keep + h;
        const double up = unit_cost(a.view(), b.view(), cfg);
        b.y[i] = keep - h;
        const double down = unit_cost(a.view(), b.view(), cfg);
        b.y[i] = keep;
        const double fd = (up - down) / (2 * h);
        EXPECT_LT(std::abs(g[i] - fd), 1e-6 * std::max(std::abs(fd), 1e-3)) << "p=" << p;
      }
    }
  }
}

TEST(DenseCost, EntriesMatchScalarCost) {
  std::mt19937_64 rng(4);
  const auto cfg = config(0.8, 1, 2, 1);
  const auto r = random_set(3, 2, 1, rng), f = random_set(3, 2, 1, rng);
  const auto c = build_dense_cost(r, f, cfg);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const Owned a{{r.x(i, 0), r.x(i, 1)}, {r.y(i, 0)}};
      const Owned b{{f.x(j, 0), f.x(j, 1)}, {f.y(j, 0)}};
      EXPECT_DOUBLE_EQ(c(i, j), unit_cost(a.view(), b.view(), cfg));
    }
  const auto same = build_dense_cost(r, r, cfg);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(same(i, i), 0.0);

  const auto one = build_dense_cost(random_set(1, 2, 1, rng), random_set(1, 2, 1, rng), cfg);
  EXPECT_EQ(one.size(), 1u);
}

TEST(DenseCost, RejectsMismatchedSets) {
  std::mt19937_64 rng(5);
  EXPECT_THROW(build_dense_cost(random_set(3, 1, 1, rng), random_set(4, 1, 1, rng), config(0.5, 1)),
               std::invalid_argument);
  EXPECT_THROW(build_dense_cost(random_set(3, 2, 1, rng), random_set(3, 2, 1, rng), config(0.5, 1)),
               std::invalid_argument);
  EXPECT_THROW(build_dense_cost(random_set(3, 1, 1, rng), random_set(3, 1, 1, rng), config(1.5, 1)),
               std::invalid_argument);
}

TEST(SparseCost, AllUniquesGivesFullPattern) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 10; ++t) {
    auto b = grouped_batch(6, 3, 2, rng);
    const auto cfg = config(0.9, 1, 2, 1, 6);
    const auto sparse = build_sparse_cost(b.reals, b.fakes, cfg, b.groups);
    EXPECT_EQ(sparse.nnz(), 18u * 18u);
    const double dense_cost = ot_cost_and_plan(b.reals, b.fakes, cfg, Mode::dense).cost;
    const double sparse_cost = ot_cost_and_plan(b.reals, b.fakes, cfg, Mode::sparse, &b.groups).cost;
    EXPECT_NEAR(sparse_cost, dense_cost, 1e-12);
  }
}

TEST(SparseCost, FarApartUniquesForceSelfMatching) {
  SampleSet reals{Matrix(2, 1), Matrix(2, 1)};
  reals.x << -100.0, 100.0;
  reals.y << 0.0, 0.0;
  SampleSet fakes{reals.x, Matrix(2, 1)};
  fakes.y << 50.0, -50.0;  // a y-only matching would prefer crossing
  const auto groups = Grouping::identity(2);
  const auto cfg = config(0.001, 1, 1, 1, 1);
  const auto sparse = build_sparse_cost(reals, fakes, cfg, groups);
  ASSERT_EQ(sparse.row(0).size(), 1u);
  EXPECT_EQ(sparse.row(0)[0].col, 0);
  EXPECT_EQ(sparse.row(1)[0].col, 1);
  const auto r = ot_cost_and_plan(reals, fakes, cfg, Mode::sparse, &groups);
  EXPECT_EQ(r.plan.pairs[0].second, 0);
  EXPECT_EQ(r.plan.pairs[1].second, 1);
}

TEST(SparseCost, StoredParentsAreTrueNearestNeighbours) {
  std::mt19937_64 rng(7);
  for (double p : {1.0, 2.0}) {
    for (int t = 0; t < 20; ++t) {
      auto b = grouped_batch(10, 2, 2, rng);
      const auto cfg = config(0.9, p, 2, 1, 3);
      const auto sparse = build_sparse_cost(b.reals, b.fakes, cfg, b.groups);
      for (std::size_t i = 0; i < b.reals.size(); ++i) {
        const int g = b.groups.real_parent[i];
        // Exhaustive distance sort over the unique reals.
        std::vector<std::pair<double, int>> d;
        for (int h = 0; h < 10; ++h) {
          const double dist = std::pow(std::pow(std::abs(b.reals.x(2 * g, 0) - b.reals.x(2 * h, 0)), p) +
                                           std::pow(std::abs(b.reals.x(2 * g, 1) - b.reals.x(2 * h, 1)), p),
                                       1.0 / p);
          d.emplace_back(dist, h);
        }
        std::sort(d.begin(), d.end());
        std::set<int> expected{d[0].second, d[1].second, d[2].second};
        ASSERT_TRUE(expected.count(g));
        std::set<int> stored;
        for (const auto& e : sparse.row(i)) stored.insert(b.groups.fake_parent[e.col]);
        EXPECT_EQ(stored, expected);
        EXPECT_EQ(sparse.row(i).size(), 6u);
        // Every excluded unique is at least as far as every stored one.
        double worst_kept = 0.0;
        for (const auto& [dist, h] : d)
          if (stored.count(h)) worst_kept = std::max(worst_kept, dist);
        for (const auto& [dist, h] : d)
          if (!stored.count(h)) {
            EXPECT_GE(dist, worst_kept);
          }
      }
    }
  }
}

TEST(SparseCost, NeighborTableMatchesExhaustiveSort) {
  // Coordinates on a coarse integer grid force many equal distances; the
  // table must still equal a full (distance, index) sort.
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> coord(-3, 3), uniques(1, 40), dims(1, 3), kk(1, 12);
  const double ps[] = {1.0, 1.5, 2.0};
  for (int t = 0; t < 300; ++t) {
    const std::size_t u = uniques(rng), n = dims(rng);
    const double p = ps[t % 3];
    GroupedBatch b;
    b.reals = {Matrix(u, n), Matrix::Zero(u, 1)};
    b.fakes = b.reals;
    for (Eigen::Index i = 0; i < b.reals.x.size(); ++i) b.reals.x.data()[i] = t % 2 ? coord(rng) : coord(rng) * 0.37;
    b.groups = Grouping::identity(u);
    const auto cfg = config(0.5, p, n, 1, kk(rng));
    const auto table = unique_x_neighbors(b.reals, b.groups, cfg);
    const int k = std::min<int>(cfg.k_neighbors, static_cast<int>(u));
    ASSERT_EQ(table.k, k);
    for (int g = 0; g < static_cast<int>(u); ++g) {
      std::vector<std::pair<double, int>> d;
      for (int h = 0; h < static_cast<int>(u); ++h) {
        if (h == g) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += std::pow(std::abs(b.reals.x(g, c) - b.reals.x(h, c)), p);
        d.emplace_back(s, h);
      }
      std::sort(d.begin(), d.end());
      const auto row = table.of(g);
      ASSERT_EQ(row[0], g);
      for (int i = 1; i < k; ++i) EXPECT_EQ(row[i], d[i - 1].second) << "trial " << t << " group " << g;
    }
  }
}

TEST(SparseCost, EntriesEqualUnitCost) {
  std::mt19937_64 rng(8);
  auto b = grouped_batch(5, 2, 1, rng);
  const auto cfg = config(0.9, 1, 1, 1, 2);
  const auto sparse = build_sparse_cost(b.reals, b.fakes, cfg, b.groups);
  const auto dense = build_dense_cost(b.reals, b.fakes, cfg);
  for (std::size_t i = 0; i < sparse.size(); ++i)
    for (const auto& e : sparse.row(i)) EXPECT_DOUBLE_EQ(e.cost, dense(i, e.col));
}

TEST(SparseCost, CostIsNonIncreasingInK) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    auto b = grouped_batch(12, 3, 1, rng);
    double previous = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 12; ++k) {
      const auto cfg = config(0.9, 1, 1, 1, k);
      const double c = ot_cost_and_plan(b.reals, b.fakes, cfg, Mode::sparse, &b.groups).cost;
      EXPECT_LE(c, previous + 1e-12) << "k=" << k;
      previous = c;
    }
    const double dense = ot_cost_and_plan(b.reals, b.fakes, config(0.9, 1), Mode::dense).cost;
    EXPECT_NEAR(previous, dense, 1e-12);
  }
}

TEST(OtCost, IdenticalSetsCostNothing) {
  std::mt19937_64 rng(10);
  const auto s = random_set(7, 2, 1, rng);
  const auto r = ot_cost_and_plan(s, s, config(0.5, 1, 2, 1), Mode::dense);
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_EQ(r.plan.pairs.size(), 7u);
}

TEST(OtCost, DenseMatchesBruteForceOverN) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const auto cfg = config(0.7, 1, 1, 1);
    const auto r = random_set(4, 1, 1, rng), f = random_set(4, 1, 1, rng);
    const auto res = ot_cost_and_plan(r, f, cfg, Mode::dense);
    EXPECT_NEAR(res.cost, lap::brute_force(build_dense_cost(r, f, cfg)).total_cost / 4, 1e-12);
    const auto groups = Grouping::identity(4);
    const auto full = ot_cost_and_plan(r, f, config(0.7, 1, 1, 1, 4), Mode::sparse, &groups);
    EXPECT_NEAR(full.cost, res.cost, 1e-12);
  }
}

TEST(OtCost, InvariantUnderCommonPermutation) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 10; ++t) {
    auto b = grouped_batch(8, 2, 1, rng);
    const auto cfg = config(0.8, 1, 1, 1, 3);
    const std::size_t n = b.reals.size();
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    GroupedBatch p = b;
    for (std::size_t i = 0; i < n; ++i) {
      p.reals.x.row(i) = b.reals.x.row(perm[i]);
      p.reals.y.row(i) = b.reals.y.row(perm[i]);
      p.fakes.x.row(i) = b.fakes.x.row(perm[i]);
      p.fakes.y.row(i) = b.fakes.y.row(perm[i]);
      p.groups.real_parent[i] = b.groups.real_parent[perm[i]];
      p.groups.fake_parent[i] = b.groups.fake_parent[perm[i]];
    }
    for (Mode mode : {Mode::dense, Mode::sparse}) {
      const double a = ot_cost_and_plan(b.reals, b.fakes, cfg, mode, &b.groups).cost;
      const double c = ot_cost_and_plan(p.reals, p.fakes, cfg, mode, &p.groups).cost;
      EXPECT_NEAR(a, c, 1e-12);
    }
  }
}

TEST(OtCost, SparseNeverBelowDense) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    auto b = grouped_batch(10, 4, 2, rng);
    const auto cfg = config(0.5, 1, 2, 1, 2);
    EXPECT_GE(ot_cost_and_plan(b.reals, b.fakes, cfg, Mode::sparse, &b.groups).cost,
              ot_cost_and_plan(b.reals, b.fakes, cfg, Mode::dense).cost - 1e-12);
  }
}

TEST(Wasserstein, RootOfCost) {
  EXPECT_EQ(wasserstein_p(0.0, 3.0), 0.0);
  EXPECT_DOUBLE_EQ(wasserstein_p(4.0, 2.0), 2.0);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int t = 0; t < 10; ++t) {
    const double c = u(rng);
    EXPECT_DOUBLE_EQ(wasserstein_p(c, 1.0), c);
  }
  EXPECT_THROW(wasserstein_p(-1.0, 2.0), std::invalid_argument);
}
