#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "otreg/lap.hpp"

using namespace otreg::lap;

namespace {

CostMatrix random_matrix(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CostMatrix c(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) c(i, j) = u(rng);
  return c;
}

bool is_permutation(const std::vector<int>& p) {
  std::vector<int> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != static_cast<int>(i)) return false;
  return true;
}

double recompute(const CostMatrix& c, const Assignment& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) total += c(i, a.row_to_col[i]);
  return total;
}

}  // namespace

TEST(LapDense, DiagonalTwoByTwo) {
  const auto a = solve_dense(CostMatrix::from_rows({{1, 2}, {2, 1}}));
  EXPECT_EQ(a.row_to_col, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(a.total_cost, 2.0);
}

TEST(LapDense, AllZero) {
  const auto a = solve_dense(CostMatrix::from_rows({{0, 0}, {0, 0}}));
  EXPECT_TRUE(is_permutation(a.row_to_col));
  EXPECT_DOUBLE_EQ(a.total_cost, 0.0);
}

TEST(LapDense, RejectsBadInput) {
  EXPECT_THROW(CostMatrix::from_rows({{1, 2}, {3}}), std::invalid_argument);
  EXPECT_THROW(CostMatrix::from_rows({{1, std::nan("")}, {3, 4}}), std::invalid_argument);
  EXPECT_THROW(CostMatrix::from_rows({{1, -1}, {3, 4}}), std::invalid_argument);
  EXPECT_THROW(CostMatrix(2, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(LapDense, EmptyMatrix) {
  const auto a = solve_dense(CostMatrix(0));
  EXPECT_TRUE(a.row_to_col.empty());
  EXPECT_EQ(a.total_cost, 0.0);
}

TEST(LapDense, MatchesBruteForceOnRandomEightByEight) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_matrix(8, rng);
    const auto fast = solve_dense(c);
    const auto exact = brute_force(c);
    ASSERT_TRUE(is_permutation(fast.row_to_col));
    EXPECT_NEAR(fast.total_cost, exact.total_cost, 1e-9 * exact.total_cost) << "trial " << trial;
    EXPECT_NEAR(recompute(c, fast), fast.total_cost, 1e-9 * fast.total_cost);
  }
}

TEST(LapDense, MatchesBruteForceWithHeavyTies) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> small(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 7;
    CostMatrix c(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) c(i, j) = small(rng);
    EXPECT_DOUBLE_EQ(solve_dense(c).total_cost, brute_force(c).total_cost) << "trial " << trial;
  }
}

TEST(LapDense, ConstantShiftAddsNTimesShift) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + trial % 20;
    auto c = random_matrix(n, rng);
    const auto base = solve_dense(c);
    const double shift = 0.75;
    CostMatrix shifted(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) shifted(i, j) = c(i, j) + shift;
    const auto moved = solve_dense(shifted);
    EXPECT_NEAR(moved.total_cost, base.total_cost + n * shift, 1e-9 * moved.total_cost);
    // The old plan stays optimal for the shifted matrix.
    EXPECT_NEAR(recompute(shifted, base), moved.total_cost, 1e-9 * moved.total_cost);
  }
}

TEST(LapDense, RowPermutationPermutesSolution) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4 + trial;
    const auto c = random_matrix(n, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CostMatrix permuted(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) permuted(i, j) = c(perm[i], j);
    const auto a = solve_dense(c);
    const auto b = solve_dense(permuted);
    EXPECT_NEAR(a.total_cost, b.total_cost, 1e-9 * a.total_cost);
    // Continuous random costs have a unique optimum.
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(b.row_to_col[i], a.row_to_col[perm[i]]);
  }
}

TEST(LapBruteForce, SmallCases) {
  EXPECT_DOUBLE_EQ(brute_force(CostMatrix::from_rows({{1, 2}, {2, 1}})).total_cost, 2.0);
  const auto one = brute_force(CostMatrix::from_rows({{3}}));
  EXPECT_EQ(one.row_to_col, std::vector<int>{0});
  EXPECT_DOUBLE_EQ(one.total_cost, 3.0);
  const auto three = brute_force(CostMatrix::from_rows({{4, 1, 3}, {2, 0, 5}, {3, 2, 2}}));
  EXPECT_EQ(three.row_to_col, (std::vector<int>{1, 0, 2}));
  EXPECT_DOUBLE_EQ(three.total_cost, 5.0);
}

TEST(LapBruteForce, LexicographicTieBreakAndLimit) {
  const auto a = brute_force(CostMatrix::from_rows({{0, 0}, {0, 0}}));
  EXPECT_EQ(a.row_to_col, (std::vector<int>{0, 1}));
  EXPECT_THROW(brute_force(CostMatrix(11)), std::invalid_argument);
}

TEST(LapSparse, DiagonalOnly) {
  const SparseCostMatrix c({{{0, 5.0}}, {{1, 7.0}}});
  const auto a = solve_sparse(c);
  EXPECT_EQ(a.row_to_col, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(a.total_cost, 12.0);
}

TEST(LapSparse, UnreachableColumnIsInfeasible) {
  const SparseCostMatrix c({{{0, 1.0}}, {{0, 2.0}}});
  EXPECT_THROW(solve_sparse(c), InfeasibleAssignment);
}

TEST(LapSparse, HallViolationIsInfeasible) {
  // Rows 0 and 1 both only reach column 0; column 1 is reachable from row 2
  // only, so every column has an entry but no perfect matching exists.
  const SparseCostMatrix c({{{0, 1.0}}, {{0, 1.0}}, {{0, 1.0}, {1, 1.0}, {2, 1.0}}});
  EXPECT_THROW(solve_sparse(c), InfeasibleAssignment);
}

TEST(LapSparse, RejectsMalformedRows) {
  EXPECT_THROW(SparseCostMatrix({{{0, 1.0}}, {}}), std::invalid_argument);
  EXPECT_THROW(SparseCostMatrix({{{1, 1.0}, {0, 1.0}}, {{0, 1.0}}}), std::invalid_argument);
  EXPECT_THROW(SparseCostMatrix({{{0, 1.0}, {0, 2.0}}, {{1, 1.0}}}), std::invalid_argument);
  EXPECT_THROW(SparseCostMatrix({{{0, -1.0}}, {{1, 1.0}}}), std::invalid_argument);
  EXPECT_THROW(SparseCostMatrix({{{2, 1.0}}, {{1, 1.0}}}), std::invalid_argument);
}

TEST(LapSparse, FullPatternMatchesDense) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_matrix(16, rng);
    const auto dense = solve_dense(c);
    const auto sparse = solve_sparse(SparseCostMatrix::from_dense(c));
    EXPECT_TRUE(is_permutation(sparse.row_to_col));
    EXPECT_NEAR(sparse.total_cost, dense.total_cost, 1e-9 * dense.total_cost);
  }
}

TEST(LapSparse, PrunedPatternNeverBeatsDense) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution keep(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6 + trial % 5;
    const auto c = random_matrix(n, rng);
    std::vector<std::vector<SparseEntry>> rows(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i == j || keep(rng)) rows[i].push_back({static_cast<int>(j), c(i, j)});
    const SparseCostMatrix sparse(rows);
    const auto s = solve_sparse(sparse);
    ASSERT_TRUE(is_permutation(s.row_to_col));
    for (std::size_t i = 0; i < n; ++i) EXPECT_FALSE(std::isnan(sparse.find(i, s.row_to_col[i])));
    EXPECT_GE(s.total_cost, solve_dense(c).total_cost - 1e-12);

    // Brute force restricted to the stored pattern: missing entries get a
    // prohibitive cost.
    CostMatrix restricted(n, 1e6);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& e : sparse.row(i)) restricted(i, e.col) = e.cost;
    EXPECT_NEAR(s.total_cost, brute_force(restricted).total_cost, 1e-9);
  }
}
