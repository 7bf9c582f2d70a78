#pragma once

// Parzen-window NLPD from generated samples, trimmed per-row metrics and
// fold aggregation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "otreg/common.hpp"
#include "otreg/generator.hpp"

namespace otreg {

struct ParzenEstimator {
  Matrix samples;  // S x m
  double sigma = 1.0;
};

namespace detail {

inline double log_sum_exp(std::span<const double> a) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : a) top = std::max(top, v);
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double v : a) s += std::exp(v - top);
  return top + std::log(s);
}

inline std::vector<double> squared_distances(const Matrix& samples, std::span<const double> y) {
  require(static_cast<Eigen::Index>(y.size()) == samples.cols(), "query has dimension ", y.size(), ", samples have ", samples.cols());
  std::vector<double> d2(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index s = 0; s < samples.rows(); ++s) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
      const double d = y[c] - samples(s, c);
      acc += d * d;
    }
    d2[s] = acc;
  }
  return d2;
}

// log (1/S) sum_s N(y; sample_s, sigma^2 I) from precomputed squared
// distances.
inline double parzen_from_d2(const std::vector<double>& d2, std::size_t m, double sigma,
                             std::vector<double>& scratch) {
  scratch.resize(d2.size());
  const double inv = 0.5 / (sigma * sigma);
  for (std::size_t s = 0; s < d2.size(); ++s) scratch[s] = -d2[s] * inv;
  return log_sum_exp(scratch) - std::log(static_cast<double>(d2.size())) -
         0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi * sigma * sigma);
}

}  // namespace detail

inline double parzen_log_density(const ParzenEstimator& est, std::span<const double> y) {
  detail::require(est.sigma > 0.0 && std::isfinite(est.sigma), "Parzen bandwidth must be > 0, got ", est.sigma);
  detail::require(est.samples.rows() >= 1, "Parzen estimator needs at least one sample");
  std::vector<double> scratch;
  return detail::parzen_from_d2(detail::squared_distances(est.samples, y), y.size(), est.sigma, scratch);
}

struct Trim {
  double lo = 0.25;
  double hi = 0.75;

  void validate() const {
    detail::require(lo >= 0.0 && lo < hi && hi <= 1.0, "trim bounds must satisfy 0 <= lo < hi <= 1, got (", lo, ", ", hi, ")");
  }
};

// Keeps zero-based sort ranks r with ceil(lo T) <= r < floor(hi T). If that
// range is empty (tiny T) the median ranks are used instead.
inline double trimmed_mean(std::vector<double> values, Trim trim = {}) {
  trim.validate();
  detail::require(!values.empty(), "trimmed mean of an empty set");
  std::sort(values.begin(), values.end());
  const auto t = static_cast<double>(values.size());
  auto first = static_cast<std::size_t>(std::ceil(trim.lo * t));
  auto last = static_cast<std::size_t>(std::floor(trim.hi * t));
  if (first >= last) {
    first = (values.size() - 1) / 2;
    last = values.size() / 2 + 1;
  }
  double s = 0.0;
  for (std::size_t r = first; r < last; ++r) s += values[r];
  return s / static_cast<double>(last - first);
}

inline std::vector<double> default_bandwidth_grid() {
  std::vector<double> grid(13);
  for (int i = 0; i < 13; ++i) grid[i] = std::pow(10.0, -2.0 + 2.0 * i / 12.0);
  return grid;
}

// Eval-mode draws per test row, each row from its own seeded stream so a
// row's cloud does not depend on which other rows are evaluated.
inline constexpr std::uint64_t kEvalStreamBase = std::uint64_t{1} << 32;

inline std::vector<Matrix> sample_clouds(const Generator& g, const Matrix& x, std::size_t draws,
                                         std::uint64_t seed) {
  detail::require(x.rows() >= 1, "evaluation set is empty");
  detail::require(draws >= 1, "draw count must be >= 1");
  std::vector<Matrix> clouds;
  clouds.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Rng rng = make_rng(seed, kEvalStreamBase + static_cast<std::uint64_t>(r));
    clouds.push_back(sample(g, detail::row_span(x, r), draws, rng));
  }
  return clouds;
}

// Per-row negative log predictive density for every bandwidth in `sigmas`;
// result[k][r] belongs to sigmas[k].
inline std::vector<std::vector<double>> row_nlpd(const std::vector<Matrix>& clouds, const Matrix& y,
                                                 const std::vector<double>& sigmas) {
  detail::require(static_cast<Eigen::Index>(clouds.size()) == y.rows(), "one sample cloud per row expected");
  for (double s : sigmas) detail::require(s > 0.0, "Parzen bandwidth must be > 0, got ", s);
  std::vector<std::vector<double>> out(sigmas.size(), std::vector<double>(clouds.size()));
  std::vector<double> scratch;
  for (std::size_t r = 0; r < clouds.size(); ++r) {
    const auto d2 = detail::squared_distances(clouds[r], detail::row_span(y, static_cast<Eigen::Index>(r)));
    for (std::size_t k = 0; k < sigmas.size(); ++k)
      out[k][r] = -detail::parzen_from_d2(d2, static_cast<std::size_t>(y.cols()), sigmas[k], scratch);
  }
  return out;
}

struct BandwidthChoice {
  double sigma = 0.0;
  double nlpd = 0.0;         // trimmed NLPD at sigma
  std::vector<double> rows;  // per-row NLPD at sigma
};

// Grid sigma with the lowest trimmed NLPD, the same statistic that gets
// reported; the plain mean is dominated by a few tail rows and drifts wide.
inline BandwidthChoice choose_bandwidth(const std::vector<Matrix>& clouds, const Matrix& y,
                                        const std::vector<double>& grid, const Trim& trim = {}) {
  detail::require(!grid.empty(), "bandwidth grid is empty");
  auto per = row_nlpd(clouds, y, grid);
  BandwidthChoice best;
  best.nlpd = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double score = trimmed_mean(per[k], trim);
    const bool better = score < best.nlpd || (score == best.nlpd && grid[k] < best.sigma);
    if (better || best.rows.empty()) {
      best.sigma = grid[k];
      best.nlpd = score;
      best.rows = std::move(per[k]);
    }
  }
  return best;
}

inline double select_bandwidth(const Generator& g, const Matrix& val_x, const Matrix& val_y,
                               const std::vector<double>& grid, std::size_t draws, std::uint64_t seed,
                               const Trim& trim = {}) {
  detail::require(!grid.empty(), "bandwidth grid is empty");
  detail::require(val_x.rows() >= 1 && val_x.rows() == val_y.rows(), "validation set is empty or misaligned");
  return choose_bandwidth(sample_clouds(g, val_x, draws, seed), val_y, grid, trim).sigma;
}

struct FoldMetrics {
  double nlpd = 0.0;
  double mae = 0.0;
  double mse = 0.0;
};

namespace detail {

inline double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (v.size() % 2) return upper;
  return 0.5 * (upper + *std::max_element(v.begin(), v.begin() + mid));
}

// Per-row |y - median| and (y - mean)^2, averaged over target dimensions.
inline void point_errors(const std::vector<Matrix>& clouds, const Matrix& y, std::vector<double>& abs_err,
                         std::vector<double>& sq_err) {
  abs_err.assign(clouds.size(), 0.0);
  sq_err.assign(clouds.size(), 0.0);
  std::vector<double> col;
  const auto m = static_cast<double>(y.cols());
  for (std::size_t r = 0; r < clouds.size(); ++r) {
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      const auto& cloud = clouds[r];
      col.assign(cloud.rows(), 0.0);
      for (Eigen::Index s = 0; s < cloud.rows(); ++s) col[s] = cloud(s, c);
      const double mean = cloud.col(c).mean();
      const double med = median_of(col);
      const double target = y(static_cast<Eigen::Index>(r), c);
      abs_err[r] += std::abs(target - med) / m;
      sq_err[r] += (target - mean) * (target - mean) / m;
    }
  }
}

}  // namespace detail

inline double nlpd(const Generator& g, const Matrix& x, const Matrix& y, double sigma, std::size_t draws = 2000,
                   Trim trim = {}, std::uint64_t seed = 0) {
  detail::require(x.rows() == y.rows(), "test features and targets are misaligned");
  const auto clouds = sample_clouds(g, x, draws, seed);
  return trimmed_mean(row_nlpd(clouds, y, {sigma})[0], trim);
}

inline std::pair<double, double> point_metrics(const Generator& g, const Matrix& x, const Matrix& y,
                                               std::size_t draws = 2000, Trim trim = {}, std::uint64_t seed = 0) {
  detail::require(x.rows() == y.rows(), "test features and targets are misaligned");
  std::vector<double> abs_err, sq_err;
  detail::point_errors(sample_clouds(g, x, draws, seed), y, abs_err, sq_err);
  return {trimmed_mean(std::move(abs_err), trim), trimmed_mean(std::move(sq_err), trim)};
}

// All three trimmed metrics from one shared set of sample clouds.
inline FoldMetrics evaluate(const Generator& g, const Matrix& x, const Matrix& y, double sigma,
                            std::size_t draws = 2000, Trim trim = {}, std::uint64_t seed = 0) {
  detail::require(x.rows() == y.rows(), "test features and targets are misaligned");
  const auto clouds = sample_clouds(g, x, draws, seed);
  std::vector<double> abs_err, sq_err;
  detail::point_errors(clouds, y, abs_err, sq_err);
  return {trimmed_mean(row_nlpd(clouds, y, {sigma})[0], trim), trimmed_mean(std::move(abs_err), trim),
          trimmed_mean(std::move(sq_err), trim)};
}

struct MetricsReport {
  std::string dataset;
  Mode mode = Mode::dense;
  double lambda = 0.9;
  std::vector<FoldMetrics> folds;
  std::vector<double> bandwidths;  // per fold
  std::vector<double> validation;  // per-fold validation NLPD at the chosen bandwidth, may be empty
  double validation_nlpd = std::numeric_limits<double>::quiet_NaN();
  FoldMetrics mean, std;
  Trim trim;
  std::size_t draws = 2000;

  // Fills mean and sample standard deviation (0 for a single fold).
  void aggregate() {
    detail::require(!folds.empty(), "metrics report has no folds");
    const auto k = static_cast<double>(folds.size());
    auto stat = [&](double FoldMetrics::*field, double& mu, double& sd) {
      mu = 0.0;
      for (const auto& f : folds) mu += f.*field;
      mu /= k;
      double ss = 0.0;
      for (const auto& f : folds) ss += (f.*field - mu) * (f.*field - mu);
      sd = folds.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
    };
    stat(&FoldMetrics::nlpd, mean.nlpd, std.nlpd);
    stat(&FoldMetrics::mae, mean.mae, std.mae);
    stat(&FoldMetrics::mse, mean.mse, std.mse);
    if (!validation.empty())
      validation_nlpd = std::accumulate(validation.begin(), validation.end(), 0.0) / validation.size();
  }
};

inline nlohmann::json to_json(const FoldMetrics& f) {
  return {{"nlpd", f.nlpd}, {"mae", f.mae}, {"mse", f.mse}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) folds.push_back(to_json(f));
  nlohmann::json j = {{"dataset", r.dataset},
          {"mode", to_string(r.mode)},
          {"lambda", r.lambda},
          {"folds", folds},
          {"bandwidths", r.bandwidths},
          {"mean", to_json(r.mean)},
          {"std", to_json(r.std)},
          {"trim", {r.trim.lo, r.trim.hi}},
          {"draws", r.draws}};
  if (!r.validation.empty()) {
    j["validation"] = r.validation;
    j["validation_nlpd"] = r.validation_nlpd;
  }
  return j;
}

}  // namespace otreg
