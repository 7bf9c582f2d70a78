#pragma once

// Synthetic regression datasets, CSV ingestion, standardization and k-fold
// splitting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "otreg/common.hpp"

namespace otreg {

struct Standardization {
  RowVector x_mean, x_std, y_mean, y_std;
};

struct Dataset {
  Matrix x;  // rows x n
  Matrix y;  // rows x m
  std::vector<std::string> x_names, y_names;
  std::optional<Standardization> stats;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t n() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t m() const { return static_cast<std::size_t>(y.cols()); }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out{Matrix(idx.size(), x.cols()), Matrix(idx.size(), y.cols()), x_names, y_names, stats};
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.x.row(r) = x.row(idx[r]);
      out.y.row(r) = y.row(idx[r]);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::string> default_names(const char* prefix, std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) names.push_back(concat(prefix, i));
  return names;
}

inline Dataset make_dataset(Matrix x, Matrix y) {
  Dataset d;
  d.x_names = default_names("x_", static_cast<std::size_t>(x.cols()));
  d.y_names = default_names("y_", static_cast<std::size_t>(y.cols()));
  d.x = std::move(x);
  d.y = std::move(y);
  return d;
}

}  // namespace detail

// y = sin(x) + z, x ~ U[-4, 4], z ~ N(0, 1)
inline Dataset gen_sinus(std::size_t rows, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> ux(-4.0, 4.0);
  std::normal_distribution<double> nz(0.0, 1.0);
  Matrix x(rows, 1), y(rows, 1);
  for (std::size_t i = 0; i < rows; ++i) {
    x(i, 0) = ux(rng);
    y(i, 0) = std::sin(x(i, 0)) + nz(rng);
  }
  return detail::make_dataset(std::move(x), std::move(y));
}

// y = x + exp(z), x, z ~ N(0, 1)
inline Dataset gen_exp(std::size_t rows, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(rows, 1), y(rows, 1);
  for (std::size_t i = 0; i < rows; ++i) {
    x(i, 0) = normal(rng);
    y(i, 0) = x(i, 0) + std::exp(normal(rng));
  }
  return detail::make_dataset(std::move(x), std::move(y));
}

// y = x + (0.001 + 0.5 |x|) z, x ~ N(0, 1), z ~ N(1, 1)
inline Dataset gen_heteroscedastic(std::size_t rows, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nx(0.0, 1.0);
  std::normal_distribution<double> nz(1.0, 1.0);
  Matrix x(rows, 1), y(rows, 1);
  for (std::size_t i = 0; i < rows; ++i) {
    x(i, 0) = nx(rng);
    y(i, 0) = x(i, 0) + (0.001 + 0.5 * std::abs(x(i, 0))) * nz(rng);
  }
  return detail::make_dataset(std::move(x), std::move(y));
}

// x ~ U[0, 1]; two branches chosen by a fair coin below 0.6:
//   x < 0.4:        1.2 x + 0.03 z   or  x + 0.6 + 0.03 z
//   0.4 <= x < 0.6: 0.5 x + 0.01 z   or  0.6 x + 0.01 z
//   x >= 0.6:       0.5 + 0.02 z
inline Dataset gen_multimodal(std::size_t rows, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> ux(0.0, 1.0);
  std::normal_distribution<double> nz(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  Matrix x(rows, 1), y(rows, 1);
  for (std::size_t i = 0; i < rows; ++i) {
    const double xi = ux(rng);
    const bool first = coin(rng);
    const double z = nz(rng);
    double yi;
    if (xi < 0.4)
      yi = first ? 1.2 * xi + 0.03 * z : xi + 0.6 + 0.03 * z;
    else if (xi < 0.6)
      yi = first ? 0.5 * xi + 0.01 * z : 0.6 * xi + 0.01 * z;
    else
      yi = 0.5 + 0.02 * z;
    x(i, 0) = xi;
    y(i, 0) = yi;
  }
  return detail::make_dataset(std::move(x), std::move(y));
}

// Constants of the Gaussian-mixture density dataset.
struct MixtureSpec {
  static constexpr std::size_t kRows = 5000;
  static constexpr std::size_t kComponents = 200;
  static constexpr double kMeanLow = 0.0, kMeanHigh = 1.0;   // means ~ U[0, 1]^2
  static constexpr double kStdLow = 0.01, kStdHigh = 0.1;    // isotropic std ~ U[0.01, 0.1]
  static constexpr double kNoiseFraction = 0.01;             // noise std / std of the density values
};

struct MixtureComponents {
  Matrix means;  // components x 2
  Vector stds;

  double density(double x0, double x1) const {
    double total = 0.0;
    for (Eigen::Index c = 0; c < means.rows(); ++c) {
      const double s2 = stds(c) * stds(c);
      const double d2 = (x0 - means(c, 0)) * (x0 - means(c, 0)) + (x1 - means(c, 1)) * (x1 - means(c, 1));
      total += std::exp(-0.5 * d2 / s2) / (2.0 * M_PI * s2);
    }
    return total / static_cast<double>(means.rows());
  }
};

inline MixtureComponents mixture_components(std::uint64_t seed) {
  Rng rng = make_rng(seed, 1);
  std::uniform_real_distribution<double> um(MixtureSpec::kMeanLow, MixtureSpec::kMeanHigh);
  std::uniform_real_distribution<double> us(MixtureSpec::kStdLow, MixtureSpec::kStdHigh);
  MixtureComponents mc{Matrix(MixtureSpec::kComponents, 2), Vector(MixtureSpec::kComponents)};
  for (std::size_t c = 0; c < MixtureSpec::kComponents; ++c) {
    mc.means(c, 0) = um(rng);
    mc.means(c, 1) = um(rng);
    mc.stds(c) = us(rng);
  }
  return mc;
}

// 5,000 two-dimensional x drawn from an equal-weight mixture of 200 random
// isotropic Gaussians; y is the mixture density at x plus small Gaussian
// noise.
inline Dataset gen_mixture_density(std::uint64_t seed, std::size_t rows = MixtureSpec::kRows) {
  const auto mc = mixture_components(seed);
  Rng rng = make_rng(seed, 2);
  std::uniform_int_distribution<Eigen::Index> pick(0, mc.means.rows() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(rows, 2), y(rows, 1);
  for (std::size_t i = 0; i < rows; ++i) {
    const Eigen::Index c = pick(rng);
    x(i, 0) = mc.means(c, 0) + mc.stds(c) * normal(rng);
    x(i, 1) = mc.means(c, 1) + mc.stds(c) * normal(rng);
    y(i, 0) = mc.density(x(i, 0), x(i, 1));
  }
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().mean());
  const double noise = MixtureSpec::kNoiseFraction * sd;
  for (std::size_t i = 0; i < rows; ++i) y(i, 0) += noise * normal(rng);
  return detail::make_dataset(std::move(x), std::move(y));
}

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names{"sinus", "exp", "heteroscedastic", "multimodal", "mixture"};
  return names;
}

inline Dataset gen_builtin(const std::string& name, std::size_t rows, std::uint64_t seed) {
  if (name == "sinus") return gen_sinus(rows, seed);
  if (name == "exp") return gen_exp(rows, seed);
  if (name == "heteroscedastic") return gen_heteroscedastic(rows, seed);
  if (name == "multimodal") return gen_multimodal(rows, seed);
  if (name == "mixture") return gen_mixture_density(seed, rows);
  throw std::invalid_argument("unknown dataset '" + name +
                              "' (expected sinus, exp, heteroscedastic, multimodal or mixture)");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads a header + numeric rows. Target columns are the ones named in
// `targets`, or, when that is empty, every column whose name starts with
// "y_". Line numbers in diagnostics are 1-based and count the header.
inline Dataset load_csv(const std::string& path, const std::vector<std::string>& targets = {}) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw CsvError("'" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header;
  for (auto cell : detail::split_commas(line)) header.emplace_back(cell);

  std::vector<int> is_target(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name.empty()) throw CsvError(detail::concat(path, ": header column ", c + 1, " is empty"));
    is_target[c] = targets.empty() ? name.rfind("y_", 0) == 0
                                   : std::find(targets.begin(), targets.end(), name) != targets.end();
  }
  for (const auto& t : targets) {
    if (std::find(header.begin(), header.end(), t) == header.end())
      throw CsvError(detail::concat(path, ": target column '", t, "' not in header"));
  }
  Dataset d;
  std::vector<std::size_t> xcols, ycols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    (is_target[c] ? ycols : xcols).push_back(c);
    (is_target[c] ? d.y_names : d.x_names).emplace_back(header[c]);
  }
  if (ycols.empty()) throw CsvError(path + ": no target columns (expected y_* names or an explicit list)");
  if (xcols.empty()) throw CsvError(path + ": no feature columns");

  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw CsvError(detail::concat(path, ": line ", line_no, " has ", cells.size(), " fields, header has ",
                                    header.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v || !std::isfinite(*v))
        throw CsvError(detail::concat(path, ": line ", line_no, ", column '", header[c], "': '", cells[c],
                                      "' is not a finite number"));
      values.push_back(*v);
    }
    ++rows;
  }
  d.x.resize(rows, xcols.size());
  d.y.resize(rows, ycols.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = values.data() + r * header.size();
    for (std::size_t c = 0; c < xcols.size(); ++c) d.x(r, c) = row[xcols[c]];
    for (std::size_t c = 0; c < ycols.size(); ++c) d.y(r, c) = row[ycols[c]];
  }
  return d;
}

inline void write_csv(std::ostream& os, const Dataset& d) {
  bool first = true;
  for (const auto& names : {&d.x_names, &d.y_names}) {
    for (const auto& n : *names) {
      os << (first ? "" : ",") << n;
      first = false;
    }
  }
  os << '\n';
  for (Eigen::Index r = 0; r < d.x.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.x.cols(); ++c) os << (c ? "," : "") << detail::format_double(d.x(r, c));
    for (Eigen::Index c = 0; c < d.y.cols(); ++c) os << ',' << detail::format_double(d.y(r, c));
    os << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& d) {
  std::ofstream os(path);
  if (!os) throw CsvError("cannot write '" + path + "'");
  write_csv(os, d);
  if (!os) throw CsvError("write to '" + path + "' failed");
}

namespace detail {

inline void column_stats(const Matrix& m, const std::vector<std::string>& names, RowVector& mean,
                         RowVector& sd) {
  mean = m.colwise().mean();
  sd = (m.rowwise() - mean).array().square().colwise().mean().sqrt().matrix();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (!(sd(c) > 0.0))
      throw std::invalid_argument(concat("column '", names[c], "' is constant and cannot be standardized"));
  }
}

}  // namespace detail

// Applies given statistics: (v - mean) / std, column by column.
inline Dataset apply_standardization(const Dataset& d, const Standardization& s) {
  detail::require(s.x_mean.size() == d.x.cols() && s.y_mean.size() == d.y.cols(),
                  "standardization statistics do not match the dataset dimensions");
  Dataset out = d;
  out.x = ((d.x.rowwise() - s.x_mean).array().rowwise() / s.x_std.array()).matrix();
  out.y = ((d.y.rowwise() - s.y_mean).array().rowwise() / s.y_std.array()).matrix();
  out.stats = s;
  return out;
}

// Zero mean, unit population variance for every column.
inline Dataset standardize(const Dataset& d) {
  detail::require(d.rows() >= 1, "cannot standardize an empty dataset");
  Standardization s;
  detail::column_stats(d.x, d.x_names, s.x_mean, s.x_std);
  detail::column_stats(d.y, d.y_names, s.y_mean, s.y_std);
  return apply_standardization(d, s);
}

inline Matrix inverse_transform_y(const Matrix& y, const Standardization& s) {
  return ((y.array().rowwise() * s.y_std.array()).rowwise() + s.y_mean.array()).matrix();
}

inline Matrix inverse_transform_x(const Matrix& x, const Standardization& s) {
  return ((x.array().rowwise() * s.x_std.array()).rowwise() + s.x_mean.array()).matrix();
}

struct FoldSplit {
  std::vector<std::vector<std::size_t>> test;  // disjoint, covering all rows

  std::size_t folds() const { return test.size(); }

  std::vector<std::size_t> train(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < test.size(); ++f)
      if (f != fold) out.insert(out.end(), test[f].begin(), test[f].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

// Seeded shuffle, then contiguous blocks; sizes differ by at most one.
inline FoldSplit kfold(std::size_t rows, std::size_t k, std::uint64_t seed) {
  detail::require(k >= 2, "k-fold needs k >= 2, got ", k);
  detail::require(rows >= k, "k-fold needs at least k rows: ", rows, " rows for k=", k);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 3);
  std::shuffle(order.begin(), order.end(), rng);
  FoldSplit split;
  std::size_t at = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = rows / k + (f < rows % k ? 1 : 0);
    split.test.emplace_back(order.begin() + at, order.begin() + at + size);
    std::sort(split.test.back().begin(), split.test.back().end());
    at += size;
  }
  return split;
}

}  // namespace otreg
