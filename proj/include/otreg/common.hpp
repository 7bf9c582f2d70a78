#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace otreg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

// Training mode of the regressor: dense (RE-DLA) or k-NN sparsified (RE-SLA)
// linear assignment.
enum class Mode { dense, sparse };

inline const char* to_string(Mode mode) { return mode == Mode::dense ? "dla" : "sla"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "dla" || s == "dense") return Mode::dense;
  if (s == "sla" || s == "sparse") return Mode::sparse;
  throw std::invalid_argument("unknown mode '" + s + "' (expected dla or sla)");
}

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

// The message parts are only formatted on failure.
template <typename... Args>
void require(bool ok, Args&&... what) {
  if (!ok) throw std::invalid_argument(concat(std::forward<Args>(what)...));
}

inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace detail

// Independent stream for (seed, stream id); used for per-row evaluation draws
// and anywhere a reproducible sub-sequence is needed.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
  return out;
}

}  // namespace otreg
