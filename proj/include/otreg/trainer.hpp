#pragma once

// Mini-batch training of the generator against the empirical transport
// cost: repeated reals, fakes from the current generator, an assignment per
// batch, gradient through the matched pairs, Adam, early stopping on
// validation NLPD.

#include <chrono>
#include <iostream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "otreg/data.hpp"
#include "otreg/eval.hpp"
#include "otreg/generator.hpp"
#include "otreg/lap.hpp"
#include "otreg/transport.hpp"

namespace otreg {

struct TrainConfig {
  Mode mode = Mode::dense;
  std::size_t batch_size = 100;
  std::size_t sample_size = 10;
  double lambda = 0.9;
  double p = 1.0;
  int k_neighbors = 10;
  double learning_rate = 1e-3;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  std::size_t nlpd_val_samples = 200;
  std::size_t bandwidth_draws = 2000;  // draws for the bandwidth stored with the result
  std::size_t noise_dim = 1;
  std::size_t hidden = 16;
  Trim trim;
  std::vector<double> bandwidth_grid = default_bandwidth_grid();

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    auto check = [&](bool ok, std::string msg) {
      if (!ok) out.push_back(std::move(msg));
    };
    check(batch_size >= 2, detail::concat("batch_size must be >= 2, got ", batch_size));
    check(sample_size >= 1, detail::concat("sample_size must be >= 1, got ", sample_size));
    check(lambda >= 0.0 && lambda <= 1.0, detail::concat("lambda must lie in [0, 1], got ", lambda));
    check(p >= 1.0, detail::concat("p must be >= 1, got ", p));
    check(k_neighbors >= 1, detail::concat("k_neighbors must be >= 1, got ", k_neighbors));
    check(learning_rate > 0.0 && std::isfinite(learning_rate),
          detail::concat("learning_rate must be > 0, got ", learning_rate));
    check(patience >= 1, detail::concat("patience must be >= 1, got ", patience));
    check(validation_fraction > 0.0 && validation_fraction < 1.0,
          detail::concat("validation_fraction must lie in (0, 1), got ", validation_fraction));
    check(nlpd_val_samples >= 1, "nlpd_val_samples must be >= 1");
    check(bandwidth_draws >= 1, "bandwidth_draws must be >= 1");
    check(noise_dim >= 1, "noise_dim must be >= 1");
    check(hidden >= 1, "hidden must be >= 1");
    check(trim.lo >= 0.0 && trim.lo < trim.hi && trim.hi <= 1.0, "trim bounds must satisfy 0 <= lo < hi <= 1");
    check(!bandwidth_grid.empty(), "bandwidth grid is empty");
    for (double s : bandwidth_grid) check(s > 0.0, detail::concat("bandwidth grid values must be > 0, got ", s));
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid training configuration:";
    for (const auto& e : p) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }

  TransportConfig transport(std::size_t n, std::size_t m) const { return {lambda, p, k_neighbors, n, m}; }
};

// One mini-batch in the repeated-real layout: entry b * sample_size + s of
// both sets belongs to batch row b.
struct Batch {
  SampleSet reals;
  SampleSet fakes;
  Grouping groups;
  Matrix z;
  ForwardCache cache;

  std::size_t size() const { return reals.size(); }
};

inline Batch make_batch(Generator& g, const Dataset& d, std::span<const std::size_t> rows,
                        std::size_t sample_size, Rng& rng) {
  detail::require(!rows.empty(), "batch is empty");
  detail::require(sample_size >= 1, "sample_size must be >= 1");
  const auto n = static_cast<Eigen::Index>(rows.size() * sample_size);
  Batch b;
  b.reals.x.resize(n, d.x.cols());
  b.reals.y.resize(n, d.y.cols());
  b.groups.real_parent.resize(n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    detail::require(rows[r] < d.rows(), "batch row ", rows[r], " out of range");
    for (std::size_t s = 0; s < sample_size; ++s) {
      const auto at = static_cast<Eigen::Index>(r * sample_size + s);
      b.reals.x.row(at) = d.x.row(rows[r]);
      b.reals.y.row(at) = d.y.row(rows[r]);
      b.groups.real_parent[at] = static_cast<int>(r);
    }
  }
  b.groups.fake_parent = b.groups.real_parent;
  b.z = standard_normal(n, static_cast<Eigen::Index>(g.arch().k), rng);
  auto fwd = forward(g, b.reals.x, b.z, Phase::train);
  b.fakes.x = b.reals.x;
  b.fakes.y = std::move(fwd.y);
  b.cache = std::move(fwd.cache);
  return b;
}

// dL/dy_fake for L = (1/N) sum over matched pairs of c(real, fake).
inline Matrix plan_output_gradient(const SampleSet& reals, const SampleSet& fakes, const TransportPlan& plan,
                                   const TransportConfig& cfg) {
  Matrix dl_dy = Matrix::Zero(fakes.y.rows(), fakes.y.cols());
  const double inv_n = 1.0 / static_cast<double>(reals.size());
  for (const auto& [i, j] : plan.pairs) {
    const auto grad = unit_cost_grad_fake_y(reals[i], fakes[j], cfg);
    for (std::size_t c = 0; c < grad.size(); ++c) dl_dy(j, static_cast<Eigen::Index>(c)) += inv_n * grad[c];
  }
  return dl_dy;
}

// Parameter gradient of the batch loss with the plan held fixed.
inline std::vector<double> plan_gradient(const Generator& g, const Batch& b, const TransportPlan& plan,
                                         const TransportConfig& cfg) {
  return backward(g, b.cache, plan_output_gradient(b.reals, b.fakes, plan, cfg));
}

inline double plan_loss(const SampleSet& reals, const SampleSet& fakes, const TransportPlan& plan,
                        const TransportConfig& cfg) {
  double total = 0.0;
  for (const auto& [i, j] : plan.pairs) total += unit_cost(reals[i], fakes[j], cfg);
  return total / static_cast<double>(reals.size());
}

struct StepResult {
  double ot_cost = 0.0;  // before the update
  double build_s = 0.0;
  double lap_s = 0.0;
  double wall_s = 0.0;
  bool dense_fallback = false;
  TransportPlan plan;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace detail

// Solves the batch assignment and applies one Adam update.
inline StepResult step(Generator& g, AdamState& adam, const Batch& b, const TrainConfig& cfg) {
  const auto t0 = detail::Clock::now();
  const auto tcfg = cfg.transport(static_cast<std::size_t>(b.reals.x.cols()),
                                  static_cast<std::size_t>(b.reals.y.cols()));
  StepResult r;
  lap::Assignment a;
  auto solve_dense = [&] {
    auto t = detail::Clock::now();
    const auto cost = build_dense_cost(b.reals, b.fakes, tcfg);
    r.build_s += detail::seconds_since(t);
    t = detail::Clock::now();
    a = lap::solve_dense(cost);
    r.lap_s += detail::seconds_since(t);
  };
  if (cfg.mode == Mode::dense) {
    solve_dense();
  } else {
    auto t = detail::Clock::now();
    const auto cost = build_sparse_cost(b.reals, b.fakes, tcfg, b.groups);
    r.build_s += detail::seconds_since(t);
    t = detail::Clock::now();
    try {
      a = lap::solve_sparse(cost);
      r.lap_s += detail::seconds_since(t);
    } catch (const lap::InfeasibleAssignment& e) {
      r.lap_s += detail::seconds_since(t);
      std::cerr << "warning: sparse assignment infeasible (" << e.what() << "); solving this batch densely\n";
      r.dense_fallback = true;
      solve_dense();
    }
  }
  r.plan = to_plan(a);
  r.ot_cost = a.total_cost / static_cast<double>(b.size());
  if (!std::isfinite(r.ot_cost))
    throw std::runtime_error(detail::concat("non-finite transport cost ", r.ot_cost, " at Adam step ", adam.t + 1));
  adam_step(adam, g, plan_gradient(g, b, r.plan, tcfg));
  r.wall_s = detail::seconds_since(t0);
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_ot_cost = 0.0;
  double val_nlpd = 0.0;
  double wall_s = 0.0;
  double lap_s = 0.0;
  double build_s = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  // Timing columns are zeroed unless requested so that seeded runs produce
  // identical files.
  void write_csv(std::ostream& os, bool with_timing = false) const {
    os << "epoch,train_ot_cost,val_nlpd,wall_s,lap_s,build_s\n";
    for (const auto& e : epochs) {
      os << e.epoch << ',' << detail::format_double(e.train_ot_cost) << ',' << detail::format_double(e.val_nlpd);
      for (double t : {e.wall_s, e.lap_s, e.build_s}) os << ',' << detail::format_double(with_timing ? t : 0.0);
      os << '\n';
    }
  }
};

struct TrainResult {
  Generator best;
  TrainHistory history;
  double best_val_nlpd = std::numeric_limits<double>::infinity();
  double bandwidth = 0.0;     // Parzen sigma chosen on validation for `best` with bandwidth_draws draws
  std::size_t best_epoch = 0;  // 0: the initial parameters
};

struct ValidationSplit {
  std::vector<std::size_t> train, validation;
};

inline ValidationSplit split_validation(std::size_t rows, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 10);
  std::shuffle(order.begin(), order.end(), rng);
  const auto nval = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * rows)));
  detail::require(nval < rows, "validation split leaves no training rows (", rows, " rows)");
  ValidationSplit s;
  s.validation.assign(order.begin(), order.begin() + nval);
  s.train.assign(order.begin() + nval, order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

// Validation NLPD at the grid bandwidth that minimizes it. Returns
// (trimmed NLPD, sigma).
inline std::pair<double, double> validation_nlpd(const Generator& g, const Dataset& val, const TrainConfig& cfg) {
  const auto clouds = sample_clouds(g, val.x, cfg.nlpd_val_samples, cfg.seed);
  const auto choice = choose_bandwidth(clouds, val.y, cfg.bandwidth_grid, cfg.trim);
  return {choice.nlpd, choice.sigma};
}

// Trains on a standardized dataset. The best-validation snapshot is
// returned; with max_epochs = 0 that is the initial generator.
inline TrainResult train(const Dataset& d, const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  detail::require(d.rows() == static_cast<std::size_t>(d.y.rows()), "features and targets are misaligned");
  const auto split = split_validation(d.rows(), cfg.validation_fraction, cfg.seed);
  detail::require(cfg.max_epochs == 0 || split.train.size() >= cfg.batch_size, "need at least batch_size=", cfg.batch_size, " training rows, have ",
                                 split.train.size());
  const Dataset train_set = d.subset(split.train);
  const Dataset val_set = d.subset(split.validation);

  Rng init_rng = make_rng(cfg.seed, 11);
  Rng order_rng = make_rng(cfg.seed, 12);
  Rng noise_rng = make_rng(cfg.seed, 13);
  Generator g = Generator::initialized({d.n(), d.m(), cfg.noise_dim, cfg.hidden}, init_rng);
  AdamState adam(g.theta().size(), cfg.learning_rate);

  TrainResult result;
  result.best = g;
  // The per-epoch bandwidth comes from small clouds; the stored one is
  // picked again with as many draws as evaluation uses.
  auto finish = [&] {
    result.bandwidth = select_bandwidth(result.best, val_set.x, val_set.y, cfg.bandwidth_grid, cfg.bandwidth_draws,
                                        cfg.seed, cfg.trim);
    return result;
  };
  if (cfg.max_epochs == 0) {
    result.best_val_nlpd = validation_nlpd(g, val_set, cfg).first;
    return finish();
  }

  std::vector<std::size_t> order(train_set.rows());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches = order.size() / cfg.batch_size;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = detail::Clock::now();
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::span<const std::size_t> rows(order.data() + bi * cfg.batch_size, cfg.batch_size);
      const Batch b = make_batch(g, train_set, rows, cfg.sample_size, noise_rng);
      const auto s = step(g, adam, b, cfg);
      rec.train_ot_cost += s.ot_cost;
      rec.lap_s += s.lap_s;
      rec.build_s += s.build_s;
    }
    rec.train_ot_cost /= static_cast<double>(batches);
    double sigma = 0.0;
    std::tie(rec.val_nlpd, sigma) = validation_nlpd(g, val_set, cfg);
    if (!std::isfinite(rec.val_nlpd))
      throw std::runtime_error(detail::concat("non-finite validation NLPD at epoch ", epoch));
    rec.wall_s = detail::seconds_since(t0);
    result.history.epochs.push_back(rec);
    if (log)
      *log << "epoch " << epoch << "  ot " << rec.train_ot_cost << "  val_nlpd " << rec.val_nlpd << "  sigma "
           << sigma << '\n';

    if (rec.val_nlpd < result.best_val_nlpd) {
      result.best_val_nlpd = rec.val_nlpd;
      result.best_epoch = epoch;
      result.best = g;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return finish();
}

}  // namespace otreg
