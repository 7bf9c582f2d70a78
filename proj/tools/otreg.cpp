// otreg: generate datasets, train, evaluate, cross-validate and benchmark
// the assignment solvers from the command line.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "otreg/cross_validate.hpp"
#include "otreg/data.hpp"
#include "otreg/eval.hpp"
#include "otreg/generator.hpp"
#include "otreg/lap.hpp"
#include "otreg/trainer.hpp"
#include "otreg/transport.hpp"

namespace fs = std::filesystem;
using namespace otreg;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Raised after every problem with the invocation has been collected.
struct ValidationErrors : std::runtime_error {
  explicit ValidationErrors(std::vector<std::string> list)
      : std::runtime_error("invalid arguments"), errors(std::move(list)) {}
  std::vector<std::string> errors;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = detail::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& flag, std::vector<std::string>& errors) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    const auto v = detail::parse_double(item);
    if (!v || (std::is_integral_v<T> && (*v < 0 || *v != std::floor(*v)))) {
      errors.push_back(detail::concat(flag, ": '", item, "' is not a valid value"));
      continue;
    }
    out.push_back(static_cast<T>(*v));
  }
  if (out.empty() && !s.empty()) errors.push_back(flag + ": empty list");
  return out;
}

// Options shared by the commands that train.
struct TrainFlags {
  std::string mode = "dla";
  TrainConfig cfg;
  bool record_timing = false;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "dla (dense) or sla (k-NN sparse)")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size, "distinct reals per mini-batch")->capture_default_str();
    app->add_option("--sample-size", cfg.sample_size, "fakes generated per real")->capture_default_str();
    app->add_option("--lambda", cfg.lambda, "weight of x in the ground cost")->capture_default_str();
    app->add_option("--p", cfg.p, "L_p exponent of the ground cost")->capture_default_str();
    app->add_option("--k-neighbors", cfg.k_neighbors, "unique neighbours kept per row (sla)")->capture_default_str();
    app->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    app->add_option("--patience", cfg.patience, "epochs without validation improvement before stopping")
        ->capture_default_str();
    app->add_option("--max-epochs", cfg.max_epochs, "epoch cap")->capture_default_str();
    app->add_option("--seed", cfg.seed, "training seed")->capture_default_str();
    app->add_option("--val-fraction", cfg.validation_fraction, "validation share of the training rows")
        ->capture_default_str();
    app->add_option("--val-samples", cfg.nlpd_val_samples, "draws per x for the per-epoch validation NLPD")
        ->capture_default_str();
    app->add_option("--bandwidth-draws", cfg.bandwidth_draws, "draws per x when picking the stored bandwidth")
        ->capture_default_str();
    app->add_option("--noise-dim", cfg.noise_dim, "dimension of z")->capture_default_str();
    app->add_option("--hidden", cfg.hidden, "width of every hidden layer")->capture_default_str();
    app->add_flag("--record-timing", record_timing, "write measured seconds into history.csv (default zeros)");
  }

  void check(std::vector<std::string>& errors) {
    try {
      cfg.mode = parse_mode(mode);
    } catch (const std::invalid_argument& e) {
      errors.push_back(std::string("--mode: ") + e.what());
    }
    for (const auto& p : cfg.problems()) errors.push_back(p);
  }
};

// Builtin generator name or CSV path.
struct DataFlags {
  std::string dataset;
  std::size_t rows = 5000;
  std::uint64_t data_seed = 0;
  std::string targets;

  void add(CLI::App* app, bool required = true) {
    auto* opt = app->add_option("--dataset", dataset, "builtin name (sinus, exp, heteroscedastic, multimodal, "
                                                      "mixture) or CSV path");
    if (required) opt->required();
    app->add_option("--rows", rows, "rows for a builtin dataset")->capture_default_str();
    app->add_option("--data-seed", data_seed, "seed of a builtin dataset")->capture_default_str();
    app->add_option("--targets", targets, "comma-separated target columns of a CSV (default: y_* columns)");
  }

  bool builtin() const {
    const auto& names = builtin_names();
    return std::find(names.begin(), names.end(), dataset) != names.end();
  }

  void check(std::vector<std::string>& errors) const {
    if (builtin()) {
      if (rows < 1) errors.push_back("--rows must be >= 1");
    } else if (!fs::exists(dataset)) {
      errors.push_back("--dataset: '" + dataset + "' is neither a builtin dataset nor an existing file");
    }
  }

  std::string name() const { return builtin() ? dataset : fs::path(dataset).stem().string(); }

  Dataset load() const { return builtin() ? gen_builtin(dataset, rows, data_seed) : load_csv(dataset, split_list(targets)); }
};

struct OutputFlags {
  std::string out_dir = "runs";
  std::string tag;

  void add(CLI::App* app) {
    app->add_option("--out-dir", out_dir, "parent directory of run_<tag>")->capture_default_str();
    app->add_option("--tag", tag, "run directory suffix (default: a timestamp)");
  }

  fs::path run_dir() const {
    std::string t = tag;
    if (t.empty()) {
      const std::time_t now = std::time(nullptr);
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&now));
      t = buf;
    }
    const fs::path dir = fs::path(out_dir) / ("run_" + t);
    fs::create_directories(dir);
    return dir;
  }
};

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void throw_if(const std::vector<std::string>& errors) {
  if (!errors.empty()) throw ValidationErrors(errors);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::vector<double> row_vector(const RowVector& v) { return {v.data(), v.data() + v.size()}; }

RowVector from_extra(const Checkpoint& ck, const std::string& key, std::size_t expected) {
  const auto* v = ck.extra(key);
  if (!v) throw std::invalid_argument("checkpoint lacks '" + key + "'");
  if (v->size() != expected)
    throw std::invalid_argument(detail::concat("checkpoint '", key, "' has ", v->size(), " values, expected ", expected));
  return Eigen::Map<const RowVector>(v->data(), static_cast<Eigen::Index>(v->size()));
}

// ---- gen-data --------------------------------------------------------------

struct GenData {
  std::string name;
  std::size_t rows = 5000;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("name", name, "sinus, exp, heteroscedastic, multimodal or mixture")->required();
    app->add_option("--rows", rows, "row count (mixture defaults to 5000 as well)")->capture_default_str();
    app->add_option("--seed", seed, "generator seed")->capture_default_str();
    app->add_option("--out", out, "CSV path (default: <name>.csv)");
  }

  void run() {
    std::vector<std::string> errors;
    const auto& names = builtin_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
      errors.push_back("unknown dataset '" + name + "' (expected sinus, exp, heteroscedastic, multimodal or mixture)");
    if (rows < 1) errors.push_back("--rows must be >= 1");
    throw_if(errors);
    const auto d = gen_builtin(name, rows, seed);
    const std::string path = out.empty() ? name + ".csv" : out;
    save_csv(path, d);
    std::cout << "wrote " << path << ": " << d.rows() << " rows, " << d.n() << " feature(s), " << d.m()
              << " target(s)\n";
  }
};

// ---- train -----------------------------------------------------------------

struct Train {
  DataFlags data;
  TrainFlags flags;
  OutputFlags output;
  bool verbose = false;

  void add(CLI::App* app) {
    data.add(app);
    flags.add(app);
    output.add(app);
    app->add_flag("--verbose", verbose, "print one line per epoch");
  }

  void run() {
    std::vector<std::string> errors;
    data.check(errors);
    flags.check(errors);
    throw_if(errors);

    const auto raw = data.load();
    const auto d = standardize(raw);
    const auto result = train(d, flags.cfg, verbose ? &std::cout : nullptr);
    const auto dir = output.run_dir();

    Checkpoint ck{result.best, {}};
    ck.extras = {{"x_mean", row_vector(d.stats->x_mean)},
                 {"x_std", row_vector(d.stats->x_std)},
                 {"y_mean", row_vector(d.stats->y_mean)},
                 {"y_std", row_vector(d.stats->y_std)},
                 {"bandwidth", {result.bandwidth}},
                 {"val_nlpd", {result.best_val_nlpd}}};
    save_checkpoint((dir / "checkpoint").string(), ck);
    std::ostringstream hist;
    result.history.write_csv(hist, flags.record_timing);
    write_text(dir / "history.csv", hist.str());
    std::cout << "epochs " << result.history.epochs.size() << ", best epoch " << result.best_epoch
              << ", validation NLPD " << result.best_val_nlpd << ", bandwidth " << result.bandwidth << '\n'
              << "wrote " << (dir / "checkpoint").string() << " and " << (dir / "history.csv").string() << '\n';
  }
};

// ---- eval ------------------------------------------------------------------

struct Eval {
  std::string checkpoint;
  DataFlags data;
  std::size_t draws = 2000;
  std::size_t cloud_samples = 100;
  std::size_t grid_points = 0;
  double bandwidth = 0.0;
  double trim_lo = 0.25, trim_hi = 0.75;
  std::uint64_t seed = 0;
  std::string out_dir;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
    data.add(app);
    app->add_option("--draws", draws, "generated samples per x for the metrics")->capture_default_str();
    app->add_option("--cloud-samples", cloud_samples, "generated samples per x in cloud.csv")->capture_default_str();
    app->add_option("--grid-points", grid_points, "cloud over an even x grid instead of the dataset x (n = 1)");
    app->add_option("--bandwidth", bandwidth, "Parzen bandwidth (default: the one stored in the checkpoint)");
    app->add_option("--trim-lo", trim_lo, "lower trim quantile")->capture_default_str();
    app->add_option("--trim-hi", trim_hi, "upper trim quantile")->capture_default_str();
    app->add_option("--seed", seed, "evaluation noise seed")->capture_default_str();
    app->add_option("--out-dir", out_dir, "output directory (default: the checkpoint's directory)");
  }

  void run() {
    std::vector<std::string> errors;
    if (!fs::exists(checkpoint)) errors.push_back("--checkpoint: '" + checkpoint + "' does not exist");
    data.check(errors);
    if (draws < 1) errors.push_back("--draws must be >= 1");
    if (cloud_samples < 1) errors.push_back("--cloud-samples must be >= 1");
    if (bandwidth < 0.0) errors.push_back("--bandwidth must be > 0");
    const Trim trim{trim_lo, trim_hi};
    try {
      trim.validate();
    } catch (const std::invalid_argument& e) {
      errors.push_back(e.what());
    }
    throw_if(errors);

    const auto ck = load_checkpoint(checkpoint);
    const auto& arch = ck.generator.arch();
    const auto raw = data.load();
    if (raw.n() != arch.n || raw.m() != arch.m)
      throw std::invalid_argument(detail::concat("dataset has n=", raw.n(), ", m=", raw.m(), " but the checkpoint expects n=",
                                                 arch.n, ", m=", arch.m));
    Standardization stats{from_extra(ck, "x_mean", arch.n), from_extra(ck, "x_std", arch.n),
                          from_extra(ck, "y_mean", arch.m), from_extra(ck, "y_std", arch.m)};
    const double sigma = bandwidth > 0.0 ? bandwidth : from_extra(ck, "bandwidth", 1)(0);
    const auto d = apply_standardization(raw, stats);

    MetricsReport report;
    report.dataset = data.name();
    report.lambda = std::numeric_limits<double>::quiet_NaN();
    report.trim = trim;
    report.draws = draws;
    report.folds.push_back(evaluate(ck.generator, d.x, d.y, sigma, draws, trim, seed));
    report.bandwidths.push_back(sigma);
    report.aggregate();
    auto json = to_json(report);
    json.erase("mode");
    json.erase("lambda");

    const fs::path dir = out_dir.empty() ? fs::path(checkpoint).parent_path() : fs::path(out_dir);
    if (!dir.empty()) fs::create_directories(dir);
    write_text(dir / "metrics.json", json.dump(2) + "\n");
    write_text(dir / "cloud.csv", cloud_csv(ck.generator, d, stats));
    const auto& m = report.folds[0];
    std::cout << "nlpd " << m.nlpd << "  mae " << m.mae << "  mse " << m.mse << "  (bandwidth " << sigma << ")\n"
              << "wrote " << (dir / "metrics.json").string() << " and " << (dir / "cloud.csv").string() << '\n';
  }

  // Generated samples in the dataset's original units.
  std::string cloud_csv(const Generator& g, const Dataset& d, const Standardization& stats) const {
    Matrix xs = d.x;
    if (grid_points > 0) {
      if (d.n() != 1) throw std::invalid_argument("--grid-points needs a one-dimensional x");
      const double lo = d.x.minCoeff(), hi = d.x.maxCoeff();
      xs.resize(static_cast<Eigen::Index>(grid_points), 1);
      for (std::size_t i = 0; i < grid_points; ++i)
        xs(static_cast<Eigen::Index>(i), 0) = grid_points == 1 ? lo : lo + (hi - lo) * i / (grid_points - 1.0);
    }
    const auto clouds = sample_clouds(g, xs, cloud_samples, seed + 1);
    std::ostringstream os;
    for (std::size_t c = 0; c < d.n(); ++c) os << (c ? "," : "") << d.x_names[c];
    if (d.m() == 1) {
      os << ",y_generated";
    } else {
      for (std::size_t c = 0; c < d.m(); ++c) os << ",y_generated_" << c;
    }
    os << '\n';
    const Matrix x_orig = inverse_transform_x(xs, stats);
    for (Eigen::Index r = 0; r < xs.rows(); ++r) {
      const Matrix y_orig = inverse_transform_y(clouds[r], stats);
      for (Eigen::Index s = 0; s < y_orig.rows(); ++s) {
        for (Eigen::Index c = 0; c < x_orig.cols(); ++c) os << (c ? "," : "") << detail::format_double(x_orig(r, c));
        for (Eigen::Index c = 0; c < y_orig.cols(); ++c) os << ',' << detail::format_double(y_orig(s, c));
        os << '\n';
      }
    }
    return os.str();
  }
};

// ---- cv --------------------------------------------------------------------

struct Cv {
  DataFlags data;
  TrainFlags flags;
  OutputFlags output;
  std::size_t folds = 5;
  std::size_t draws = 2000;
  double trim_lo = 0.25, trim_hi = 0.75;
  std::uint64_t eval_seed = 0;
  std::string lambda_grid;
  bool verbose = false;

  void add(CLI::App* app) {
    data.add(app);
    flags.add(app);
    output.add(app);
    app->add_option("--folds", folds, "cross-validation folds")->capture_default_str();
    app->add_option("--draws", draws, "generated samples per test x")->capture_default_str();
    app->add_option("--trim-lo", trim_lo, "lower trim quantile")->capture_default_str();
    app->add_option("--trim-hi", trim_hi, "upper trim quantile")->capture_default_str();
    app->add_option("--eval-seed", eval_seed, "fold assignment and evaluation seed")->capture_default_str();
    app->add_option("--lambda-grid", lambda_grid,
                    "comma-separated lambdas; picks the one with the lowest mean validation NLPD");
    app->add_flag("--verbose", verbose, "print one line per fold");
  }

  void run() {
    std::vector<std::string> errors;
    data.check(errors);
    flags.check(errors);
    if (folds < 2) errors.push_back("--folds must be >= 2");
    if (draws < 1) errors.push_back("--draws must be >= 1");
    const Trim trim{trim_lo, trim_hi};
    try {
      trim.validate();
    } catch (const std::invalid_argument& e) {
      errors.push_back(e.what());
    }
    std::vector<double> lambdas = parse_list<double>(lambda_grid, "--lambda-grid", errors);
    for (double l : lambdas)
      if (l < 0.0 || l > 1.0) errors.push_back(detail::concat("--lambda-grid: ", l, " is outside [0, 1]"));
    throw_if(errors);
    if (lambdas.empty()) lambdas.push_back(flags.cfg.lambda);

    const auto d = standardize(data.load());
    const EvalConfig ecfg{folds, draws, trim, eval_seed};
    const auto dir = output.run_dir();
    std::optional<MetricsReport> best;
    for (double l : lambdas) {
      TrainConfig cfg = flags.cfg;
      cfg.lambda = l;
      if (verbose) std::cout << "lambda " << l << '\n';
      auto report = cross_validate(d, data.name(), cfg, ecfg, verbose ? &std::cout : nullptr);
      if (lambdas.size() > 1)
        write_text(dir / ("metrics_lambda_" + short_number(l) + ".json"), to_json(report).dump(2) + "\n");
      std::cout << "lambda " << l << ": validation NLPD " << report.validation_nlpd << ", test NLPD "
                << report.mean.nlpd << " +- " << report.std.nlpd << ", MAE " << report.mean.mae << ", MSE "
                << report.mean.mse << '\n';
      if (!best || report.validation_nlpd < best->validation_nlpd) best = std::move(report);
    }
    write_text(dir / "metrics.json", to_json(*best).dump(2) + "\n");
    std::cout << "selected lambda " << best->lambda << "\nwrote " << (dir / "metrics.json").string() << '\n';
  }
};

// ---- lap-bench -------------------------------------------------------------

double median(std::vector<double> v) {
  const auto mid = v.begin() + v.size() / 2;
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

struct LapBench {
  std::string sizes = "32,64,128,256";
  std::string sample_sizes = "1,2,4,8,16";
  std::size_t reps = 5;
  std::uint64_t seed = 0;
  int k_neighbors = 10;
  double lambda = 0.9;
  std::string dataset = "mixture";
  std::string out = "lap_bench.csv";

  void add(CLI::App* app) {
    app->add_option("--sizes", sizes, "comma-separated mini-batch sizes")->capture_default_str();
    app->add_option("--sample-sizes", sample_sizes, "comma-separated sample sizes")->capture_default_str();
    app->add_option("--reps", reps, "repetitions per configuration (>= 5)")->capture_default_str();
    app->add_option("--seed", seed, "seed")->capture_default_str();
    app->add_option("--k-neighbors", k_neighbors, "unique neighbours kept per row (sla)")->capture_default_str();
    app->add_option("--lambda", lambda, "weight of x in the ground cost")->capture_default_str();
    app->add_option("--dataset", dataset, "builtin dataset providing the reals")->capture_default_str();
    app->add_option("--out", out, "CSV path")->capture_default_str();
  }

  void run() {
    std::vector<std::string> errors;
    const auto batches = parse_list<std::size_t>(sizes, "--sizes", errors);
    const auto samples = parse_list<std::size_t>(sample_sizes, "--sample-sizes", errors);
    for (auto b : batches)
      if (b < 2) errors.push_back(detail::concat("--sizes: ", b, " is below 2"));
    for (auto s : samples)
      if (s < 1) errors.push_back("--sample-sizes values must be >= 1");
    if (reps < 5) errors.push_back("--reps must be >= 5");
    const auto& names = builtin_names();
    if (std::find(names.begin(), names.end(), dataset) == names.end())
      errors.push_back("--dataset: unknown builtin '" + dataset + "'");
    const TransportConfig probe{lambda, 1.0, k_neighbors, 1, 1};
    try {
      probe.validate();
    } catch (const std::invalid_argument& e) {
      errors.push_back(e.what());
    }
    throw_if(errors);

    std::size_t max_batch = 0;
    for (auto b : batches) max_batch = std::max(max_batch, b);
    const auto d = standardize(gen_builtin(dataset, std::max<std::size_t>(max_batch, 5000), seed));
    const auto rows = bench(d, batches, samples);
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write '" + out + "'");
    os << rows;
    std::cout << rows << "wrote " << out << '\n';
  }

  std::string bench(const Dataset& d, const std::vector<std::size_t>& batches,
                    const std::vector<std::size_t>& samples) const {
    Rng rng = make_rng(seed, 20);
    Generator g = Generator::initialized({d.n(), d.m(), 1, 16}, rng);
    const TransportConfig tcfg{lambda, 1.0, k_neighbors, d.n(), d.m()};
    std::ostringstream os;
    os << "mode,batch,sample_size,build_s,solve_s\n";
    std::vector<std::size_t> order(d.rows());
    std::iota(order.begin(), order.end(), 0);
    for (auto b : batches) {
      for (auto s : samples) {
        std::vector<double> t[2][2];  // per-rep seconds; the median is reported
        for (std::size_t r = 0; r < reps; ++r) {
          std::shuffle(order.begin(), order.end(), rng);
          const Batch batch = make_batch(g, d, std::span<const std::size_t>(order.data(), b), s, rng);
          auto t0 = detail::Clock::now();
          const auto dense = build_dense_cost(batch.reals, batch.fakes, tcfg);
          t[0][0].push_back(detail::seconds_since(t0));
          t0 = detail::Clock::now();
          const auto a = lap::solve_dense(dense);
          t[0][1].push_back(detail::seconds_since(t0));
          t0 = detail::Clock::now();
          const auto sparse = build_sparse_cost(batch.reals, batch.fakes, tcfg, batch.groups);
          t[1][0].push_back(detail::seconds_since(t0));
          t0 = detail::Clock::now();
          const auto sa = lap::solve_sparse(sparse);
          t[1][1].push_back(detail::seconds_since(t0));
          if (sa.total_cost < a.total_cost - 1e-9 * (1.0 + a.total_cost))
            throw std::runtime_error("sparse assignment cheaper than the dense optimum");
        }
        for (int mode = 0; mode < 2; ++mode)
          os << (mode ? "sla" : "dla") << ',' << b << ',' << s << ',' << detail::format_double(median(t[mode][0]))
             << ',' << detail::format_double(median(t[mode][1])) << '\n';
      }
    }
    return os.str();
  }
};

// ---- config files ----------------------------------------------------------

// Flat key=value file; keys are long option names without the dashes.
// Values are spliced in ahead of the real arguments so that flags given on
// the command line take precedence.
std::vector<std::string> config_arguments(const std::string& path, CLI::App* sub) {
  std::ifstream in(path);
  if (!in) throw ValidationErrors({"--config: cannot open '" + path + "'"});
  std::vector<std::string> args, errors;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back(detail::concat(path, ":", line_no, ": expected key=value"));
      continue;
    }
    const std::string key(detail::trim(t.substr(0, eq)));
    const std::string value(detail::trim(t.substr(eq + 1)));
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (key == "config" || opt == nullptr) {
      errors.push_back(detail::concat(path, ":", line_no, ": unknown key '", key, "' for ", sub->get_name()));
      continue;
    }
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1") {
        args.push_back("--" + key);
      } else if (value != "false" && value != "0") {
        errors.push_back(detail::concat(path, ":", line_no, ": '", key, "' takes true or false"));
      }
      continue;
    }
    args.push_back("--" + key);
    args.push_back(value);
  }
  throw_if(errors);
  return args;
}

// Returns argv with the config file contents inserted after the subcommand.
std::vector<std::string> expand_config(int argc, char** argv, CLI::App& app) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  for (auto* s : app.get_subcommands({}))
    if (s->get_name() == args[0]) sub = s;
  if (!sub) return args;
  std::vector<std::string> rest{args[0]}, from_file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      from_file = config_arguments(args[++i], sub);
    } else if (args[i].rfind("--config=", 0) == 0) {
      from_file = config_arguments(args[i].substr(9), sub);
    } else {
      rest.push_back(args[i]);
    }
  }
  rest.insert(rest.begin() + 1, from_file.begin(), from_file.end());
  return rest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regression with implicitly modelled noise, trained by empirical optimal transport.", "otreg"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", "otreg 1.0");

  GenData gen;
  Train tr;
  Eval ev;
  Cv cv;
  LapBench bench;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a builtin synthetic dataset as CSV");
  auto* train_cmd = app.add_subcommand("train", "train a generator; writes run_<tag>/{checkpoint,history.csv}");
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint; writes metrics.json and cloud.csv");
  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation; writes run_<tag>/metrics.json");
  auto* bench_cmd = app.add_subcommand("lap-bench", "time cost-matrix build and assignment, dense vs sparse");
  gen.add(gen_cmd);
  tr.add(train_cmd);
  ev.add(eval_cmd);
  cv.add(cv_cmd);
  bench.add(bench_cmd);
  for (auto* sub : {gen_cmd, train_cmd, eval_cmd, cv_cmd, bench_cmd})
    sub->add_option("--config", "key=value file of long option names; command-line flags win");

  try {
    auto args = expand_config(argc, argv, app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (gen_cmd->parsed()) gen.run();
    if (train_cmd->parsed()) tr.run();
    if (eval_cmd->parsed()) ev.run();
    if (cv_cmd->parsed()) cv.run();
    if (bench_cmd->parsed()) bench.run();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  } catch (const ValidationErrors& e) {
    for (const auto& msg : e.errors) std::cerr << "error: " << msg << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CsvError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
