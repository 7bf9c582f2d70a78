#pragma once

// Stochastic regression function y = f(x, z).
//
// x and z each pass through two hidden layers of their own; the two
// representations are concatenated and fed through a hidden layer and a
// linear output layer. Every hidden layer is affine -> ReLU -> batch norm.
//
// Trainable parameters live in one flat vector so that Adam, checkpoints and
// finite-difference checks all work on the same layout.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "otreg/common.hpp"

namespace otreg {

struct Architecture {
  std::size_t n = 1;       // features
  std::size_t m = 1;       // targets
  std::size_t k = 1;       // noise dimension
  std::size_t hidden = 16;

  bool operator==(const Architecture&) const = default;
};

enum class Phase { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

class Generator {
 public:
  // Hidden layers in forward order: x1, x2, z1, z2, trunk; each is followed
  // by batch norm. Layer index 5 is the linear output.
  static constexpr std::size_t kHidden = 5;
  static constexpr std::size_t kAffine = 6;
  static constexpr std::array<const char*, kAffine> kLayerNames{"x1", "x2", "z1", "z2", "trunk", "out"};

  struct AffineSlot {
    std::size_t in, out, weight, bias;  // weight is row-major in x out
  };
  struct NormSlot {
    std::size_t gamma, beta, mean, var;  // mean/var index into running()
  };

  Generator() : Generator(Architecture{}) {}

  explicit Generator(const Architecture& arch) : arch_(arch) {
    detail::require(arch.n >= 1 && arch.m >= 1 && arch.k >= 1 && arch.hidden >= 1,
                    "generator dimensions must all be >= 1");
    const std::size_t h = arch.hidden;
    const std::array<std::pair<std::size_t, std::size_t>, kAffine> shapes{
        {{arch.n, h}, {h, h}, {arch.k, h}, {h, h}, {2 * h, h}, {h, arch.m}}};
    std::size_t at = 0;
    for (std::size_t l = 0; l < kAffine; ++l) {
      affine_[l] = {shapes[l].first, shapes[l].second, at, at + shapes[l].first * shapes[l].second};
      at = affine_[l].bias + shapes[l].second;
    }
    std::size_t run = 0;
    for (std::size_t l = 0; l < kHidden; ++l) {
      norm_[l] = {at, at + h, run, run + h};
      at += 2 * h;
      run += 2 * h;
    }
    theta_.assign(at, 0.0);
    running_.assign(run, 0.0);
    for (std::size_t l = 0; l < kHidden; ++l) {
      for (std::size_t c = 0; c < h; ++c) {
        theta_[norm_[l].gamma + c] = 1.0;
        running_[norm_[l].var + c] = 1.0;
      }
    }
  }

  // He-normal weights (std sqrt(2 / fan_in)), zero biases, unit scale, zero
  // shift, running statistics at (0, 1).
  static Generator initialized(const Architecture& arch, Rng& rng) {
    Generator g(arch);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& a : g.affine_) {
      const double scale = std::sqrt(2.0 / static_cast<double>(a.in));
      for (std::size_t i = 0; i < a.in * a.out; ++i) g.theta_[a.weight + i] = scale * normal(rng);
    }
    return g;
  }

  static std::size_t parameter_count(const Architecture& a) {
    const std::size_t h = a.hidden;
    return (a.n * h + h) + (h * h + h) + (a.k * h + h) + (h * h + h) + (2 * h * h + h) + (h * a.m + a.m) +
           kHidden * 2 * h;
  }

  const Architecture& arch() const { return arch_; }
  const AffineSlot& affine(std::size_t l) const { return affine_[l]; }
  const NormSlot& norm(std::size_t l) const { return norm_[l]; }

  std::vector<double>& theta() { return theta_; }
  const std::vector<double>& theta() const { return theta_; }
  std::vector<double>& running() { return running_; }
  const std::vector<double>& running() const { return running_; }

  // Bumped on every parameter update; caches remember the revision they
  // were produced at.
  std::uint64_t revision() const { return revision_; }
  void touch() { ++revision_; }

  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {theta_.data() + affine_[l].weight, static_cast<Eigen::Index>(affine_[l].in),
            static_cast<Eigen::Index>(affine_[l].out)};
  }
  Eigen::Map<const RowVector> bias(std::size_t l) const {
    return {theta_.data() + affine_[l].bias, static_cast<Eigen::Index>(affine_[l].out)};
  }
  Eigen::Map<Matrix> weight(std::size_t l) {
    return {theta_.data() + affine_[l].weight, static_cast<Eigen::Index>(affine_[l].in),
            static_cast<Eigen::Index>(affine_[l].out)};
  }
  Eigen::Map<RowVector> bias(std::size_t l) {
    return {theta_.data() + affine_[l].bias, static_cast<Eigen::Index>(affine_[l].out)};
  }

  // Human-readable location of a flat parameter index.
  std::string parameter_name(std::size_t index) const {
    for (std::size_t l = 0; l < kAffine; ++l) {
      const auto& a = affine_[l];
      if (index >= a.weight && index < a.bias)
        return detail::concat(kLayerNames[l], ".weight[", (index - a.weight) / a.out, ",",
                              (index - a.weight) % a.out, "]");
      if (index >= a.bias && index < a.bias + a.out)
        return detail::concat(kLayerNames[l], ".bias[", index - a.bias, "]");
    }
    for (std::size_t l = 0; l < kHidden; ++l) {
      const auto& b = norm_[l];
      if (index >= b.gamma && index < b.beta)
        return detail::concat(kLayerNames[l], ".bn.gamma[", index - b.gamma, "]");
      if (index >= b.beta && index < b.beta + arch_.hidden)
        return detail::concat(kLayerNames[l], ".bn.beta[", index - b.beta, "]");
    }
    return detail::concat("parameter[", index, "]");
  }

 private:
  Architecture arch_;
  std::array<AffineSlot, kAffine> affine_{};
  std::array<NormSlot, kHidden> norm_{};
  std::vector<double> theta_;
  std::vector<double> running_;
  std::uint64_t revision_ = 0;
};

// Intermediates of a train-mode forward pass, consumed by backward().
struct ForwardCache {
  struct Hidden {
    Matrix input;  // layer input
    Matrix act;    // ReLU(input W + b)
    Matrix xhat;   // normalized activations
    RowVector inv_std;
  };
  std::array<Hidden, Generator::kHidden> hidden;
  Matrix trunk_out;  // input of the output layer
  std::uint64_t revision = 0;
  Eigen::Index rows = 0;
  bool valid = false;
};

struct ForwardResult {
  Matrix y;
  ForwardCache cache;
};

namespace detail {

inline Matrix hidden_layer(const Generator& g, std::size_t l, const Matrix& in, Phase phase,
                           ForwardCache::Hidden* cache, std::vector<double>* running_out) {
  const auto& slot = g.norm(l);
  const auto h = static_cast<Eigen::Index>(g.arch().hidden);
  Matrix act = ((in * g.weight(l)).rowwise() + g.bias(l)).cwiseMax(0.0);
  Eigen::Map<const RowVector> gamma(g.theta().data() + slot.gamma, h);
  Eigen::Map<const RowVector> beta(g.theta().data() + slot.beta, h);

  RowVector mean, var;
  if (phase == Phase::train) {
    mean = act.colwise().mean();
    var = (act.rowwise() - mean).array().square().colwise().mean();
    if (running_out) {
      Eigen::Map<RowVector> rm(running_out->data() + slot.mean, h);
      Eigen::Map<RowVector> rv(running_out->data() + slot.var, h);
      rm = kBatchNormMomentum * rm + (1.0 - kBatchNormMomentum) * mean;
      rv = kBatchNormMomentum * rv + (1.0 - kBatchNormMomentum) * var;
    }
  } else {
    mean = Eigen::Map<const RowVector>(g.running().data() + slot.mean, h);
    var = Eigen::Map<const RowVector>(g.running().data() + slot.var, h);
  }
  const RowVector inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
  Matrix xhat = ((act.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  Matrix out = ((xhat.array().rowwise() * gamma.array()).rowwise() + beta.array()).matrix();
  if (cache) {
    cache->input = in;
    cache->act = std::move(act);
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return out;
}

inline Matrix run(const Generator& g, const Matrix& x, const Matrix& z, Phase phase, ForwardCache* cache,
                  std::vector<double>* running_out) {
  const auto& a = g.arch();
  require(static_cast<std::size_t>(x.cols()) == a.n, "x has ", x.cols(), " columns, generator expects ", a.n);
  require(static_cast<std::size_t>(z.cols()) == a.k, "z has ", z.cols(), " columns, generator expects ", a.k);
  require(x.rows() == z.rows(), "x and z row counts differ: ", x.rows(), " vs ", z.rows());
  require(x.rows() >= 1, "forward needs at least one row");
  require(phase == Phase::eval || x.rows() >= 2, "train-mode batch normalization needs at least 2 rows");

  auto slot = [&](std::size_t l) { return cache ? &cache->hidden[l] : nullptr; };
  const Matrix hx = hidden_layer(g, 1, hidden_layer(g, 0, x, phase, slot(0), running_out), phase, slot(1),
                                 running_out);
  const Matrix hz = hidden_layer(g, 3, hidden_layer(g, 2, z, phase, slot(2), running_out), phase, slot(3),
                                 running_out);
  Matrix joined(x.rows(), hx.cols() + hz.cols());
  joined << hx, hz;
  Matrix trunk = hidden_layer(g, 4, joined, phase, slot(4), running_out);
  Matrix y = (trunk * g.weight(5)).rowwise() + g.bias(5);
  if (cache) {
    cache->trunk_out = std::move(trunk);
    cache->revision = g.revision();
    cache->rows = x.rows();
    cache->valid = phase == Phase::train;
  }
  return y;
}

}  // namespace detail

// Train mode normalizes with batch statistics, updates the running
// statistics and returns the cache needed by backward(). Eval mode uses the
// running statistics only.
inline ForwardResult forward(Generator& g, const Matrix& x, const Matrix& z, Phase phase) {
  ForwardResult r;
  r.y = detail::run(g, x, z, phase, &r.cache, phase == Phase::train ? &g.running() : nullptr);
  return r;
}

// Eval-mode output; a pure function of (params, x, z).
inline Matrix predict(const Generator& g, const Matrix& x, const Matrix& z) {
  return detail::run(g, x, z, Phase::eval, nullptr, nullptr);
}

// Gradient of sum_rows <dl_dy, y> with respect to every trainable parameter,
// including the dependence of the batch statistics on the inputs.
inline std::vector<double> backward(const Generator& g, const ForwardCache& cache, const Matrix& dl_dy) {
  detail::require(cache.valid, "backward needs the cache of a train-mode forward pass");
  detail::require(cache.revision == g.revision(),
                  "stale forward cache: parameters changed since the forward pass");
  detail::require(dl_dy.rows() == cache.rows && static_cast<std::size_t>(dl_dy.cols()) == g.arch().m, "dL/dy has shape ", dl_dy.rows(), "x", dl_dy.cols(), ", expected ",
                                 cache.rows, "x", g.arch().m);

  std::vector<double> grad(g.theta().size(), 0.0);
  const auto h = static_cast<Eigen::Index>(g.arch().hidden);
  const double rows = static_cast<double>(cache.rows);

  auto affine_grad = [&](std::size_t l, const Matrix& in, const Matrix& dpre) -> Matrix {
    const auto& a = g.affine(l);
    Eigen::Map<Matrix>(grad.data() + a.weight, static_cast<Eigen::Index>(a.in),
                       static_cast<Eigen::Index>(a.out)) = in.transpose() * dpre;
    Eigen::Map<RowVector>(grad.data() + a.bias, static_cast<Eigen::Index>(a.out)) = dpre.colwise().sum();
    return dpre * g.weight(l).transpose();
  };

  // Backpropagate through BN -> ReLU -> affine of hidden layer l.
  auto hidden_grad = [&](std::size_t l, const Matrix& dout) -> Matrix {
    const auto& c = cache.hidden[l];
    const auto& slot = g.norm(l);
    Eigen::Map<const RowVector> gamma(g.theta().data() + slot.gamma, h);
    Eigen::Map<RowVector>(grad.data() + slot.gamma, h) = dout.cwiseProduct(c.xhat).colwise().sum();
    Eigen::Map<RowVector>(grad.data() + slot.beta, h) = dout.colwise().sum();

    const Matrix dxhat = (dout.array().rowwise() * gamma.array()).matrix();
    const RowVector sum_dxhat = dxhat.colwise().sum();
    const RowVector sum_dxhat_xhat = dxhat.cwiseProduct(c.xhat).colwise().sum();
    Matrix dact = ((rows * dxhat).rowwise() - sum_dxhat).matrix() -
                  (c.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
    dact = (dact.array().rowwise() * (c.inv_std.array() / rows)).matrix();
    const Matrix dpre = (c.act.array() > 0.0).select(dact, 0.0);
    return affine_grad(l, c.input, dpre);
  };

  const Matrix dtrunk = affine_grad(5, cache.trunk_out, dl_dy);
  const Matrix djoined = hidden_grad(4, dtrunk);
  const Matrix dhx = djoined.leftCols(h);
  const Matrix dhz = djoined.rightCols(h);
  hidden_grad(0, hidden_grad(1, dhx));
  hidden_grad(2, hidden_grad(3, dhz));
  return grad;
}

struct AdamState {
  std::vector<double> first, second;
  std::uint64_t t = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t size, double lr = 1e-3) : first(size, 0.0), second(size, 0.0), learning_rate(lr) {}
};

// Bias-corrected Adam update of the trainable parameters.
inline void adam_step(AdamState& state, Generator& g, const std::vector<double>& grad) {
  auto& theta = g.theta();
  detail::require(grad.size() == theta.size() && state.first.size() == theta.size() &&
                      state.second.size() == theta.size(), "adam: gradient/state size mismatch (", grad.size(), " vs ", theta.size(), ")");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw std::runtime_error(detail::concat("adam: non-finite gradient ", grad[i], " at ",
                                              g.parameter_name(i), " (step ", state.t + 1, ")"));
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.first[i] = state.beta1 * state.first[i] + (1.0 - state.beta1) * grad[i];
    state.second[i] = state.beta2 * state.second[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.first[i] / c1;
    const double vhat = state.second[i] / c2;
    theta[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
  }
  g.touch();
}

// `count` eval-mode draws of y at a single x with z ~ N(0, I).
inline Matrix sample(const Generator& g, std::span<const double> x, std::size_t count, Rng& rng) {
  detail::require(count >= 1, "sample count must be >= 1");
  detail::require(x.size() == g.arch().n, "x has dimension ", x.size(), ", generator expects ", g.arch().n);
  const auto rows = static_cast<Eigen::Index>(count);
  Matrix xs(rows, static_cast<Eigen::Index>(x.size()));
  for (Eigen::Index r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < x.size(); ++c) xs(r, static_cast<Eigen::Index>(c)) = x[c];
  const Matrix z = standard_normal(rows, static_cast<Eigen::Index>(g.arch().k), rng);
  return predict(g, xs, z);
}

// Checkpoint: a versioned text document holding the architecture header, the
// flat trainable and running-statistics vectors, and named metadata vectors.
// Values are written with round-trip precision.
struct Checkpoint {
  Generator generator;
  std::vector<std::pair<std::string, std::vector<double>>> extras;

  const std::vector<double>* extra(const std::string& key) const {
    for (const auto& [k, v] : extras)
      if (k == key) return &v;
    return nullptr;
  }
};

inline constexpr const char* kCheckpointMagic = "otreg-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const auto& g = ck.generator;
  const auto& a = g.arch();
  os.precision(std::numeric_limits<double>::max_digits10);
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "arch " << a.n << ' ' << a.m << ' ' << a.k << ' ' << a.hidden << '\n';
  auto block = [&](const std::string& key, const std::vector<double>& v) {
    os << key << ' ' << v.size() << '\n';
    for (double d : v) os << d << '\n';
  };
  block("theta", g.theta());
  block("running", g.running());
  for (const auto& [key, v] : ck.extras) block("extra:" + key, v);
  os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (!is || magic != kCheckpointMagic)
    throw std::runtime_error("not a checkpoint file (bad header)");
  if (version != kCheckpointVersion)
    throw std::runtime_error(detail::concat("unsupported checkpoint version ", version));
  std::string key;
  Architecture a;
  is >> key >> a.n >> a.m >> a.k >> a.hidden;
  if (!is || key != "arch") throw std::runtime_error("checkpoint: missing architecture header");
  Checkpoint ck{Generator(a), {}};
  auto read_block = [&](std::vector<double>& v, std::size_t expected) {
    std::size_t size = 0;
    is >> size;
    if (!is || (expected != 0 && size != expected))
      throw std::runtime_error(detail::concat("checkpoint: block '", key, "' has size ", size,
                                              ", expected ", expected));
    v.resize(size);
    for (auto& d : v) is >> d;
    if (!is) throw std::runtime_error(detail::concat("checkpoint: truncated block '", key, "'"));
  };
  bool got_theta = false, got_running = false;
  while (is >> key && key != "end") {
    if (key == "theta") {
      read_block(ck.generator.theta(), ck.generator.theta().size());
      got_theta = true;
    } else if (key == "running") {
      read_block(ck.generator.running(), ck.generator.running().size());
      got_running = true;
    } else if (key.rfind("extra:", 0) == 0) {
      std::vector<double> v;
      read_block(v, 0);
      ck.extras.emplace_back(key.substr(6), std::move(v));
    } else {
      throw std::runtime_error(detail::concat("checkpoint: unknown block '", key, "'"));
    }
  }
  if (key != "end" || !got_theta || !got_running)
    throw std::runtime_error("checkpoint: incomplete file");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace otreg
