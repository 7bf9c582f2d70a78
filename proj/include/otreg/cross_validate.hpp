#pragma once

// k-fold training and evaluation on a standardized dataset.

#include <ostream>
#include <string>

#include "otreg/data.hpp"
#include "otreg/eval.hpp"
#include "otreg/trainer.hpp"

namespace otreg {

struct EvalConfig {
  std::size_t folds = 5;
  std::size_t draws = 2000;
  Trim trim;
  std::uint64_t seed = 0;  // fold assignment and evaluation noise
};

// Fold f trains with seed cfg.seed + f on the fold complement (which carves
// its own validation split) and is scored on fold f with the bandwidth
// picked on that validation split.
inline MetricsReport cross_validate(const Dataset& d, const std::string& name, const TrainConfig& cfg,
                                    const EvalConfig& ecfg, std::ostream* log = nullptr,
                                    std::vector<Generator>* models = nullptr) {
  cfg.validate();
  ecfg.trim.validate();
  detail::require(ecfg.draws >= 1, "draws must be >= 1");
  const auto split = kfold(d.rows(), ecfg.folds, ecfg.seed);
  MetricsReport report;
  report.dataset = name;
  report.mode = cfg.mode;
  report.lambda = cfg.lambda;
  report.trim = ecfg.trim;
  report.draws = ecfg.draws;
  for (std::size_t f = 0; f < split.folds(); ++f) {
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + f;
    fold_cfg.trim = ecfg.trim;
    const auto trained = train(d.subset(split.train(f)), fold_cfg);
    const auto test = d.subset(split.test[f]);
    const auto m = evaluate(trained.best, test.x, test.y, trained.bandwidth, ecfg.draws, ecfg.trim, ecfg.seed);
    report.folds.push_back(m);
    report.bandwidths.push_back(trained.bandwidth);
    report.validation.push_back(trained.best_val_nlpd);
    if (models) models->push_back(trained.best);
    if (log)
      *log << "fold " << f + 1 << "/" << split.folds() << "  epochs " << trained.history.epochs.size()
           << "  best " << trained.best_epoch << "  sigma " << trained.bandwidth << "  nlpd " << m.nlpd
           << "  mae " << m.mae << "  mse " << m.mse << '\n';
  }
  report.aggregate();
  return report;
}

}  // namespace otreg
