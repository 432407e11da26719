#pragma once

// Walk-forward training: expanding-window folds, chronological validation
// tail, Adam with global norm clipping and early stopping, multi-seed runs,
// top-S position ensembling, and the end-to-end gradient checker.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sbench/market_data.hpp"
#include "sbench/models.hpp"
#include "sbench/portfolio.hpp"

namespace sbench {

struct FoldSchedule {
  struct Fold {
    int train_start = 0;  // serial dates, ranges are [start, end)
    int train_end = 0;
    int test_start = 0;
    int test_end = 0;
  };
  std::vector<Fold> folds;
};

// expanding window: each fold trains on everything before test_start and is
// tested on the next retrain_every years
FoldSchedule build_fold_schedule(const std::vector<int>& dates, int retrain_every_years,
                                 int initial_train_years);

// chronological tail split; validation has at least one element
std::pair<std::vector<int>, std::vector<int>> split_validation(const std::vector<int>& dates,
                                                               double val_fraction);

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 300;
  int patience = 20;
  double clip_norm = 1.0;
  int n_seeds = 10;
  int top_s = 5;
  std::string burn_in_rule = "quarter_seq_len";  // or fixed_21
  int steps_per_epoch = 64;
  int max_val_windows = 256;
  double epsilon = 1e-9;   // sharpe loss stabilizer
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double sigma_tgt = 0.10;

  int rule_burn_in(int seq_len) const;
  void validate() const;
};

// feature/multiplier view consumed by the trainer; mult(t,k) turns the signal
// at t into the day-(t+1) strategy return: sigma_tgt/(sigma_t sqrt(252)) * r_{t+1}
struct ModelDataset {
  std::vector<int> dates;
  std::vector<std::string> tickers;
  std::vector<MatrixXd> features;  // C channels of [T x K]
  MatrixXd mult;
  MatrixXd feat_present;  // 1.0 where all feature channels defined
  int row_of(int serial_date) const;  // -1 if absent
};

ModelDataset make_dataset(const FeaturePanel& features, const VolPanel& vol,
                          const ReturnPanel& returns, double sigma_tgt);

// stop once `patience` epochs pass without a validation improvement
struct EarlyStopper {
  int patience = 20;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  bool should_stop(int epoch, double val) {
    if (val < best) {
      best = val;
      best_epoch = epoch;
      return false;
    }
    return epoch - best_epoch >= patience;
  }
};

struct RunRecord {
  std::uint64_t seed = 0;
  int fold_id = 0;
  double val_loss = kMissing;
  bool failed = false;
  std::string fail_reason;
  models::ParamSet params;   // best-validation parameters
  MatrixXd test_signals;     // [test rows x tickers], NaN where undefined
  std::vector<int> test_dates;
  int epochs_run = 0;
  double wall_seconds = 0.0;
};

RunRecord train_one(const models::ModelSpec& spec, const ModelDataset& data,
                    const FoldSchedule::Fold& fold, const TrainConfig& cfg,
                    std::uint64_t seed);

// per-cell mean of the top-S records by validation loss (ties by seed)
SignalPanel ensemble_positions(const std::vector<RunRecord>& records, int top_s);

// signals for arbitrary (row, ticker) pairs from trailing windows; rows with
// incomplete feature windows stay missing
MatrixXd windowed_signals(const models::ModelSpec& spec, const models::ParamSet& params,
                          const ModelDataset& data, int row_begin, int row_end);

// --- gradient verification ---------------------------------------------------

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
  int checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_err = 0.0;
  std::string worst_block;
  bool pass(double tol = 1e-4) const { return max_rel_err <= tol; }
};

// central finite differences of the full window->signal->return->Sharpe
// pipeline against tape gradients, on a synthetic random instance
GradCheckReport gradient_check(const models::ModelSpec& spec, int batch_windows,
                               int samples_per_block, std::uint64_t seed,
                               double fd_step_scale = 1e-5,
                               const models::ParamSet* params_override = nullptr);

}  // namespace sbench
