#pragma once

// Benchmark orchestration: config parsing, the data -> training -> ensembling
// -> portfolio -> evaluation pipeline across models, seeds, and folds, the
// on-disk result store, and the reporting surfaces (tables, PnL plot data).

#include <map>
#include <string>
#include <vector>

#include "sbench/market_data.hpp"
#include "sbench/metrics.hpp"
#include "sbench/models.hpp"
#include "sbench/portfolio.hpp"
#include "sbench/training.hpp"

namespace sbench {

struct ModelRunSpec {
  std::string name;
  models::ModelSpec spec;
  std::map<std::string, std::vector<double>> grid;  // hyperparameter axes
};

struct RunConfig {
  std::string data_kind = "synthetic";  // synthetic | csv
  std::string prices_csv;
  std::string groups_csv;
  std::string costs_csv;
  SyntheticConfig synthetic;
  FeatureConfig features;

  int retrain_every_years = 5;
  int initial_train_years = 10;

  TrainConfig training;
  std::vector<ModelRunSpec> models;
  std::vector<PeriodSpec> subperiods;
  std::string output_dir = "out";
  int grid_cap = 64;
  std::string config_text;  // verbatim snapshot of the parsed file

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text);
  void validate() const;
};

struct LedgerRow {
  std::string model;
  int fold = 0;
  std::uint64_t seed = 0;
  double val_loss = kMissing;
  int epochs = 0;
  double wall_seconds = 0.0;
  std::string status;  // ok | failed: <reason>
};

struct ModelResult {
  std::string name;
  MetricsReport metrics;
  VectorXd gross;  // OOS daily portfolio returns
  VectorXd net;
  MatrixXd weights;  // [dates x tickers]
  std::vector<BreakevenRow> breakeven;
  double portfolio_cstar_bps = kMissing;
  std::map<std::string, double> chosen;  // grid-selected hyperparameters
  std::string error;                     // nonempty when the model failed
};

struct ResultStore {
  std::vector<int> dates;  // out-of-sample calendar
  std::vector<std::string> tickers;
  std::vector<ModelResult> models;  // includes the Passive row
  std::vector<LedgerRow> ledger;
  std::vector<PeriodSpec> periods;
  std::string config_text;

  const ModelResult* find(const std::string& name) const;
  void save(const std::string& dir) const;
  static ResultStore load(const std::string& dir);
};

// full benchmark: deterministic given (config, seeds, data); one model's
// failure is recorded and the remaining models continue
ResultStore run_benchmark(const RunConfig& config);

// Cartesian expansion of a model's grid axes over spec/training knobs;
// exceeding `cap` is an error naming the count
struct GridVariant {
  models::ModelSpec spec;
  TrainConfig train;
  std::map<std::string, double> assignment;
};
std::vector<GridVariant> expand_grid(const ModelRunSpec& model, const TrainConfig& base,
                                     int cap);

// reporting surfaces; each writes <name>.csv and <name>.txt under dir/tables
enum class TableKind { Performance, Risk, Subperiod, Annual, Breakeven };
std::vector<std::string> emit_tables(const ResultStore& store, const std::string& dir,
                                     const std::vector<TableKind>& which);
TableKind table_kind_from_string(const std::string& s);

// 10%-vol-rescaled cumulative gross PnL: CSV data plus a dependency-free SVG
std::vector<std::string> emit_pnl_plot(const ResultStore& store, const std::string& dir,
                                       double vol_rescale = 0.10);

}  // namespace sbench
