#pragma once

// Signals -> volatility-targeted weights -> gross/net strategy returns,
// turnover, and breakeven transaction costs. Pure functions over immutable
// panels.

#include <string>
#include <vector>

#include "sbench/market_data.hpp"

namespace sbench {

struct SignalPanel {
  std::vector<int> dates;
  std::vector<std::string> tickers;
  MatrixXd yhat;    // in [-1, 1]
  int burn_in = 0;  // leading dates excluded downstream
};

struct WeightPanel {
  std::vector<int> dates;
  std::vector<std::string> tickers;
  MatrixXd w;  // dimensionless leverage
  double sigma_tgt = 0.10;
};

struct StrategyReturns {
  std::vector<int> dates;
  std::vector<std::string> tickers;
  MatrixXd per_asset;  // R_{t,k} = w_{t-1,k} r_{t,k}, stored at realization date t
  VectorXd portfolio;  // cross-sectional mean over active assets (NaN where none)
  VectorXd active;     // K_t, number of active assets contributing at date t
};

// w_{t,k} = yhat_{t,k} * sigma_tgt / (sigma_{t,k} * sqrt(252)); sigma_tgt is
// annualized, sigma daily. Missing where signal or vol missing.
WeightPanel position_weights(const SignalPanel& signals, const VolPanel& vol,
                             double sigma_tgt = 0.10);

StrategyReturns strategy_returns(const WeightPanel& weights, const ReturnPanel& returns);

// R^net_t = R^port_t - (1/K_{t-1}) sum_k c_k |w_{t-1,k} - w_{t-2,k}|, entering
// from flat (w_{-1} = 0). costs are per-ticker proportional costs per unit
// traded weight; zero costs reproduce the gross series exactly.
VectorXd net_returns(const StrategyReturns& gross, const WeightPanel& weights,
                     const std::vector<double>& costs);

struct TurnoverStats {
  VectorXd daily;           // tau_t = sum_k |w_{t,k} - w_{t-1,k}|
  double annualized = 0.0;  // mean(tau) * 252
  double xgmv = 0.0;        // total turnover / mean gross exposure
};
TurnoverStats turnover(const WeightPanel& weights);

struct BreakevenRow {
  std::string ticker;
  double gross_ann = 0.0;     // annualized mean per-asset gross return
  double turnover_ann = 0.0;  // annualized per-asset |dw| turnover
  double cstar_bps = 0.0;     // breakeven cost in basis points (NaN if no turnover)
};

// c*_k = sum_t R^gross_{t,k} / sum_t tau_{t,k} per asset (leveraged turnover)
std::vector<BreakevenRow> breakeven_costs(const StrategyReturns& gross,
                                          const WeightPanel& weights);

// portfolio-level c*: sum_t R^port_t / sum_t (1/K_{t-1}) sum_k tau_{t-1,k}
double portfolio_breakeven(const StrategyReturns& gross, const WeightPanel& weights);

// constant full-long signal pushed through the identical pipeline
SignalPanel passive_signals(const VolPanel& vol);

}  // namespace sbench
