#pragma once

// The reporting metric suite: return, risk-adjusted, HAC inference, downside
// and tail measures, passive-relative diagnostics, and calendar Sharpe
// decompositions. Reporting Sharpe uses the sample (n-1) std, unlike the
// 1/T variance inside the training loss. Missing results are NaN.

#include <map>
#include <string>
#include <vector>

#include "sbench/market_data.hpp"
#include "sbench/portfolio.hpp"

namespace sbench {

double annualized_return(const VectorXd& returns);

// geometric growth of compounded wealth; floors at -1 (with warn flag) if the
// compounded value is driven non-positive
double cagr(const VectorXd& returns, bool* warned = nullptr);

double sharpe_ratio(const VectorXd& returns);

// Newey-West t-statistic with Bartlett kernel; lags < 0 selects
// floor(4 (n/100)^{2/9}); lags = 0 collapses to the classical t-stat
double hac_tstat(const VectorXd& returns, int lags = -1);

// fraction of (t,k) cells where the position sign matches the realized
// next-day return sign, pooled per asset-day over nonzero cells
double hit_rate(const WeightPanel& weights, const ReturnPanel& returns);

struct RelativeStats {
  double info_ratio = kMissing;
  double t_hac = kMissing;
  double corr = kMissing;
};
RelativeStats info_ratio_and_corr(const VectorXd& strategy, const VectorXd& passive);

double max_drawdown(const VectorXd& returns);
double calmar(const VectorXd& returns);

// expected shortfall at `level`, reported as a positive loss magnitude
double cvar(const VectorXd& returns, double level = 0.05);

struct PeriodSpec {
  std::string label;  // e.g. "2010-2015"
  int start = 0;      // serial days, [start, end)
  int end = 0;
};

struct PeriodSharpes {
  double worst_3m = kMissing;     // min over rolling 63-day windows
  double min_annual = kMissing;   // min over calendar years
  std::map<std::string, double> per_period;
  std::map<int, double> per_year;
};
PeriodSharpes rolling_and_period_sharpes(const VectorXd& returns, const std::vector<int>& dates,
                                         const std::vector<PeriodSpec>& periods);

struct MetricsReport {
  double cagr = kMissing;
  double ann_return = kMissing;
  double sharpe = kMissing;
  double t_hac = kMissing;
  double hit_rate = kMissing;
  double turnover_ann = kMissing;
  double xgmv = kMissing;
  double info_ratio = kMissing;
  double t_hac_vs_passive = kMissing;
  double corr_vs_passive = kMissing;
  double max_dd = kMissing;
  double calmar = kMissing;
  double worst_3m_sharpe = kMissing;
  double min_annual_sharpe = kMissing;
  double cvar_5 = kMissing;
  std::map<std::string, double> per_period;
  std::map<int, double> per_year;

  // flat key/value view, keys named after the reporting table columns
  std::vector<std::pair<std::string, double>> flat() const;
};

// joint assembly over the aligned calendar; weights/asset returns drive the
// hit rate and turnover block, passive the relative diagnostics
MetricsReport compute_metrics(const VectorXd& strategy, const std::vector<int>& dates,
                              const VectorXd& passive, const WeightPanel& weights,
                              const ReturnPanel& asset_returns,
                              const std::vector<PeriodSpec>& periods);

// drop NaN entries (and keep dates aligned)
VectorXd compact_series(const VectorXd& series);
void compact_series(const VectorXd& series, const std::vector<int>& dates, VectorXd& out,
                    std::vector<int>& out_dates);

}  // namespace sbench
