#pragma once

// Price/return/vol/feature panels. All panels share the [date, ticker]
// orientation; a cell is either a finite value or NaN (missing). Products are
// immutable once built; construction is single-threaded per panel.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sbench/core.hpp"

namespace sbench {

struct PricePanel {
  std::vector<int> dates;              // serial days, strictly increasing
  std::vector<std::string> tickers;
  MatrixXd close;                      // [date x ticker], > 0 where present
  std::map<std::string, std::string> group;  // ticker -> asset class

  Eigen::Index n_dates() const { return static_cast<Eigen::Index>(dates.size()); }
  Eigen::Index n_tickers() const { return static_cast<Eigen::Index>(tickers.size()); }
  int ticker_index(const std::string& t) const;
};

struct ReturnPanel {
  std::vector<int> dates;
  std::vector<std::string> tickers;
  MatrixXd r;  // r_t = (P_t - P_{t-1}) / P_{t-1}
};

struct VolPanel {
  std::vector<int> dates;
  std::vector<std::string> tickers;
  MatrixXd mu;         // EWMA mean of returns
  MatrixXd sigma;      // EWMA daily vol, floored at sigma_floor
  MatrixXd vs_factor;  // 1 / sigma
  int span = 60;
  double sigma_floor = 1e-4;
  int min_obs = 21;
};

struct FeaturePanel {
  std::vector<int> dates;
  std::vector<std::string> tickers;
  std::vector<MatrixXd> features;      // C matrices [date x ticker]
  std::vector<std::string> feature_names;
  MatrixXd target;                     // clip(r_{t+1}/sigma_t, -clip, clip)
  MatrixXd present;                    // 1.0 where every feature channel is present

  Eigen::Index n_features() const { return static_cast<Eigen::Index>(features.size()); }
};

struct FeatureConfig {
  int ewma_span = 60;
  int min_obs = 21;
  double sigma_floor = 1e-4;
  std::vector<int> horizons = {1, 5, 21, 63, 126, 252};
  std::vector<std::pair<int, int>> macd_pairs = {{8, 24}, {16, 48}, {32, 96}};
  double target_clip = 20.0;
};

// --- ingestion --------------------------------------------------------------

// CSV with header date,ticker,close. Panel is aligned on the union of dates;
// per-ticker gaps stay missing. Throws ParseError (with line number) or
// ValidationError (non-positive price, duplicate key).
PricePanel load_price_panel(const std::string& path);

// Optional groups.csv: header ticker,group.
void load_groups(PricePanel& panel, const std::string& path);

// --- derived panels ---------------------------------------------------------

ReturnPanel compute_returns(const PricePanel& panel);

// EWMA recursion with lambda = 2/(span+1):
//   mu_t     = lambda r_t + (1-lambda) mu_{t-1}
//   sigma2_t = lambda (r_t - mu_t)^2 + (1-lambda) sigma2_{t-1}
// mu initialized at the first return; sigma2 initialized at the sample
// variance of the first min_obs returns; both masked until min_obs returns
// have been seen. sigma = max(sqrt(sigma2), sigma_floor).
VolPanel ewma_mean_var(const ReturnPanel& returns, int span, int min_obs = 21,
                       double sigma_floor = 1e-4);

// r_norm up to horizon h: (P_t/P_{t-h} - 1) / (sigma_t * sqrt(h)).
// One matrix per horizon; missing where prices or sigma are missing.
std::vector<MatrixXd> normalized_returns(const PricePanel& prices, const VolPanel& vol,
                                         const std::vector<int>& horizons);

// MACD_t = EWMA_{Ts}(P) - EWMA_{Tl}(P), price EWMAs with decay alpha = 1/T;
// q_t = MACD_t / Std_63(P); Signal_t = q_t / Std_252(q); trailing sample
// standard deviations, denominators floored. Missing until windows fill.
std::vector<MatrixXd> macd_features(const PricePanel& prices,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    double std_floor = 1e-8);

// target_t = clip(r_{t+1} / sigma_t, -clip, clip); last date missing.
MatrixXd build_targets(const ReturnPanel& returns, const VolPanel& vol, double clip = 20.0);

// Full feature bundle: normalized returns for each horizon then one MACD
// Signal per pair; row marked present only when every channel is.
FeaturePanel build_features(const PricePanel& prices, const ReturnPanel& returns,
                            const VolPanel& vol, const FeatureConfig& cfg = {});

// --- synthetic universe -----------------------------------------------------

struct RegimeSpec {
  double persistence = 0.98;  // daily stay probability
  double drift = 0.0;         // annualized drift while in regime
  double vol_of_vol = 0.2;    // std of daily log-vol shocks
};

struct SyntheticConfig {
  int n_assets = 4;
  int n_days = 1512;
  std::vector<RegimeSpec> regimes = {{0.985, 0.02, 0.15}, {0.95, -0.04, 0.45}};
  double signal_strength = 0.0;   // variance fraction of the planted component
  std::string signal_kind = "none";  // none | ar1 | regime
  double signal_phi = 0.6;        // AR coefficient of the planted ar1 component
  std::uint64_t rng_seed = 0;
  std::string start_date = "2010-01-04";

  void validate() const;
};

// Deterministic given (config, seed). Returns are a regime-switching
// stochastic-volatility process; prices cumulated from 100.
PricePanel generate_synthetic_universe(const SyntheticConfig& cfg);

// Monte-Carlo Sharpe of sign-positioning on the planted signal under
// volatility targeting; the reference value for the linear-recovery check.
double synthetic_oracle_sharpe(const SyntheticConfig& cfg, int mc_days = 200000);

}  // namespace sbench
