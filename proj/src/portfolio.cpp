#include "sbench/portfolio.hpp"

#include <cmath>

namespace sbench {

WeightPanel position_weights(const SignalPanel& signals, const VolPanel& vol,
                             double sigma_tgt) {
  if (!(sigma_tgt > 0)) throw ConfigError("sigma_tgt must be positive");
  const Eigen::Index T = signals.yhat.rows(), K = signals.yhat.cols();
  WeightPanel out;
  out.dates = signals.dates;
  out.tickers = signals.tickers;
  out.sigma_tgt = sigma_tgt;
  out.w = make_missing(T, K);
  const double root = std::sqrt(kTradingDaysPerYear);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index k = 0; k < K; ++k) {
      const double y = signals.yhat(t, k), vs = vol.vs_factor(t, k);
      if (present(y) && present(vs)) out.w(t, k) = y * sigma_tgt * vs / root;
    }
  return out;
}

StrategyReturns strategy_returns(const WeightPanel& weights, const ReturnPanel& returns) {
  const Eigen::Index T = weights.w.rows(), K = weights.w.cols();
  StrategyReturns out;
  out.dates = weights.dates;
  out.tickers = weights.tickers;
  out.per_asset = make_missing(T, K);
  out.portfolio = VectorXd::Constant(T, kMissing);
  out.active = VectorXd::Zero(T);
  for (Eigen::Index t = 1; t < T; ++t) {
    double sum = 0;
    int n = 0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double w = weights.w(t - 1, k), r = returns.r(t, k);
      if (present(w) && present(r)) {
        out.per_asset(t, k) = w * r;
        sum += w * r;
        ++n;
      }
    }
    out.active(t) = n;
    if (n > 0) out.portfolio(t) = sum / n;
  }
  return out;
}

namespace {

// |w_t - w_{t-1}| with missing treated as flat (0) and w_{-1} = 0
MatrixXd weight_changes(const MatrixXd& w) {
  const Eigen::Index T = w.rows(), K = w.cols();
  MatrixXd dw = MatrixXd::Zero(T, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    double prev = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double cur = present(w(t, k)) ? w(t, k) : 0.0;
      dw(t, k) = std::abs(cur - prev);
      prev = cur;
    }
  }
  return dw;
}

}  // namespace

VectorXd net_returns(const StrategyReturns& gross, const WeightPanel& weights,
                     const std::vector<double>& costs) {
  if (costs.size() != weights.tickers.size())
    throw ConfigError("net_returns: cost vector size mismatch");
  for (double c : costs)
    if (c < 0) throw ConfigError("net_returns: negative cost");
  const Eigen::Index T = weights.w.rows(), K = weights.w.cols();
  const MatrixXd dw = weight_changes(weights.w);
  VectorXd net = VectorXd::Constant(T, kMissing);
  for (Eigen::Index t = 1; t < T; ++t) {
    if (missing(gross.portfolio(t))) continue;
    const double kactive = gross.active(t);
    double cost = 0;
    for (Eigen::Index k = 0; k < K; ++k) cost += costs[static_cast<size_t>(k)] * dw(t - 1, k);
    net(t) = gross.portfolio(t) - cost / kactive;
  }
  return net;
}

TurnoverStats turnover(const WeightPanel& weights) {
  const Eigen::Index T = weights.w.rows(), K = weights.w.cols();
  const MatrixXd dw = weight_changes(weights.w);
  TurnoverStats out;
  out.daily = dw.rowwise().sum();
  out.annualized = out.daily.mean() * kTradingDaysPerYear;
  double gross_exposure = 0;
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index k = 0; k < K; ++k)
      gross_exposure += present(weights.w(t, k)) ? std::abs(weights.w(t, k)) : 0.0;
  gross_exposure /= static_cast<double>(T);
  out.xgmv = gross_exposure > 0 ? out.daily.sum() / gross_exposure : kMissing;
  return out;
}

std::vector<BreakevenRow> breakeven_costs(const StrategyReturns& gross,
                                          const WeightPanel& weights) {
  const Eigen::Index T = weights.w.rows(), K = weights.w.cols();
  const MatrixXd dw = weight_changes(weights.w);
  std::vector<BreakevenRow> rows;
  rows.reserve(static_cast<size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    BreakevenRow row;
    row.ticker = weights.tickers[static_cast<size_t>(k)];
    double sum_gross = 0, sum_tau = 0;
    Eigen::Index n = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (present(gross.per_asset(t, k))) {
        sum_gross += gross.per_asset(t, k);
        ++n;
      }
      sum_tau += dw(t, k);
    }
    row.gross_ann = n > 0 ? sum_gross / n * kTradingDaysPerYear : kMissing;
    row.turnover_ann = T > 0 ? sum_tau / T * kTradingDaysPerYear : kMissing;
    row.cstar_bps = sum_tau > 0 ? sum_gross / sum_tau * 1e4 : kMissing;
    rows.push_back(row);
  }
  return rows;
}

double portfolio_breakeven(const StrategyReturns& gross, const WeightPanel& weights) {
  const Eigen::Index T = weights.w.rows(), K = weights.w.cols();
  const MatrixXd dw = weight_changes(weights.w);
  double sum_gross = 0, sum_tau = 0;
  for (Eigen::Index t = 1; t < T; ++t) {
    if (missing(gross.portfolio(t))) continue;
    sum_gross += gross.portfolio(t);
    double tau = 0;
    for (Eigen::Index k = 0; k < K; ++k) tau += dw(t - 1, k);
    sum_tau += tau / gross.active(t);
  }
  return sum_tau > 0 ? sum_gross / sum_tau : kMissing;
}

SignalPanel passive_signals(const VolPanel& vol) {
  SignalPanel out;
  out.dates = vol.dates;
  out.tickers = vol.tickers;
  out.yhat = make_missing(vol.sigma.rows(), vol.sigma.cols());
  for (Eigen::Index t = 0; t < vol.sigma.rows(); ++t)
    for (Eigen::Index k = 0; k < vol.sigma.cols(); ++k)
      if (present(vol.sigma(t, k))) out.yhat(t, k) = 1.0;
  return out;
}

}  // namespace sbench
