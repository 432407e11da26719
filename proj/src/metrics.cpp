#include "sbench/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace sbench {

namespace {

double sample_std(const VectorXd& x) {
  if (x.size() < 2) return kMissing;
  const double m = x.mean();
  return std::sqrt((x.array() - m).square().sum() / (x.size() - 1));
}

// constant series produce sd ~ 1e-18 from rounding, not exactly zero; treat
// anything below machine-level relative to the mean as degenerate
bool degenerate_std(double sd, double mean) {
  return !(sd > 1e-12 * std::abs(mean)) || !(sd > 0);
}

}  // namespace

VectorXd compact_series(const VectorXd& series) {
  VectorXd out(series.size());
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < series.size(); ++i)
    if (present(series(i))) out(n++) = series(i);
  out.conservativeResize(n);
  return out;
}

void compact_series(const VectorXd& series, const std::vector<int>& dates, VectorXd& out,
                    std::vector<int>& out_dates) {
  out.resize(series.size());
  out_dates.clear();
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    if (present(series(i))) {
      out(n++) = series(i);
      out_dates.push_back(dates[static_cast<size_t>(i)]);
    }
  }
  out.conservativeResize(n);
}

double annualized_return(const VectorXd& returns) {
  if (returns.size() == 0) return kMissing;
  return returns.mean() * kTradingDaysPerYear;
}

double cagr(const VectorXd& returns, bool* warned) {
  if (warned) *warned = false;
  if (returns.size() == 0) return kMissing;
  double wealth = 1.0;
  for (Eigen::Index i = 0; i < returns.size(); ++i) wealth *= 1.0 + returns(i);
  const double years = static_cast<double>(returns.size()) / kTradingDaysPerYear;
  if (wealth <= 0.0) {
    if (warned) *warned = true;
    return -1.0;
  }
  return std::pow(wealth, 1.0 / years) - 1.0;
}

double sharpe_ratio(const VectorXd& returns) {
  if (returns.size() < 2) return kMissing;
  const double sd = sample_std(returns);
  if (degenerate_std(sd, returns.mean())) return kMissing;
  return returns.mean() / sd * std::sqrt(kTradingDaysPerYear);
}

double hac_tstat(const VectorXd& returns, int lags) {
  const Eigen::Index n = returns.size();
  if (n < 2) return kMissing;
  if (lags < 0)
    lags = static_cast<int>(std::floor(4.0 * std::pow(n / 100.0, 2.0 / 9.0)));
  if (n <= lags + 1) return kMissing;
  const double m = returns.mean();
  auto gamma = [&](int j) {
    double s = 0;
    for (Eigen::Index t = j; t < n; ++t) s += (returns(t) - m) * (returns(t - j) - m);
    return s / n;
  };
  double s_nw = gamma(0);
  for (int j = 1; j <= lags; ++j)
    s_nw += 2.0 * (1.0 - static_cast<double>(j) / (lags + 1)) * gamma(j);
  if (!(s_nw > 0) || degenerate_std(std::sqrt(s_nw), m)) return kMissing;
  return m / std::sqrt(s_nw / n);
}

double hit_rate(const WeightPanel& weights, const ReturnPanel& returns) {
  const Eigen::Index T = weights.w.rows(), K = weights.w.cols();
  long hits = 0, total = 0;
  for (Eigen::Index t = 1; t < T; ++t)
    for (Eigen::Index k = 0; k < K; ++k) {
      const double w = weights.w(t - 1, k), r = returns.r(t, k);
      if (!present(w) || !present(r) || w == 0.0 || r == 0.0) continue;
      ++total;
      if (w * r > 0) ++hits;
    }
  return total > 0 ? static_cast<double>(hits) / total : kMissing;
}

RelativeStats info_ratio_and_corr(const VectorXd& strategy, const VectorXd& passive) {
  RelativeStats out;
  if (strategy.size() != passive.size() || strategy.size() < 2) return out;
  VectorXd diff = strategy - passive;
  const double sd = sample_std(diff);
  if (!degenerate_std(sd, diff.mean())) {
    out.info_ratio = diff.mean() / sd * std::sqrt(kTradingDaysPerYear);
    out.t_hac = hac_tstat(diff);
  }
  const double ss = sample_std(strategy), sp = sample_std(passive);
  if (ss > 0 && sp > 0) {
    const double cov = ((strategy.array() - strategy.mean()) *
                        (passive.array() - passive.mean()))
                           .sum() /
                       (strategy.size() - 1);
    out.corr = cov / (ss * sp);
  }
  return out;
}

double max_drawdown(const VectorXd& returns) {
  if (returns.size() == 0) return kMissing;
  double wealth = 1.0, peak = 1.0, worst = 0.0;
  for (Eigen::Index i = 0; i < returns.size(); ++i) {
    wealth *= 1.0 + returns(i);
    peak = std::max(peak, wealth);
    worst = std::min(worst, wealth / peak - 1.0);
  }
  return worst;
}

double calmar(const VectorXd& returns) {
  const double dd = max_drawdown(returns);
  if (!present(dd) || dd == 0.0) return kMissing;
  return cagr(returns) / std::abs(dd);
}

double cvar(const VectorXd& returns, double level) {
  const Eigen::Index n = returns.size();
  const Eigen::Index m = static_cast<Eigen::Index>(std::floor(level * n));
  if (m < 1) return kMissing;
  std::vector<double> sorted(returns.data(), returns.data() + n);
  std::nth_element(sorted.begin(), sorted.begin() + m, sorted.end());
  double tail = 0;
  std::partial_sort(sorted.begin(), sorted.begin() + m, sorted.end());
  for (Eigen::Index i = 0; i < m; ++i) tail += sorted[static_cast<size_t>(i)];
  return -(tail / m);
}

PeriodSharpes rolling_and_period_sharpes(const VectorXd& returns, const std::vector<int>& dates,
                                         const std::vector<PeriodSpec>& periods) {
  PeriodSharpes out;
  const Eigen::Index n = returns.size();
  if (static_cast<size_t>(n) != dates.size())
    throw ConfigError("rolling_and_period_sharpes: series/calendar size mismatch");

  const int window = 63;
  if (n >= window) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index start = 0; start + window <= n; ++start) {
      const double s = sharpe_ratio(returns.segment(start, window));
      if (present(s)) best = std::min(best, s);
    }
    if (std::isfinite(best)) out.worst_3m = best;
  }

  std::map<int, std::vector<double>> by_year;
  for (Eigen::Index i = 0; i < n; ++i)
    by_year[year_of(dates[static_cast<size_t>(i)])].push_back(returns(i));
  double worst_year = std::numeric_limits<double>::infinity();
  for (const auto& [year, vals] : by_year) {
    VectorXd v = Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    const double s = sharpe_ratio(v);
    out.per_year[year] = s;
    if (present(s)) worst_year = std::min(worst_year, s);
  }
  if (std::isfinite(worst_year)) out.min_annual = worst_year;

  for (const auto& p : periods) {
    std::vector<double> vals;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int d = dates[static_cast<size_t>(i)];
      if (d >= p.start && d < p.end) vals.push_back(returns(i));
    }
    VectorXd v = Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    out.per_period[p.label] = vals.size() >= 2 ? sharpe_ratio(v) : kMissing;
  }
  return out;
}

std::vector<std::pair<std::string, double>> MetricsReport::flat() const {
  return {
      {"CAGR", cagr},
      {"Ann. Ret.", ann_return},
      {"SR", sharpe},
      {"t (HAC)", t_hac},
      {"Hit", hit_rate},
      {"Turnover", turnover_ann},
      {"xGMV", xgmv},
      {"Info. Ratio", info_ratio},
      {"t (HAC) v Passive", t_hac_vs_passive},
      {"Corr. v Passive", corr_vs_passive},
      {"Max DD", max_dd},
      {"Calmar", calmar},
      {"Worst 3m Sharpe", worst_3m_sharpe},
      {"Min Ann. Sharpe", min_annual_sharpe},
      {"CVaR 5%", cvar_5},
  };
}

MetricsReport compute_metrics(const VectorXd& strategy, const std::vector<int>& dates,
                              const VectorXd& passive, const WeightPanel& weights,
                              const ReturnPanel& asset_returns,
                              const std::vector<PeriodSpec>& periods) {
  MetricsReport rep;
  VectorXd strat;
  std::vector<int> strat_dates;
  compact_series(strategy, dates, strat, strat_dates);
  if (strat.size() < 2) return rep;

  rep.ann_return = annualized_return(strat);
  rep.cagr = cagr(strat);
  rep.sharpe = sharpe_ratio(strat);
  rep.t_hac = hac_tstat(strat);
  rep.max_dd = max_drawdown(strat);
  rep.calmar = calmar(strat);
  rep.cvar_5 = cvar(strat, 0.05);
  rep.hit_rate = hit_rate(weights, asset_returns);

  auto ts = turnover(weights);
  rep.turnover_ann = ts.annualized;
  rep.xgmv = ts.xgmv;

  // align strategy and passive on dates where both are defined
  std::vector<double> a, b;
  if (passive.size() == strategy.size()) {
    for (Eigen::Index i = 0; i < strategy.size(); ++i)
      if (present(strategy(i)) && present(passive(i))) {
        a.push_back(strategy(i));
        b.push_back(passive(i));
      }
  }
  if (a.size() >= 2) {
    VectorXd av = Eigen::Map<const VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
    VectorXd bv = Eigen::Map<const VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    auto rel = info_ratio_and_corr(av, bv);
    rep.info_ratio = rel.info_ratio;
    rep.t_hac_vs_passive = rel.t_hac;
    rep.corr_vs_passive = rel.corr;
  }

  auto ps = rolling_and_period_sharpes(strat, strat_dates, periods);
  rep.worst_3m_sharpe = ps.worst_3m;
  rep.min_annual_sharpe = ps.min_annual;
  rep.per_period = std::move(ps.per_period);
  rep.per_year = std::move(ps.per_year);
  return rep;
}

}  // namespace sbench
