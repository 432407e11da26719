#include "sbench/market_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace sbench {

int PricePanel::ticker_index(const std::string& t) const {
  auto it = std::find(tickers.begin(), tickers.end(), t);
  return it == tickers.end() ? -1 : static_cast<int>(it - tickers.begin());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

PricePanel load_price_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open price file: " + path);

  struct Row {
    int date;
    std::string ticker;
    double close;
  };
  std::vector<Row> rows;
  std::set<std::pair<int, std::string>> seen;

  std::string line;
  size_t lineno = 0;
  bool header_checked = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty()) continue;
    auto fields = split_csv_line(t);
    if (!header_checked) {
      header_checked = true;
      if (fields.size() >= 3 && trim(fields[0]) == "date") continue;  // header row
    }
    if (fields.size() != 3) {
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 fields, got " +
                       std::to_string(fields.size()));
    }
    int date;
    try {
      date = parse_iso_date(trim(fields[0]));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    std::string ticker = trim(fields[1]);
    if (ticker.empty())
      throw ParseError("line " + std::to_string(lineno) + ": empty ticker");
    double close;
    try {
      size_t pos = 0;
      close = std::stod(trim(fields[2]), &pos);
      if (pos != trim(fields[2]).size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": unparsable close '" +
                       fields[2] + "'");
    }
    if (!(close > 0.0)) {
      throw ValidationError("line " + std::to_string(lineno) + ": non-positive close for (" +
                            format_iso_date(date) + ", " + ticker + ")");
    }
    if (!seen.emplace(date, ticker).second) {
      throw ValidationError("duplicate (date, ticker): (" + format_iso_date(date) + ", " +
                            ticker + ")");
    }
    rows.push_back({date, ticker, close});
  }

  PricePanel panel;
  std::set<int> date_set;
  std::vector<std::string> ticker_order;
  std::set<std::string> ticker_set;
  for (const auto& r : rows) {
    date_set.insert(r.date);
    if (ticker_set.insert(r.ticker).second) ticker_order.push_back(r.ticker);
  }
  panel.dates.assign(date_set.begin(), date_set.end());
  panel.tickers = ticker_order;
  panel.close = make_missing(panel.n_dates(), panel.n_tickers());

  std::map<int, Eigen::Index> date_idx;
  for (Eigen::Index i = 0; i < panel.n_dates(); ++i) date_idx[panel.dates[i]] = i;
  std::map<std::string, Eigen::Index> tick_idx;
  for (Eigen::Index k = 0; k < panel.n_tickers(); ++k) tick_idx[panel.tickers[k]] = k;

  for (const auto& r : rows) panel.close(date_idx[r.date], tick_idx[r.ticker]) = r.close;
  return panel;
}

void load_groups(PricePanel& panel, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open groups file: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty()) continue;
    auto fields = split_csv_line(t);
    if (lineno == 1 && !fields.empty() && trim(fields[0]) == "ticker") continue;
    if (fields.size() != 2)
      throw ParseError("groups line " + std::to_string(lineno) + ": expected 2 fields");
    panel.group[trim(fields[0])] = trim(fields[1]);
  }
}

ReturnPanel compute_returns(const PricePanel& panel) {
  ReturnPanel out;
  out.dates = panel.dates;
  out.tickers = panel.tickers;
  out.r = make_missing(panel.n_dates(), panel.n_tickers());
  for (Eigen::Index k = 0; k < panel.n_tickers(); ++k) {
    double prev = kMissing;
    for (Eigen::Index t = 0; t < panel.n_dates(); ++t) {
      const double p = panel.close(t, k);
      if (present(p) && present(prev)) out.r(t, k) = (p - prev) / prev;
      if (present(p)) prev = p;
    }
  }
  return out;
}

VolPanel ewma_mean_var(const ReturnPanel& returns, int span, int min_obs,
                       double sigma_floor) {
  if (span < 2) throw ConfigError("ewma span must be >= 2, got " + std::to_string(span));
  if (min_obs < 1) throw ConfigError("min_obs must be >= 1");

  const double lambda = 2.0 / (span + 1.0);
  const Eigen::Index T = returns.r.rows(), K = returns.r.cols();

  VolPanel out;
  out.dates = returns.dates;
  out.tickers = returns.tickers;
  out.mu = make_missing(T, K);
  out.sigma = make_missing(T, K);
  out.vs_factor = make_missing(T, K);
  out.span = span;
  out.sigma_floor = sigma_floor;
  out.min_obs = min_obs;

  for (Eigen::Index k = 0; k < K; ++k) {
    double mu = kMissing, sigma2 = kMissing;
    int n_seen = 0;
    std::vector<double> warmup;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double r = returns.r(t, k);
      if (missing(r)) continue;
      ++n_seen;
      if (n_seen == 1)
        mu = r;
      else
        mu = lambda * r + (1.0 - lambda) * mu;

      if (n_seen <= min_obs) warmup.push_back(r);
      if (n_seen == min_obs) {
        double m = 0;
        for (double w : warmup) m += w;
        m /= warmup.size();
        double v = 0;
        for (double w : warmup) v += (w - m) * (w - m);
        sigma2 = warmup.size() > 1 ? v / (warmup.size() - 1) : 0.0;
      } else if (n_seen > min_obs) {
        sigma2 = lambda * (r - mu) * (r - mu) + (1.0 - lambda) * sigma2;
      }

      if (n_seen >= min_obs) {
        out.mu(t, k) = mu;
        const double s = std::max(std::sqrt(sigma2), sigma_floor);
        out.sigma(t, k) = s;
        out.vs_factor(t, k) = 1.0 / s;
      }
    }
  }
  return out;
}

std::vector<MatrixXd> normalized_returns(const PricePanel& prices, const VolPanel& vol,
                                         const std::vector<int>& horizons) {
  for (int h : horizons)
    if (h < 1) throw ConfigError("horizon must be positive");
  const Eigen::Index T = prices.n_dates(), K = prices.n_tickers();
  std::vector<MatrixXd> out;
  out.reserve(horizons.size());
  for (int h : horizons) {
    MatrixXd m = make_missing(T, K);
    const double root_h = std::sqrt(static_cast<double>(h));
    for (Eigen::Index k = 0; k < K; ++k) {
      for (Eigen::Index t = h; t < T; ++t) {
        const double p1 = prices.close(t, k), p0 = prices.close(t - h, k);
        const double s = vol.sigma(t, k);
        if (present(p1) && present(p0) && present(s))
          m(t, k) = (p1 / p0 - 1.0) / (s * root_h);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

// Trailing w-point sample std over present values; missing until w points
// have accumulated contiguously in the value stream for that ticker.
void trailing_std_stream(const std::vector<double>& xs, int w, double floor_val,
                         std::vector<double>& out) {
  const size_t n = xs.size();
  out.assign(n, kMissing);
  if (w < 2) throw ConfigError("std window must be >= 2");
  double sum = 0, sum2 = 0;
  for (size_t i = 0; i < n; ++i) {
    sum += xs[i];
    sum2 += xs[i] * xs[i];
    if (i >= static_cast<size_t>(w)) {
      sum -= xs[i - w];
      sum2 -= xs[i - w] * xs[i - w];
    }
    if (i + 1 >= static_cast<size_t>(w)) {
      const double mean = sum / w;
      double var = (sum2 - w * mean * mean) / (w - 1);
      if (var < 0) var = 0;  // numerical guard
      out[i] = std::max(std::sqrt(var), floor_val);
    }
  }
}

}  // namespace

std::vector<MatrixXd> macd_features(const PricePanel& prices,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    double std_floor) {
  for (auto [ts, tl] : pairs)
    if (ts >= tl) throw ConfigError("MACD pair requires T_s < T_l");
  const Eigen::Index T = prices.n_dates(), K = prices.n_tickers();
  std::vector<MatrixXd> out(pairs.size(), make_missing(T, K));

  for (Eigen::Index k = 0; k < K; ++k) {
    // compact stream of present prices with their date indices
    std::vector<double> px;
    std::vector<Eigen::Index> idx;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (present(prices.close(t, k))) {
        px.push_back(prices.close(t, k));
        idx.push_back(t);
      }
    }
    if (px.empty()) continue;

    std::vector<double> std63;
    trailing_std_stream(px, 63, std_floor, std63);

    for (size_t p = 0; p < pairs.size(); ++p) {
      const auto [ts, tl] = pairs[p];
      const double as = 1.0 / ts, al = 1.0 / tl;
      double es = px[0], el = px[0];
      std::vector<double> q(px.size(), kMissing);
      for (size_t i = 0; i < px.size(); ++i) {
        if (i > 0) {
          es = as * px[i] + (1.0 - as) * es;
          el = al * px[i] + (1.0 - al) * el;
        }
        if (present(std63[i])) q[i] = (es - el) / std63[i];
      }
      // Std_252 of q over the contiguous tail where q is defined
      std::vector<double> qvals;
      std::vector<size_t> qpos;
      for (size_t i = 0; i < q.size(); ++i) {
        if (present(q[i])) {
          qvals.push_back(q[i]);
          qpos.push_back(i);
        }
      }
      std::vector<double> stdq;
      trailing_std_stream(qvals, 252, std_floor, stdq);
      for (size_t j = 0; j < qvals.size(); ++j) {
        if (present(stdq[j])) out[p](idx[qpos[j]], k) = qvals[j] / stdq[j];
      }
    }
  }
  return out;
}

MatrixXd build_targets(const ReturnPanel& returns, const VolPanel& vol, double clip) {
  if (!(clip > 0)) throw ConfigError("target clip must be positive");
  const Eigen::Index T = returns.r.rows(), K = returns.r.cols();
  MatrixXd target = make_missing(T, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
      const double rn = returns.r(t + 1, k), s = vol.sigma(t, k);
      if (present(rn) && present(s))
        target(t, k) = std::clamp(rn / s, -clip, clip);
    }
  }
  return target;
}

FeaturePanel build_features(const PricePanel& prices, const ReturnPanel& returns,
                            const VolPanel& vol, const FeatureConfig& cfg) {
  FeaturePanel out;
  out.dates = prices.dates;
  out.tickers = prices.tickers;

  auto norm = normalized_returns(prices, vol, cfg.horizons);
  for (size_t i = 0; i < cfg.horizons.size(); ++i) {
    out.features.push_back(std::move(norm[i]));
    out.feature_names.push_back("norm_ret_" + std::to_string(cfg.horizons[i]));
  }
  auto macd = macd_features(prices, cfg.macd_pairs);
  for (size_t i = 0; i < cfg.macd_pairs.size(); ++i) {
    out.features.push_back(std::move(macd[i]));
    out.feature_names.push_back("macd_" + std::to_string(cfg.macd_pairs[i].first) + "_" +
                                std::to_string(cfg.macd_pairs[i].second));
  }
  out.target = build_targets(returns, vol, cfg.target_clip);

  const Eigen::Index T = prices.n_dates(), K = prices.n_tickers();
  out.present = MatrixXd::Zero(T, K);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index k = 0; k < K; ++k) {
      bool ok = true;
      for (const auto& f : out.features) {
        if (missing(f(t, k))) {
          ok = false;
          break;
        }
      }
      out.present(t, k) = ok ? 1.0 : 0.0;
    }
  }
  // mask features where the row is not fully present (no NaN leaks past the mask)
  for (auto& f : out.features) {
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index k = 0; k < K; ++k)
        if (out.present(t, k) == 0.0) f(t, k) = kMissing;
  }
  return out;
}

// --- synthetic universe -----------------------------------------------------

void SyntheticConfig::validate() const {
  if (n_assets < 1) throw ConfigError("synthetic: n_assets must be >= 1");
  if (n_days < 2 * 252) throw ConfigError("synthetic: n_days must be >= 504");
  if (signal_strength < 0) throw ConfigError("synthetic: signal_strength must be >= 0");
  if (signal_strength >= 1)
    throw ConfigError("synthetic: signal_strength is a variance fraction, must be < 1");
  if (regimes.empty()) throw ConfigError("synthetic: at least one regime required");
  for (const auto& r : regimes) {
    if (r.persistence <= 0 || r.persistence >= 1)
      throw ConfigError("synthetic: regime persistence must lie in (0,1)");
    if (r.vol_of_vol < 0) throw ConfigError("synthetic: vol_of_vol must be >= 0");
  }
  if (signal_kind != "none" && signal_kind != "ar1" && signal_kind != "regime")
    throw ConfigError("synthetic: signal_kind must be none|ar1|regime");
  if (signal_phi <= -1 || signal_phi >= 1)
    throw ConfigError("synthetic: signal_phi must lie in (-1,1)");
}

namespace {

// Base vol ladder: regime r targets annualized vol 8% * 2^r.
double regime_base_daily_vol(size_t r) {
  return 0.08 * std::pow(2.0, static_cast<double>(r)) / std::sqrt(kTradingDaysPerYear);
}

struct SyntheticPath {
  std::vector<double> ret;    // simple returns
  std::vector<double> sigma;  // true daily vol used at each step
  std::vector<double> pred;   // planted predictable component of the normalized return
};

SyntheticPath simulate_asset(const SyntheticConfig& cfg, int n_days, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const size_t R = cfg.regimes.size();

  SyntheticPath path;
  path.ret.resize(n_days);
  path.sigma.resize(n_days);
  path.pred.resize(n_days);

  size_t regime = 0;
  double log_vol = std::log(regime_base_daily_vol(0));
  const double theta = 0.97;  // log-vol mean reversion
  const double rho = cfg.signal_strength;
  const double phi = cfg.signal_phi;

  double ar_state = 0.0;   // latent AR(1), unit stationary variance
  double prev_z = 0.0;     // previous standardized innovation (regime signal)
  for (int t = 0; t < n_days; ++t) {
    // regime switch
    if (R > 1 && unif(rng) > cfg.regimes[regime].persistence) {
      size_t next = static_cast<size_t>(unif(rng) * (R - 1));
      if (next >= regime) ++next;
      regime = std::min(next, R - 1);
    }
    // log-vol mean-reverts to the regime anchor; vol_of_vol is its stationary std
    const double anchor = std::log(regime_base_daily_vol(regime));
    log_vol = (1.0 - theta) * anchor + theta * log_vol +
              cfg.regimes[regime].vol_of_vol * std::sqrt(1.0 - theta * theta) * gauss(rng);
    const double sigma = std::exp(log_vol);

    const double z = gauss(rng);
    double predictable = 0.0;
    if (cfg.signal_kind == "ar1") {
      predictable = std::sqrt(rho) * ar_state;  // ar_state still holds a_{t-1}
    } else if (cfg.signal_kind == "regime") {
      // nonlinear in the previous shock, linearly uncorrelated with it
      predictable = std::sqrt(rho) * (prev_z * prev_z - 1.0) / std::sqrt(2.0);
    }
    const double z_norm = predictable + std::sqrt(1.0 - rho) * z;
    const double drift = cfg.regimes[regime].drift / kTradingDaysPerYear;
    double r = drift + sigma * z_norm;
    if (r < -0.95) r = -0.95;  // keep prices positive

    path.ret[t] = r;
    path.sigma[t] = sigma;
    path.pred[t] = predictable;

    ar_state = phi * ar_state + std::sqrt(1.0 - phi * phi) * gauss(rng);
    prev_z = z;
  }
  return path;
}

}  // namespace

PricePanel generate_synthetic_universe(const SyntheticConfig& cfg) {
  cfg.validate();

  PricePanel panel;
  const int start = parse_iso_date(cfg.start_date);
  int d = weekday(start) >= 5 ? next_weekday(start) : start;
  panel.dates.reserve(cfg.n_days);
  for (int t = 0; t < cfg.n_days; ++t) {
    panel.dates.push_back(d);
    d = next_weekday(d);
  }

  static const char* kGroups[] = {"Comdty", "FX", "Bond", "Index", "Energy"};
  for (int k = 0; k < cfg.n_assets; ++k) {
    char name[16];
    std::snprintf(name, sizeof(name), "SYN%02d", k);
    panel.tickers.emplace_back(name);
    panel.group[name] = kGroups[k % 5];
  }

  panel.close = MatrixXd::Zero(cfg.n_days, cfg.n_assets);
  for (int k = 0; k < cfg.n_assets; ++k) {
    std::mt19937_64 rng(cfg.rng_seed * 0x9e3779b97f4a7c15ull + 0xda3e39cb94b95bdbull +
                        static_cast<std::uint64_t>(k));
    auto path = simulate_asset(cfg, cfg.n_days, rng);
    double price = 100.0;
    for (int t = 0; t < cfg.n_days; ++t) {
      price *= 1.0 + path.ret[t];
      panel.close(t, k) = price;
    }
  }
  return panel;
}

double synthetic_oracle_sharpe(const SyntheticConfig& cfg, int mc_days) {
  SyntheticConfig mc = cfg;
  mc.n_assets = 1;
  mc.validate();
  std::mt19937_64 rng(cfg.rng_seed ^ 0x5bf0a8b1c96a5e37ull);
  auto path = simulate_asset(mc, mc_days, rng);

  // Reference positioning under exact vol targeting, w_t * r_{t+1}:
  //   ar1    -> sign(phi * r_t), the realizable AR(1) strategy
  //   regime -> sign of the planted component (latent upper bound)
  //   none   -> constant long
  const double sigma_tgt_daily = 0.10 / std::sqrt(kTradingDaysPerYear);
  auto sgn = [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); };
  std::vector<double> strat;
  strat.reserve(mc_days);
  for (int t = 0; t + 1 < mc_days; ++t) {
    double s = 1.0;
    if (cfg.signal_kind == "ar1")
      s = sgn(cfg.signal_phi * path.ret[t]);
    else if (cfg.signal_kind == "regime")
      s = sgn(path.pred[t + 1]);
    strat.push_back(s * sigma_tgt_daily / path.sigma[t] * path.ret[t + 1]);
  }
  double mean = 0;
  for (double x : strat) mean += x;
  mean /= strat.size();
  double var = 0;
  for (double x : strat) var += (x - mean) * (x - mean);
  var /= (strat.size() - 1);
  return mean / std::sqrt(var) * std::sqrt(kTradingDaysPerYear);
}

}  // namespace sbench
