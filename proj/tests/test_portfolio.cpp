#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sbench/portfolio.hpp"

using namespace sbench;

namespace {

// random fully-populated panels for property checks
struct Fixture {
  SignalPanel signals;
  VolPanel vol;
  ReturnPanel returns;
};

Fixture random_fixture(int T, int K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.005, 0.03);
  Fixture f;
  f.signals.tickers.resize(K);
  f.vol.tickers.resize(K);
  f.returns.tickers.resize(K);
  for (int k = 0; k < K; ++k)
    f.signals.tickers[k] = f.vol.tickers[k] = f.returns.tickers[k] = "T" + std::to_string(k);
  for (int t = 0; t < T; ++t) {
    f.signals.dates.push_back(t);
    f.vol.dates.push_back(t);
    f.returns.dates.push_back(t);
  }
  f.signals.yhat = MatrixXd(T, K);
  f.vol.sigma = MatrixXd(T, K);
  f.returns.r = MatrixXd(T, K);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) {
      f.signals.yhat(t, k) = std::tanh(g(rng));
      f.vol.sigma(t, k) = u(rng);
      f.returns.r(t, k) = 0.01 * g(rng);
    }
  f.vol.vs_factor = f.vol.sigma.cwiseInverse();
  f.vol.mu = MatrixXd::Zero(T, K);
  return f;
}

}  // namespace

TEST_CASE("position_weights unit convention") {
  // yhat = 0.5, sigma_tgt = 0.10 annualized, sigma_daily = 0.20/sqrt(252) -> w = 0.25
  SignalPanel s;
  s.dates = {0};
  s.tickers = {"A"};
  s.yhat = MatrixXd::Constant(1, 1, 0.5);
  VolPanel v;
  v.dates = {0};
  v.tickers = {"A"};
  v.sigma = MatrixXd::Constant(1, 1, 0.20 / std::sqrt(252.0));
  v.vs_factor = v.sigma.cwiseInverse();
  auto w = position_weights(s, v, 0.10);
  CHECK(w.w(0, 0) == doctest::Approx(0.25).epsilon(1e-14));

  SUBCASE("zero signal, zero weight") {
    s.yhat(0, 0) = 0.0;
    CHECK(position_weights(s, v, 0.10).w(0, 0) == 0.0);
  }
  SUBCASE("full short at target vol") {
    s.yhat(0, 0) = -1.0;
    v.sigma(0, 0) = 0.10 / std::sqrt(252.0);  // annualized vol = 0.10
    v.vs_factor = v.sigma.cwiseInverse();
    CHECK(position_weights(s, v, 0.10).w(0, 0) == doctest::Approx(-1.0).epsilon(1e-14));
  }
  SUBCASE("invalid target is a config error") {
    CHECK_THROWS_AS(position_weights(s, v, 0.0), ConfigError);
  }
}

TEST_CASE("strategy_returns alignment and averaging") {
  auto f = random_fixture(6, 3, 11);
  auto w = position_weights(f.signals, f.vol, 0.10);
  auto sr = strategy_returns(w, f.returns);

  SUBCASE("w = 1 replicates the asset") {
    SignalPanel ones = f.signals;
    ones.yhat.setOnes();
    VolPanel unit = f.vol;
    unit.sigma.setConstant(0.10 / std::sqrt(252.0));
    unit.vs_factor = unit.sigma.cwiseInverse();
    auto w1 = position_weights(ones, unit, 0.10);
    auto sr1 = strategy_returns(w1, f.returns);
    for (int t = 1; t < 6; ++t)
      for (int k = 0; k < 3; ++k)
        CHECK(sr1.per_asset(t, k) == doctest::Approx(f.returns.r(t, k)).epsilon(1e-12));
  }

  SUBCASE("stated product example") {
    // w = 0.5 taken at t, next-day return -0.02 -> strategy return -0.01
    WeightPanel wp;
    wp.dates = {0, 1};
    wp.tickers = {"A"};
    wp.w = MatrixXd::Constant(2, 1, 0.5);
    ReturnPanel rp;
    rp.dates = {0, 1};
    rp.tickers = {"A"};
    rp.r = MatrixXd::Constant(2, 1, -0.02);
    auto out = strategy_returns(wp, rp);
    CHECK(out.per_asset(1, 0) == doctest::Approx(-0.01).epsilon(1e-14));
  }

  SUBCASE("portfolio is the cross-sectional mean (brute force oracle)") {
    for (int t = 1; t < 6; ++t) {
      double sum = 0;
      int n = 0;
      for (int k = 0; k < 3; ++k) {
        REQUIRE(present(sr.per_asset(t, k)));
        sum += sr.per_asset(t, k);
        ++n;
      }
      CHECK(sr.portfolio(t) == doctest::Approx(sum / n).epsilon(1e-13));
      CHECK(sr.active(t) == n);
    }
  }
}

TEST_CASE("net_returns") {
  auto f = random_fixture(40, 2, 13);
  auto w = position_weights(f.signals, f.vol, 0.10);
  auto sr = strategy_returns(w, f.returns);

  SUBCASE("zero cost reproduces gross exactly") {
    auto net = net_returns(sr, w, {0.0, 0.0});
    for (int t = 1; t < 40; ++t) CHECK(net(t) == sr.portfolio(t));
  }

  SUBCASE("single asset entering from flat pays |w| on day one") {
    WeightPanel wp;
    wp.dates = {0, 1};
    wp.tickers = {"A"};
    wp.w = MatrixXd(2, 1);
    wp.w << 1.0, 1.0;
    ReturnPanel rp;
    rp.dates = {0, 1};
    rp.tickers = {"A"};
    rp.r = MatrixXd::Constant(2, 1, 0.0);
    auto g = strategy_returns(wp, rp);
    auto net = net_returns(g, wp, {0.001});  // 10 bps
    CHECK(net(1) == doctest::Approx(g.portfolio(1) - 0.001).epsilon(1e-14));
  }

  SUBCASE("matches the brute-force double loop") {
    std::vector<double> costs = {0.0005, 0.0012};
    auto net = net_returns(sr, w, costs);
    for (int t = 1; t < 40; ++t) {
      double charge = 0;
      for (int k = 0; k < 2; ++k) {
        const double prev = t >= 2 ? w.w(t - 2, k) : 0.0;
        charge += costs[k] * std::abs(w.w(t - 1, k) - prev);
      }
      CHECK(net(t) ==
            doctest::Approx(sr.portfolio(t) - charge / sr.active(t)).epsilon(1e-12));
    }
  }

  SUBCASE("negative cost rejected") {
    CHECK_THROWS_AS(net_returns(sr, w, {-0.1, 0.0}), ConfigError);
  }

  SUBCASE("monotone in each cost") {
    auto net_lo = net_returns(sr, w, {0.0001, 0.0});
    auto net_hi = net_returns(sr, w, {0.0010, 0.0});
    double cum_lo = 0, cum_hi = 0;
    for (int t = 1; t < 40; ++t) {
      cum_lo += net_lo(t);
      cum_hi += net_hi(t);
    }
    CHECK(cum_hi <= cum_lo);
  }
}

TEST_CASE("turnover") {
  SUBCASE("constant weights have zero turnover after entry") {
    WeightPanel w;
    w.dates = {0, 1, 2, 3};
    w.tickers = {"A"};
    w.w = MatrixXd::Constant(4, 1, 0.7);
    auto ts = turnover(w);
    CHECK(ts.daily(0) == doctest::Approx(0.7));  // entering from flat
    for (int t = 1; t < 4; ++t) CHECK(ts.daily(t) == 0.0);
  }

  SUBCASE("alternating +-1 gives daily turnover 2") {
    WeightPanel w;
    w.tickers = {"A"};
    w.w = MatrixXd(6, 1);
    for (int t = 0; t < 6; ++t) {
      w.w(t, 0) = t % 2 == 0 ? 1.0 : -1.0;
      w.dates.push_back(t);
    }
    auto ts = turnover(w);
    for (int t = 1; t < 6; ++t) CHECK(ts.daily(t) == doctest::Approx(2.0));
  }

  SUBCASE("matches direct recomputation on a random panel") {
    auto f = random_fixture(30, 3, 17);
    auto w = position_weights(f.signals, f.vol, 0.10);
    auto ts = turnover(w);
    double total = 0, gross = 0;
    for (int t = 0; t < 30; ++t) {
      double tau = 0;
      for (int k = 0; k < 3; ++k) {
        const double prev = t >= 1 ? w.w(t - 1, k) : 0.0;
        tau += std::abs(w.w(t, k) - prev);
        gross += std::abs(w.w(t, k));
      }
      CHECK(ts.daily(t) == doctest::Approx(tau).epsilon(1e-13));
      total += tau;
    }
    CHECK(ts.annualized == doctest::Approx(total / 30.0 * 252.0).epsilon(1e-13));
    CHECK(ts.xgmv == doctest::Approx(total / (gross / 30.0)).epsilon(1e-12));
  }
}

TEST_CASE("breakeven costs") {
  SUBCASE("stated ratio example") {
    // cumulative gross 0.10 over total turnover 100 -> 10 bps
    WeightPanel w;
    w.tickers = {"A"};
    ReturnPanel r;
    r.tickers = {"A"};
    const int T = 101;
    w.w = MatrixXd::Zero(T, 1);
    r.r = MatrixXd::Zero(T, 1);
    for (int t = 0; t < T; ++t) {
      w.dates.push_back(t);
      r.dates.push_back(t);
    }
    // weights alternate 0 <-> 1 to accumulate turnover 100; plant gross 0.10
    for (int t = 0; t < T - 1; ++t) w.w(t, 0) = t % 2 == 0 ? 1.0 : 0.0;
    double planted = 0;
    for (int t = 1; t < T; ++t)
      if (w.w(t - 1, 0) == 1.0) {
        r.r(t, 0) = 0.002;
        planted += 0.002;
      }
    auto sr = strategy_returns(w, r);
    auto rows = breakeven_costs(sr, w);
    double tau = 0;
    double prev = 0;
    for (int t = 0; t < T; ++t) {
      tau += std::abs(w.w(t, 0) - prev);
      prev = w.w(t, 0);
    }
    CHECK(rows[0].cstar_bps == doctest::Approx(planted / tau * 1e4).epsilon(1e-12));
  }

  SUBCASE("identity: charging c* zeroes cumulative net PnL per asset") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      auto f = random_fixture(60, 3, seed);
      auto w = position_weights(f.signals, f.vol, 0.10);
      auto sr = strategy_returns(w, f.returns);
      auto rows = breakeven_costs(sr, w);
      for (int k = 0; k < 3; ++k) {
        REQUIRE(present(rows[k].cstar_bps));
        const double c = rows[k].cstar_bps / 1e4;
        double cum = 0;
        double prev = 0;
        for (int t = 0; t < 60; ++t) {
          if (t >= 1 && present(sr.per_asset(t, k))) cum += sr.per_asset(t, k);
          const double cur = w.w(t, k);
          cum -= c * std::abs(cur - prev);
          prev = cur;
        }
        CHECK(std::abs(cum) < 1e-12);
      }
    }
  }

  SUBCASE("negative cumulative gross gives negative c*") {
    WeightPanel w;
    w.tickers = {"A"};
    ReturnPanel r;
    r.tickers = {"A"};
    w.w = MatrixXd::Constant(10, 1, 1.0);
    r.r = MatrixXd::Constant(10, 1, -0.01);
    for (int t = 0; t < 10; ++t) {
      w.dates.push_back(t);
      r.dates.push_back(t);
    }
    auto sr = strategy_returns(w, r);
    auto rows = breakeven_costs(sr, w);
    CHECK(rows[0].cstar_bps < 0.0);
  }

  SUBCASE("zero turnover reports missing") {
    WeightPanel w;
    w.tickers = {"A"};
    w.w = MatrixXd::Zero(5, 1);
    ReturnPanel r;
    r.tickers = {"A"};
    r.r = MatrixXd::Constant(5, 1, 0.01);
    for (int t = 0; t < 5; ++t) {
      w.dates.push_back(t);
      r.dates.push_back(t);
    }
    auto sr = strategy_returns(w, r);
    auto rows = breakeven_costs(sr, w);
    CHECK(missing(rows[0].cstar_bps));
  }

  SUBCASE("portfolio-level breakeven zeroes the net portfolio PnL") {
    auto f = random_fixture(80, 4, 99);
    auto w = position_weights(f.signals, f.vol, 0.10);
    auto sr = strategy_returns(w, f.returns);
    const double cstar = portfolio_breakeven(sr, w);
    REQUIRE(present(cstar));
    auto net = net_returns(sr, w, std::vector<double>(4, cstar));
    double cum = 0;
    for (int t = 1; t < 80; ++t) cum += net(t);
    CHECK(std::abs(cum) < 1e-12);
  }
}

TEST_CASE("signal scaling equivariance at fixed vol") {
  auto f = random_fixture(25, 2, 7);
  f.signals.yhat *= 0.4;  // keep |yhat| <= 0.5 so doubling stays in range
  auto w1 = position_weights(f.signals, f.vol, 0.10);
  SignalPanel doubled = f.signals;
  doubled.yhat *= 2.0;
  auto w2 = position_weights(doubled, f.vol, 0.10);
  CHECK((w2.w - 2.0 * w1.w).cwiseAbs().maxCoeff() < 1e-14);
  auto r1 = strategy_returns(w1, f.returns);
  auto r2 = strategy_returns(w2, f.returns);
  for (int t = 1; t < 25; ++t)
    for (int k = 0; k < 2; ++k)
      CHECK(r2.per_asset(t, k) == doctest::Approx(2.0 * r1.per_asset(t, k)).epsilon(1e-12));
}

TEST_CASE("passive equivalence: constant +1 signals equal the dedicated benchmark") {
  auto f = random_fixture(30, 3, 23);
  auto passive = passive_signals(f.vol);
  SignalPanel manual = f.signals;
  manual.yhat.setOnes();
  auto wp = position_weights(passive, f.vol, 0.10);
  auto wm = position_weights(manual, f.vol, 0.10);
  CHECK((wp.w.array() == wm.w.array()).all());
  auto sp = strategy_returns(wp, f.returns);
  auto sm = strategy_returns(wm, f.returns);
  for (int t = 1; t < 30; ++t) CHECK(sp.portfolio(t) == sm.portfolio(t));
}
