#pragma once

// The training objective: negative annualized Sharpe ratio over pooled daily
// portfolio returns, L = -mean/sqrt(popvar + eps) * sqrt(252).

#include <vector>

#include "sbench/core.hpp"
#include "sbench/tape.hpp"

namespace sbench {

struct PooledReturns {
  VectorXd values;
  double epsilon = 1e-9;
};

inline PooledReturns pool_batch(const std::vector<VectorXd>& series, double epsilon = 1e-9) {
  Eigen::Index total = 0;
  for (const auto& s : series) {
    if (s.size() == 0) throw ConfigError("pool_batch: empty series");
    total += s.size();
  }
  if (total == 0) throw ConfigError("pool_batch: empty batch");
  PooledReturns out;
  out.epsilon = epsilon;
  out.values.resize(total);
  Eigen::Index at = 0;
  for (const auto& s : series) {
    out.values.segment(at, s.size()) = s;
    at += s.size();
  }
  return out;
}

// population (1/T) variance
inline double sharpe_loss(const PooledReturns& pooled) {
  const Eigen::Index n = pooled.values.size();
  if (n < 2) throw ConfigError("sharpe_loss: need at least 2 returns");
  const double mean = pooled.values.mean();
  const double var = (pooled.values.array() - mean).square().sum() / static_cast<double>(n);
  return -mean / std::sqrt(var + pooled.epsilon) * std::sqrt(kTradingDaysPerYear);
}

// same formula on the tape; `returns` may be any shape, all entries pooled
inline ad::Var sharpe_loss_tape(ad::Tape& t, ad::Var returns, double epsilon = 1e-9) {
  ad::Var m = t.mean(returns);
  ad::Var dev = t.add_scalar_var(returns, t.neg(m));
  ad::Var var = t.mean(t.mul(dev, dev));
  ad::Var denom = t.sqrt_(t.add_scalar(var, epsilon));
  return t.scale(t.div(m, denom), -std::sqrt(kTradingDaysPerYear));
}

}  // namespace sbench
