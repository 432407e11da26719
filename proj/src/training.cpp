#include "sbench/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "sbench/objective.hpp"

namespace sbench {

using models::BoundParams;
using models::ModelSpec;
using models::ParamSet;

FoldSchedule build_fold_schedule(const std::vector<int>& dates, int retrain_every_years,
                                 int initial_train_years) {
  if (dates.empty()) throw ConfigError("fold schedule: empty calendar");
  if (retrain_every_years < 1 || initial_train_years < 1)
    throw ConfigError("fold schedule: year counts must be >= 1");
  const int first_year = year_of(dates.front());
  const int last_year = year_of(dates.back());
  const int first_test_year = first_year + initial_train_years;
  if (first_test_year > last_year)
    throw ConfigError("fold schedule: not enough history for the initial training window");

  FoldSchedule out;
  for (int y = first_test_year; y <= last_year; y += retrain_every_years) {
    FoldSchedule::Fold f;
    f.train_start = dates.front();
    f.train_end = days_from_civil(y, 1, 1);
    f.test_start = f.train_end;
    f.test_end = days_from_civil(y + retrain_every_years, 1, 1);
    // truncate the final fold to the available data
    if (f.test_end > dates.back() + 1) f.test_end = dates.back() + 1;
    bool has_test = false;
    for (int d : dates)
      if (d >= f.test_start && d < f.test_end) {
        has_test = true;
        break;
      }
    if (has_test) out.folds.push_back(f);
  }
  if (out.folds.empty()) throw ConfigError("fold schedule: no test data after the initial window");
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_validation(const std::vector<int>& dates,
                                                               double val_fraction) {
  if (val_fraction <= 0 || val_fraction >= 1)
    throw ConfigError("split_validation: fraction must lie in (0,1)");
  if (dates.size() < 2) throw ConfigError("split_validation: need at least two dates");
  size_t n_val = static_cast<size_t>(std::floor(dates.size() * val_fraction));
  n_val = std::max<size_t>(n_val, 1);
  const size_t n_core = dates.size() - n_val;
  return {std::vector<int>(dates.begin(), dates.begin() + n_core),
          std::vector<int>(dates.begin() + n_core, dates.end())};
}

int TrainConfig::rule_burn_in(int seq_len) const {
  if (burn_in_rule == "fixed_21") return std::min(21, seq_len - 1);
  if (burn_in_rule == "quarter_seq_len") return seq_len / 4;
  throw ConfigError("unknown burn_in_rule: " + burn_in_rule);
}

void TrainConfig::validate() const {
  if (patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (top_s < 1 || top_s > n_seeds) throw ConfigError("train config: need 1 <= top_s <= n_seeds");
  if (batch_size < 1 || max_epochs < 1 || steps_per_epoch < 1)
    throw ConfigError("train config: batch/epoch settings must be >= 1");
  if (!(lr > 0)) throw ConfigError("train config: lr must be positive");
  if (!(clip_norm > 0)) throw ConfigError("train config: clip_norm must be positive");
  if (!(sigma_tgt > 0)) throw ConfigError("train config: sigma_tgt must be positive");
  rule_burn_in(64);  // validates the rule name
}

int ModelDataset::row_of(int serial_date) const {
  auto it = std::lower_bound(dates.begin(), dates.end(), serial_date);
  if (it == dates.end() || *it != serial_date) return -1;
  return static_cast<int>(it - dates.begin());
}

ModelDataset make_dataset(const FeaturePanel& features, const VolPanel& vol,
                          const ReturnPanel& returns, double sigma_tgt) {
  ModelDataset d;
  d.dates = features.dates;
  d.tickers = features.tickers;
  d.features = features.features;
  d.feat_present = features.present;
  const Eigen::Index T = features.present.rows(), K = features.present.cols();
  d.mult = make_missing(T, K);
  const double root = std::sqrt(kTradingDaysPerYear);
  for (Eigen::Index t = 0; t + 1 < T; ++t)
    for (Eigen::Index k = 0; k < K; ++k) {
      const double s = vol.sigma(t, k), rn = returns.r(t + 1, k);
      if (present(s) && present(rn)) d.mult(t, k) = sigma_tgt / (s * root) * rn;
    }
  return d;
}

namespace {

struct WindowRef {
  int end_row;
  int ticker;
};

// window fully present in features, multipliers defined on all emitted steps
bool window_valid(const ModelDataset& d, int end_row, int ticker, int seq_len, int burn_in,
                  bool need_mult) {
  if (end_row - seq_len + 1 < 0) return false;
  for (int s = end_row - seq_len + 1; s <= end_row; ++s)
    if (d.feat_present(s, ticker) != 1.0) return false;
  if (need_mult)
    for (int s = end_row - seq_len + 1 + burn_in; s <= end_row; ++s)
      if (missing(d.mult(s, ticker))) return false;
  return true;
}

// constants for one batch of windows: per-step [B x C] inputs
std::vector<ad::Var> window_inputs(ad::Tape& t, const ModelDataset& d,
                                   const std::vector<WindowRef>& batch, int seq_len) {
  const int B = static_cast<int>(batch.size());
  const int C = static_cast<int>(d.features.size());
  std::vector<ad::Var> steps;
  steps.reserve(seq_len);
  for (int s = 0; s < seq_len; ++s) {
    MatrixXd x(B, C);
    for (int b = 0; b < B; ++b) {
      const int row = batch[b].end_row - seq_len + 1 + s;
      for (int c = 0; c < C; ++c) x(b, c) = d.features[c](row, batch[b].ticker);
    }
    steps.push_back(t.constant(std::move(x)));
  }
  return steps;
}

std::vector<int> window_tickers(const std::vector<WindowRef>& batch) {
  std::vector<int> ids;
  ids.reserve(batch.size());
  for (const auto& w : batch) ids.push_back(w.ticker);
  return ids;
}

// pooled per-window strategy returns -> Sharpe loss on the tape
ad::Var batch_loss(ad::Tape& t, const ModelSpec& spec, const BoundParams& bp,
                   const ModelDataset& d, const std::vector<WindowRef>& batch, int burn_in,
                   double dropout, std::mt19937_64* rng, double epsilon) {
  auto xs = window_inputs(t, d, batch, spec.seq_len);
  auto fwd = models::model_forward(t, spec, bp, xs, window_tickers(batch), dropout, rng);
  const int B = static_cast<int>(batch.size());
  std::vector<ad::Var> returns;
  for (int s = burn_in; s < spec.seq_len; ++s) {
    const int idx = s - fwd.first_step;
    if (idx < 0) continue;
    MatrixXd m(B, 1);
    for (int b = 0; b < B; ++b)
      m(b, 0) = d.mult(batch[b].end_row - spec.seq_len + 1 + s, batch[b].ticker);
    returns.push_back(t.mul(fwd.signals[static_cast<size_t>(idx)], t.constant(std::move(m))));
  }
  if (returns.empty()) throw ConfigError("train: burn-in leaves no return samples");
  return sharpe_loss_tape(t, t.concat_cols(returns), epsilon);
}

struct AdamState {
  std::vector<MatrixXd> m, v;
  long step = 0;
};

void adam_update(ParamSet& params, const std::vector<MatrixXd>& grads, AdamState& st,
                 const TrainConfig& cfg) {
  if (st.m.empty()) {
    for (const auto& p : params.values) {
      st.m.push_back(MatrixXd::Zero(p.rows(), p.cols()));
      st.v.push_back(MatrixXd::Zero(p.rows(), p.cols()));
    }
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.values.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
    st.v[i] = cfg.beta2 * st.v[i].array().matrix() +
              (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    const MatrixXd mhat = st.m[i] / bc1;
    const MatrixXd vhat = st.v[i] / bc2;
    params.values[i].array() -=
        cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.adam_eps);
  }
}

// gradients in ParamSet order, zero-filled where unused; returns global norm
double collect_grads(ad::Tape& t, const BoundParams& bp, const ParamSet& params,
                     std::vector<MatrixXd>& out) {
  out.clear();
  out.reserve(params.values.size());
  double sq = 0;
  for (size_t i = 0; i < params.values.size(); ++i) {
    MatrixXd g = t.grad(bp.vars[i]);
    if (g.size() == 0) g = MatrixXd::Zero(params.values[i].rows(), params.values[i].cols());
    sq += g.squaredNorm();
    out.push_back(std::move(g));
  }
  return std::sqrt(sq);
}

}  // namespace

MatrixXd windowed_signals(const ModelSpec& spec, const ParamSet& params,
                          const ModelDataset& data, int row_begin, int row_end) {
  const int K = static_cast<int>(data.tickers.size());
  MatrixXd out = make_missing(row_end - row_begin, K);
  std::vector<WindowRef> pending;
  const int chunk = 256;
  auto flush = [&]() {
    if (pending.empty()) return;
    ad::Tape t;
    BoundParams bp = models::bind_params(t, params);
    auto xs = window_inputs(t, data, pending, spec.seq_len);
    auto fwd = models::model_forward(t, spec, bp, xs, window_tickers(pending), 0.0, nullptr);
    const MatrixXd& last = t.val(fwd.signals.back());
    for (size_t b = 0; b < pending.size(); ++b)
      out(pending[b].end_row - row_begin, pending[b].ticker) = last(static_cast<Eigen::Index>(b), 0);
    pending.clear();
  };
  for (int row = std::max(row_begin, spec.seq_len - 1); row < row_end; ++row) {
    for (int k = 0; k < K; ++k) {
      if (window_valid(data, row, k, spec.seq_len, 0, false)) {
        pending.push_back({row, k});
        if (static_cast<int>(pending.size()) == chunk) flush();
      }
    }
  }
  flush();
  return out;
}

RunRecord train_one(const ModelSpec& spec, const ModelDataset& data,
                    const FoldSchedule::Fold& fold, const TrainConfig& cfg,
                    std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  spec.validate();

  RunRecord rec;
  rec.seed = seed;

  const int L = spec.seq_len;
  const int burn_in = std::max(models::arch_burn_in(spec), cfg.rule_burn_in(L));
  if (burn_in >= L) throw ConfigError("train: burn-in consumes the whole window");

  // row ranges: train = [0, train_end), test = [test_start, test_end)
  const auto row_lb = [&](int serial) {
    return static_cast<int>(std::lower_bound(data.dates.begin(), data.dates.end(), serial) -
                            data.dates.begin());
  };
  const int train_lo = row_lb(fold.train_start), train_hi = row_lb(fold.train_end);
  const int test_lo = row_lb(fold.test_start), test_hi = row_lb(fold.test_end);
  if (train_hi - train_lo < 2) throw ConfigError("train: empty training range");

  // chronological validation tail on training dates
  std::vector<int> train_dates(data.dates.begin() + train_lo, data.dates.begin() + train_hi);
  auto [core_dates, val_dates] = split_validation(train_dates, 0.10);
  const int core_hi = train_lo + static_cast<int>(core_dates.size());

  const int K = static_cast<int>(data.tickers.size());
  std::vector<WindowRef> train_windows, val_windows;
  for (int row = train_lo + L - 1; row < core_hi; ++row)
    for (int k = 0; k < K; ++k)
      if (window_valid(data, row, k, L, burn_in, true)) train_windows.push_back({row, k});
  // validation windows stop one row short: their last multiplier uses r_{t+1},
  // which must not reach into the test range
  for (int row = core_hi; row < train_hi - 1; ++row)
    for (int k = 0; k < K; ++k)
      if (window_valid(data, row, k, L, burn_in, true)) val_windows.push_back({row, k});

  if (train_windows.size() < static_cast<size_t>(cfg.batch_size) || val_windows.empty()) {
    rec.failed = true;
    rec.fail_reason = "not enough fully present windows to train";
    return rec;
  }
  // deterministic thinning of the validation set
  if (static_cast<int>(val_windows.size()) > cfg.max_val_windows) {
    std::vector<WindowRef> kept;
    const double step = static_cast<double>(val_windows.size()) / cfg.max_val_windows;
    for (int i = 0; i < cfg.max_val_windows; ++i)
      kept.push_back(val_windows[static_cast<size_t>(i * step)]);
    val_windows = std::move(kept);
  }

  ParamSet params = models::init_params(spec, seed);
  std::mt19937_64 rng(seed ^ 0xa02bdbf7bb3c0a7ull);

  auto eval_val = [&](const ParamSet& ps) {
    std::vector<VectorXd> series;
    for (size_t at = 0; at < val_windows.size(); at += 256) {
      const size_t n = std::min<size_t>(256, val_windows.size() - at);
      std::vector<WindowRef> chunk(val_windows.begin() + at, val_windows.begin() + at + n);
      ad::Tape t;
      BoundParams bp = models::bind_params(t, ps);
      auto xs = window_inputs(t, data, chunk, L);
      auto fwd = models::model_forward(t, spec, bp, xs, window_tickers(chunk), 0.0, nullptr);
      for (int s = burn_in; s < L; ++s) {
        const int idx = s - fwd.first_step;
        const MatrixXd& sig = t.val(fwd.signals[static_cast<size_t>(idx)]);
        VectorXd r(n);
        for (size_t b = 0; b < n; ++b)
          r(static_cast<Eigen::Index>(b)) =
              sig(static_cast<Eigen::Index>(b), 0) *
              data.mult(chunk[b].end_row - L + 1 + s, chunk[b].ticker);
        series.push_back(std::move(r));
      }
    }
    return sharpe_loss(pool_batch(series, cfg.epsilon));
  };

  AdamState adam;
  ParamSet best = params;
  EarlyStopper stopper{cfg.patience};

  std::vector<size_t> order(train_windows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // forces a shuffle on first use

  const int steps =
      std::min<int>(cfg.steps_per_epoch,
                    static_cast<int>((train_windows.size() + cfg.batch_size - 1) / cfg.batch_size));
  bool diverged = false;

  for (int epoch = 1; epoch <= cfg.max_epochs && !diverged; ++epoch) {
    for (int step = 0; step < steps && !diverged; ++step) {
      std::vector<WindowRef> batch;
      batch.reserve(cfg.batch_size);
      for (int b = 0; b < cfg.batch_size; ++b) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        batch.push_back(train_windows[order[cursor++]]);
      }
      ad::Tape t;
      BoundParams bp = models::bind_params(t, params);
      ad::Var loss = batch_loss(t, spec, bp, data, batch, burn_in, spec.dropout, &rng,
                                cfg.epsilon);
      if (!std::isfinite(t.val(loss)(0, 0))) {
        diverged = true;
        break;
      }
      t.backward(loss);
      std::vector<MatrixXd> grads;
      const double norm = collect_grads(t, bp, params, grads);
      if (!std::isfinite(norm)) {
        diverged = true;
        break;
      }
      if (std::isfinite(cfg.clip_norm) && norm > cfg.clip_norm) {
        const double scale = cfg.clip_norm / norm;
        for (auto& g : grads) g *= scale;
      }
      adam_update(params, grads, adam, cfg);
    }
    if (diverged) break;

    const double val = eval_val(params);
    rec.epochs_run = epoch;
    if (!std::isfinite(val)) {
      diverged = true;
      break;
    }
    const bool was_best = val < stopper.best;
    if (stopper.should_stop(epoch, val)) break;
    if (was_best) best = params;
  }

  if (diverged || !std::isfinite(stopper.best)) {
    rec.failed = true;
    rec.fail_reason = "non-finite loss during training";
    return rec;
  }

  rec.params = std::move(best);
  rec.val_loss = stopper.best;
  rec.test_dates.assign(data.dates.begin() + test_lo, data.dates.begin() + test_hi);
  rec.test_signals = windowed_signals(spec, rec.params, data, test_lo, test_hi);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

SignalPanel ensemble_positions(const std::vector<RunRecord>& records, int top_s) {
  std::vector<const RunRecord*> ok;
  std::vector<std::string> failures;
  for (const auto& r : records) {
    if (r.failed)
      failures.push_back("seed " + std::to_string(r.seed) + ": " + r.fail_reason);
    else
      ok.push_back(&r);
  }
  if (static_cast<int>(ok.size()) < top_s) {
    std::string msg = "ensemble: only " + std::to_string(ok.size()) + " successful runs for top_s=" +
                      std::to_string(top_s);
    for (const auto& f : failures) msg += "; " + f;
    throw ValidationError(msg);
  }
  std::sort(ok.begin(), ok.end(), [](const RunRecord* a, const RunRecord* b) {
    if (a->val_loss != b->val_loss) return a->val_loss < b->val_loss;
    return a->seed < b->seed;
  });
  ok.resize(static_cast<size_t>(top_s));

  SignalPanel out;
  out.dates = ok[0]->test_dates;
  const Eigen::Index T = ok[0]->test_signals.rows(), K = ok[0]->test_signals.cols();
  out.yhat = make_missing(T, K);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index k = 0; k < K; ++k) {
      double sum = 0;
      bool all = true;
      for (const auto* r : ok) {
        if (missing(r->test_signals(t, k))) {
          all = false;
          break;
        }
        sum += r->test_signals(t, k);
      }
      if (all) out.yhat(t, k) = sum / top_s;
    }
  return out;
}

GradCheckReport gradient_check(const ModelSpec& spec, int batch_windows, int samples_per_block,
                               std::uint64_t seed, double fd_step_scale,
                               const ParamSet* params_override) {
  spec.validate();
  const int L = spec.seq_len, C = spec.n_features;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);

  // synthetic fixed instance: random feature windows and return multipliers
  std::vector<MatrixXd> xs_vals;
  for (int s = 0; s < L; ++s) {
    MatrixXd x(batch_windows, C);
    for (int b = 0; b < batch_windows; ++b)
      for (int c = 0; c < C; ++c) x(b, c) = g(rng);
    xs_vals.push_back(std::move(x));
  }
  std::vector<MatrixXd> mult;
  for (int s = 0; s < L; ++s) {
    MatrixXd m(batch_windows, 1);
    for (int b = 0; b < batch_windows; ++b) m(b, 0) = 0.01 * g(rng);
    mult.push_back(std::move(m));
  }
  std::vector<int> tickers(batch_windows);
  for (int b = 0; b < batch_windows; ++b) tickers[b] = b % spec.n_tickers;
  const int burn_in = std::max(models::arch_burn_in(spec), L / 4);

  ParamSet params = params_override ? *params_override
                                    : models::init_params(spec, seed ^ 0x5851f42d4c957f2dull);

  auto eval = [&](const ParamSet& ps, bool want_grads, std::vector<MatrixXd>* grads) {
    ad::Tape t;
    BoundParams bp = models::bind_params(t, ps);
    std::vector<ad::Var> xs;
    for (const auto& x : xs_vals) xs.push_back(t.constant(x));
    auto fwd = models::model_forward(t, spec, bp, xs, tickers, 0.0, nullptr);
    std::vector<ad::Var> returns;
    for (int s = burn_in; s < L; ++s) {
      const int idx = s - fwd.first_step;
      returns.push_back(t.mul(fwd.signals[static_cast<size_t>(idx)], t.constant(mult[s])));
    }
    ad::Var loss = sharpe_loss_tape(t, t.concat_cols(returns), 1e-9);
    const double value = t.val(loss)(0, 0);
    if (want_grads) {
      t.backward(loss);
      grads->clear();
      for (size_t i = 0; i < ps.values.size(); ++i) {
        MatrixXd gm = t.grad(bp.vars[i]);
        if (gm.size() == 0) gm = MatrixXd::Zero(ps.values[i].rows(), ps.values[i].cols());
        grads->push_back(std::move(gm));
      }
    }
    return value;
  };

  std::vector<MatrixXd> analytic;
  eval(params, true, &analytic);

  GradCheckReport report;
  std::mt19937_64 pick(seed ^ 0x94d049bb133111ebull);
  for (size_t i = 0; i < params.values.size(); ++i) {
    GradCheckBlock block;
    block.name = params.names[i];
    const Eigen::Index sz = params.values[i].size();
    std::vector<Eigen::Index> idx(static_cast<size_t>(sz));
    for (Eigen::Index j = 0; j < sz; ++j) idx[static_cast<size_t>(j)] = j;
    if (sz > samples_per_block) {
      std::shuffle(idx.begin(), idx.end(), pick);
      idx.resize(static_cast<size_t>(samples_per_block));
    }
    for (Eigen::Index flat : idx) {
      double* entry = params.values[i].data() + flat;
      const double orig = *entry;
      const double h = fd_step_scale * std::max(1.0, std::abs(orig));
      *entry = orig + h;
      const double up = eval(params, false, nullptr);
      *entry = orig - h;
      const double down = eval(params, false, nullptr);
      *entry = orig;
      const double fd = (up - down) / (2 * h);
      const double an = analytic[i].data()[flat];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5});
      block.max_rel_err = std::max(block.max_rel_err, rel);
      ++block.checked;
    }
    if (block.max_rel_err > report.max_rel_err) {
      report.max_rel_err = block.max_rel_err;
      report.worst_block = block.name;
    }
    report.blocks.push_back(std::move(block));
  }
  return report;
}

}  // namespace sbench
