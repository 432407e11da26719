#include "sbench/runner.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <set>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace sbench {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using models::ModelSpec;

namespace {

std::string slug(const std::string& name) {
  std::string out;
  for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

std::string fmt(double v, int prec = 4) {
  if (!present(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

int worker_count(int jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SBENCH_WORKERS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) n = parsed;
  }
  if (n < 1) n = 1;
  return std::min(n, std::max(jobs, 1));
}

void parallel_for(int jobs, const std::function<void(int)>& fn) {
  const int workers = worker_count(jobs);
  if (workers == 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

// --- config ------------------------------------------------------------------

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  cfg.config_text = text;

  if (j.contains("data")) {
    const auto& d = j["data"];
    cfg.data_kind = d.value("kind", cfg.data_kind);
    cfg.prices_csv = d.value("prices_csv", "");
    cfg.groups_csv = d.value("groups_csv", "");
    cfg.costs_csv = d.value("costs_csv", "");
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      cfg.synthetic.n_assets = s.value("n_assets", cfg.synthetic.n_assets);
      cfg.synthetic.n_days = s.value("n_days", cfg.synthetic.n_days);
      cfg.synthetic.rng_seed = s.value("rng_seed", cfg.synthetic.rng_seed);
      cfg.synthetic.signal_kind = s.value("signal_kind", cfg.synthetic.signal_kind);
      cfg.synthetic.signal_strength =
          s.value("signal_strength", cfg.synthetic.signal_strength);
      cfg.synthetic.signal_phi = s.value("signal_phi", cfg.synthetic.signal_phi);
      cfg.synthetic.start_date = s.value("start_date", cfg.synthetic.start_date);
      if (s.contains("regimes")) {
        cfg.synthetic.regimes.clear();
        for (const auto& r : s["regimes"]) {
          RegimeSpec rs;
          rs.persistence = r.value("persistence", rs.persistence);
          rs.drift = r.value("drift", rs.drift);
          rs.vol_of_vol = r.value("vol_of_vol", rs.vol_of_vol);
          cfg.synthetic.regimes.push_back(rs);
        }
      }
    }
  }

  if (j.contains("features")) {
    const auto& f = j["features"];
    cfg.features.ewma_span = f.value("ewma_span", cfg.features.ewma_span);
    cfg.features.min_obs = f.value("min_obs", cfg.features.min_obs);
    cfg.features.sigma_floor = f.value("sigma_floor", cfg.features.sigma_floor);
    cfg.features.target_clip = f.value("target_clip", cfg.features.target_clip);
    if (f.contains("horizons")) cfg.features.horizons = f["horizons"].get<std::vector<int>>();
    if (f.contains("macd_pairs")) {
      cfg.features.macd_pairs.clear();
      for (const auto& p : f["macd_pairs"])
        cfg.features.macd_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
  }

  if (j.contains("folds")) {
    cfg.retrain_every_years = j["folds"].value("retrain_every_years", cfg.retrain_every_years);
    cfg.initial_train_years = j["folds"].value("initial_train_years", cfg.initial_train_years);
  }

  if (j.contains("training")) {
    const auto& t = j["training"];
    cfg.training.lr = t.value("lr", cfg.training.lr);
    cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
    cfg.training.max_epochs = t.value("max_epochs", cfg.training.max_epochs);
    cfg.training.patience = t.value("patience", cfg.training.patience);
    cfg.training.clip_norm = t.value("clip_norm", cfg.training.clip_norm);
    cfg.training.n_seeds = t.value("n_seeds", cfg.training.n_seeds);
    cfg.training.top_s = t.value("top_s", cfg.training.top_s);
    cfg.training.burn_in_rule = t.value("burn_in_rule", cfg.training.burn_in_rule);
    cfg.training.steps_per_epoch = t.value("steps_per_epoch", cfg.training.steps_per_epoch);
    cfg.training.max_val_windows = t.value("max_val_windows", cfg.training.max_val_windows);
    cfg.training.sigma_tgt = t.value("sigma_tgt", cfg.training.sigma_tgt);
  }

  if (j.contains("models")) {
    for (const auto& m : j["models"]) {
      ModelRunSpec spec;
      spec.name = m.value("name", "");
      if (!m.contains("arch")) throw ConfigError("model entry missing arch");
      spec.spec.arch = models::arch_from_string(m["arch"].get<std::string>());
      if (spec.name.empty()) spec.name = models::arch_name(spec.spec.arch);
      spec.spec.hidden_dim = m.value("hidden_dim", spec.spec.hidden_dim);
      spec.spec.layers = m.value("layers", spec.spec.layers);
      spec.spec.seq_len = m.value("seq_len", spec.spec.seq_len);
      spec.spec.dropout = m.value("dropout", spec.spec.dropout);
      spec.spec.embed_dim = m.value("embed_dim", spec.spec.embed_dim);
      spec.spec.patch_len = m.value("patch_len", spec.spec.patch_len);
      spec.spec.stride = m.value("stride", spec.spec.stride);
      spec.spec.heads = m.value("heads", spec.spec.heads);
      spec.spec.ssm_state = m.value("ssm_state", spec.spec.ssm_state);
      if (m.contains("extras"))
        for (const auto& [k, v] : m["extras"].items())
          spec.spec.extras[k] = v.get<double>();
      if (m.contains("grid"))
        for (const auto& [k, v] : m["grid"].items())
          spec.grid[k] = v.get<std::vector<double>>();
      cfg.models.push_back(std::move(spec));
    }
  }

  if (j.contains("subperiods")) {
    for (const auto& p : j["subperiods"]) {
      PeriodSpec ps;
      ps.label = p[0].get<std::string>();
      ps.start = parse_iso_date(p[1].get<std::string>());
      ps.end = parse_iso_date(p[2].get<std::string>());
      cfg.subperiods.push_back(ps);
    }
  }

  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.grid_cap = j.value("grid_cap", cfg.grid_cap);
  return cfg;
}

void RunConfig::validate() const {
  if (data_kind != "synthetic" && data_kind != "csv")
    throw ConfigError("data.kind must be synthetic or csv");
  if (data_kind == "csv") {
    if (prices_csv.empty()) throw ConfigError("data.prices_csv required for csv data");
    if (!fs::exists(prices_csv)) throw ConfigError("prices_csv does not exist: " + prices_csv);
    if (!groups_csv.empty() && !fs::exists(groups_csv))
      throw ConfigError("groups_csv does not exist: " + groups_csv);
    if (!costs_csv.empty() && !fs::exists(costs_csv))
      throw ConfigError("costs_csv does not exist: " + costs_csv);
  } else {
    synthetic.validate();
  }
  if (models.empty()) throw ConfigError("no models configured");
  for (const auto& m : models) m.spec.validate();
  training.validate();
  if (output_dir.empty()) throw ConfigError("output_dir required");
}

// --- grid ---------------------------------------------------------------------

namespace {

void apply_axis(GridVariant& v, const std::string& key, double value) {
  if (key == "lr")
    v.train.lr = value;
  else if (key == "batch_size")
    v.train.batch_size = static_cast<int>(value);
  else if (key == "hidden_dim")
    v.spec.hidden_dim = static_cast<int>(value);
  else if (key == "layers")
    v.spec.layers = static_cast<int>(value);
  else if (key == "seq_len")
    v.spec.seq_len = static_cast<int>(value);
  else if (key == "dropout")
    v.spec.dropout = value;
  else if (key == "embed_dim")
    v.spec.embed_dim = static_cast<int>(value);
  else if (key == "patch_len")
    v.spec.patch_len = static_cast<int>(value);
  else if (key == "stride")
    v.spec.stride = static_cast<int>(value);
  else if (key == "heads")
    v.spec.heads = static_cast<int>(value);
  else if (key == "ssm_state")
    v.spec.ssm_state = static_cast<int>(value);
  else if (key.rfind("extras.", 0) == 0)
    v.spec.extras[key.substr(7)] = value;
  else
    throw ConfigError("unknown grid axis: " + key);
  v.assignment[key] = value;
}

}  // namespace

std::vector<GridVariant> expand_grid(const ModelRunSpec& model, const TrainConfig& base,
                                     int cap) {
  std::vector<std::pair<std::string, std::vector<double>>> axes(model.grid.begin(),
                                                                model.grid.end());
  size_t total = 1;
  for (const auto& [k, vals] : axes) {
    if (vals.empty()) throw ConfigError("empty grid axis: " + k);
    total *= vals.size();
  }
  if (total > static_cast<size_t>(cap))
    throw ConfigError("grid for " + model.name + " expands to " + std::to_string(total) +
                      " variants, over the cap of " + std::to_string(cap));

  std::vector<GridVariant> out;
  out.reserve(total);
  std::vector<size_t> idx(axes.size(), 0);
  while (true) {
    GridVariant v;
    v.spec = model.spec;
    v.train = base;
    for (size_t a = 0; a < axes.size(); ++a)
      apply_axis(v, axes[a].first, axes[a].second[idx[a]]);
    out.push_back(std::move(v));
    size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
    }
    if (a == axes.size()) break;
  }
  return out;
}

// --- store --------------------------------------------------------------------

const ModelResult* ResultStore::find(const std::string& name) const {
  for (const auto& m : models)
    if (m.name == name) return &m;
  return nullptr;
}

namespace {

json metrics_to_json(const ModelResult& m) {
  json j;
  j["name"] = m.name;
  if (!m.error.empty()) j["error"] = m.error;
  json flat;
  for (const auto& [k, v] : m.metrics.flat()) {
    if (present(v))
      flat[k] = v;
    else
      flat[k] = nullptr;
  }
  j["metrics"] = flat;
  json per_period;
  for (const auto& [k, v] : m.metrics.per_period)
    per_period[k] = present(v) ? json(v) : json(nullptr);
  j["per_period"] = per_period;
  json per_year;
  for (const auto& [k, v] : m.metrics.per_year)
    per_year[std::to_string(k)] = present(v) ? json(v) : json(nullptr);
  j["per_year"] = per_year;
  j["portfolio_cstar_bps"] =
      present(m.portfolio_cstar_bps) ? json(m.portfolio_cstar_bps) : json(nullptr);
  if (!m.chosen.empty()) {
    json chosen;
    for (const auto& [k, v] : m.chosen) chosen[k] = v;
    j["chosen"] = chosen;
  }
  return j;
}

void metrics_from_json(const json& j, ModelResult& m) {
  m.name = j.value("name", "");
  m.error = j.value("error", "");
  auto get = [&](const char* key) {
    if (!j["metrics"].contains(key) || j["metrics"][key].is_null()) return kMissing;
    return j["metrics"][key].get<double>();
  };
  m.metrics.cagr = get("CAGR");
  m.metrics.ann_return = get("Ann. Ret.");
  m.metrics.sharpe = get("SR");
  m.metrics.t_hac = get("t (HAC)");
  m.metrics.hit_rate = get("Hit");
  m.metrics.turnover_ann = get("Turnover");
  m.metrics.xgmv = get("xGMV");
  m.metrics.info_ratio = get("Info. Ratio");
  m.metrics.t_hac_vs_passive = get("t (HAC) v Passive");
  m.metrics.corr_vs_passive = get("Corr. v Passive");
  m.metrics.max_dd = get("Max DD");
  m.metrics.calmar = get("Calmar");
  m.metrics.worst_3m_sharpe = get("Worst 3m Sharpe");
  m.metrics.min_annual_sharpe = get("Min Ann. Sharpe");
  m.metrics.cvar_5 = get("CVaR 5%");
  if (j.contains("per_period"))
    for (const auto& [k, v] : j["per_period"].items())
      m.metrics.per_period[k] = v.is_null() ? kMissing : v.get<double>();
  if (j.contains("per_year"))
    for (const auto& [k, v] : j["per_year"].items())
      m.metrics.per_year[std::stoi(k)] = v.is_null() ? kMissing : v.get<double>();
  if (j.contains("portfolio_cstar_bps") && !j["portfolio_cstar_bps"].is_null())
    m.portfolio_cstar_bps = j["portfolio_cstar_bps"].get<double>();
  if (j.contains("chosen"))
    for (const auto& [k, v] : j["chosen"].items()) m.chosen[k] = v.get<double>();
}

std::string csv_cell(double v) {
  if (!present(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void ResultStore::save(const std::string& dir) const {
  fs::create_directories(dir);
  fs::create_directories(dir + "/metrics");
  fs::create_directories(dir + "/series");
  fs::create_directories(dir + "/weights");
  fs::create_directories(dir + "/breakeven");

  {
    std::ofstream out(dir + "/config.json", std::ios::trunc);
    out << config_text;
  }
  {
    json meta;
    json jd = json::array();
    for (int d : dates) jd.push_back(format_iso_date(d));
    meta["dates"] = jd;
    meta["tickers"] = tickers;
    json jp = json::array();
    for (const auto& p : periods)
      jp.push_back({p.label, format_iso_date(p.start), format_iso_date(p.end)});
    meta["periods"] = jp;
    std::ofstream out(dir + "/meta.json", std::ios::trunc);
    out << meta.dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/ledger.csv", std::ios::trunc);
    out << "model,fold,seed,val_loss,epochs,wall_seconds,status\n";
    for (const auto& row : ledger)
      out << row.model << "," << row.fold << "," << row.seed << "," << csv_cell(row.val_loss)
          << "," << row.epochs << "," << csv_cell(row.wall_seconds) << "," << row.status
          << "\n";
  }
  for (const auto& m : models) {
    const std::string tag = slug(m.name);
    {
      std::ofstream out(dir + "/metrics/" + tag + ".json", std::ios::trunc);
      out << metrics_to_json(m).dump(2) << "\n";
    }
    {
      std::ofstream out(dir + "/series/" + tag + ".csv", std::ios::trunc);
      out << "date,gross,net\n";
      for (size_t i = 0; i < dates.size(); ++i)
        out << format_iso_date(dates[i]) << ","
            << csv_cell(m.gross.size() ? m.gross(static_cast<Eigen::Index>(i)) : kMissing)
            << ","
            << csv_cell(m.net.size() ? m.net(static_cast<Eigen::Index>(i)) : kMissing)
            << "\n";
    }
    {
      std::ofstream out(dir + "/weights/" + tag + ".csv", std::ios::trunc);
      out << "date";
      for (const auto& t : tickers) out << "," << t;
      out << "\n";
      for (size_t i = 0; i < dates.size(); ++i) {
        out << format_iso_date(dates[i]);
        for (Eigen::Index k = 0; k < m.weights.cols(); ++k)
          out << "," << csv_cell(m.weights(static_cast<Eigen::Index>(i), k));
        out << "\n";
      }
    }
    {
      std::ofstream out(dir + "/breakeven/" + tag + ".csv", std::ios::trunc);
      out << "Ticker,Gross (ann.),Turnover (ann.),c* (bps)\n";
      for (const auto& row : m.breakeven)
        out << row.ticker << "," << csv_cell(row.gross_ann) << ","
            << csv_cell(row.turnover_ann) << "," << csv_cell(row.cstar_bps) << "\n";
    }
  }
}

ResultStore ResultStore::load(const std::string& dir) {
  ResultStore store;
  {
    std::ifstream in(dir + "/meta.json");
    if (!in) throw ValidationError("not a result store (missing meta.json): " + dir);
    json meta = json::parse(in);
    for (const auto& d : meta["dates"]) store.dates.push_back(parse_iso_date(d));
    store.tickers = meta["tickers"].get<std::vector<std::string>>();
    if (meta.contains("periods"))
      for (const auto& p : meta["periods"])
        store.periods.push_back({p[0].get<std::string>(),
                                 parse_iso_date(p[1].get<std::string>()),
                                 parse_iso_date(p[2].get<std::string>())});
  }
  {
    std::ifstream in(dir + "/config.json");
    if (in) {
      std::stringstream ss;
      ss << in.rdbuf();
      store.config_text = ss.str();
    }
  }
  // models in deterministic (sorted path) order, Passive pinned first below
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir + "/metrics"))
    files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    ModelResult m;
    metrics_from_json(json::parse(in), m);
    const std::string tag = slug(m.name);
    {
      std::ifstream s(dir + "/series/" + tag + ".csv");
      std::string line;
      std::getline(s, line);  // header
      std::vector<double> gross, net;
      while (std::getline(s, line)) {
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        const std::string g = line.substr(c1 + 1, c2 - c1 - 1), n = line.substr(c2 + 1);
        gross.push_back(g.empty() ? kMissing : std::stod(g));
        net.push_back(n.empty() ? kMissing : std::stod(n));
      }
      m.gross = Eigen::Map<const VectorXd>(gross.data(), static_cast<Eigen::Index>(gross.size()));
      m.net = Eigen::Map<const VectorXd>(net.data(), static_cast<Eigen::Index>(net.size()));
    }
    {
      std::ifstream s(dir + "/weights/" + tag + ".csv");
      std::string line;
      std::getline(s, line);
      m.weights = make_missing(static_cast<Eigen::Index>(store.dates.size()),
                               static_cast<Eigen::Index>(store.tickers.size()));
      Eigen::Index r = 0;
      while (std::getline(s, line) && r < m.weights.rows()) {
        // split preserving trailing empty cells
        std::vector<std::string> cells;
        size_t start = 0;
        while (true) {
          const size_t comma = line.find(',', start);
          cells.push_back(line.substr(start, comma - start));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        for (Eigen::Index c = 0; c + 1 < static_cast<Eigen::Index>(cells.size()) &&
                                 c < m.weights.cols();
             ++c) {
          const std::string& cell = cells[static_cast<size_t>(c) + 1];
          if (!cell.empty()) m.weights(r, c) = std::stod(cell);
        }
        ++r;
      }
    }
    {
      std::ifstream s(dir + "/breakeven/" + tag + ".csv");
      std::string line;
      std::getline(s, line);
      while (std::getline(s, line)) {
        std::stringstream ls(line);
        std::string ticker, g, to, c;
        std::getline(ls, ticker, ',');
        std::getline(ls, g, ',');
        std::getline(ls, to, ',');
        std::getline(ls, c, ',');
        BreakevenRow row;
        row.ticker = ticker;
        row.gross_ann = g.empty() ? kMissing : std::stod(g);
        row.turnover_ann = to.empty() ? kMissing : std::stod(to);
        row.cstar_bps = c.empty() ? kMissing : std::stod(c);
        m.breakeven.push_back(row);
      }
    }
    store.models.push_back(std::move(m));
  }
  // ledger
  {
    std::ifstream in(dir + "/ledger.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::stringstream ls(line);
      LedgerRow row;
      std::string cell;
      std::getline(ls, row.model, ',');
      std::getline(ls, cell, ',');
      row.fold = std::stoi(cell);
      std::getline(ls, cell, ',');
      row.seed = std::stoull(cell);
      std::getline(ls, cell, ',');
      row.val_loss = cell.empty() ? kMissing : std::stod(cell);
      std::getline(ls, cell, ',');
      row.epochs = std::stoi(cell);
      std::getline(ls, cell, ',');
      row.wall_seconds = cell.empty() ? kMissing : std::stod(cell);
      std::getline(ls, row.status);
      store.ledger.push_back(row);
    }
  }
  // keep Passive first, then config order is approximated by name sort
  std::stable_sort(store.models.begin(), store.models.end(),
                   [](const ModelResult& a, const ModelResult& b) {
                     const bool pa = a.name == "Passive", pb = b.name == "Passive";
                     if (pa != pb) return pa;
                     return false;
                   });
  return store;
}

}  // namespace sbench

namespace sbench {

// --- benchmark ----------------------------------------------------------------

namespace {

struct PanelBundle {
  PricePanel prices;
  ReturnPanel returns;
  VolPanel vol;
  FeaturePanel features;
  ModelDataset data;
};

PanelBundle build_panels(const RunConfig& cfg) {
  PanelBundle b;
  if (cfg.data_kind == "csv") {
    b.prices = load_price_panel(cfg.prices_csv);
    if (!cfg.groups_csv.empty()) load_groups(b.prices, cfg.groups_csv);
  } else {
    b.prices = generate_synthetic_universe(cfg.synthetic);
  }
  b.returns = compute_returns(b.prices);
  b.vol = ewma_mean_var(b.returns, cfg.features.ewma_span, cfg.features.min_obs,
                        cfg.features.sigma_floor);
  b.features = build_features(b.prices, b.returns, b.vol, cfg.features);
  b.data = make_dataset(b.features, b.vol, b.returns, cfg.training.sigma_tgt);
  return b;
}

std::vector<double> load_costs(const std::string& path, const std::vector<std::string>& tickers) {
  std::vector<double> costs(tickers.size(), 0.0);
  if (path.empty()) return costs;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open costs file: " + path);
  std::string line;
  size_t lineno = 0;
  std::map<std::string, double> by_ticker;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string ticker, bps;
    std::getline(ls, ticker, ',');
    std::getline(ls, bps, ',');
    if (lineno == 1 && ticker == "ticker") continue;
    by_ticker[ticker] = std::stod(bps) * 1e-4;
  }
  for (size_t k = 0; k < tickers.size(); ++k) {
    auto it = by_ticker.find(tickers[k]);
    if (it != by_ticker.end()) costs[k] = it->second;
  }
  return costs;
}

// view of the panels restricted to out-of-sample rows
struct OosView {
  std::vector<int> dates;
  int row_begin = 0;  // offset into the full dataset
  VolPanel vol;
  ReturnPanel returns;
};

OosView make_oos_view(const PanelBundle& b, int first_test_serial, int end_serial) {
  OosView v;
  const auto& dates = b.data.dates;
  const auto lo = std::lower_bound(dates.begin(), dates.end(), first_test_serial);
  const auto hi = std::lower_bound(dates.begin(), dates.end(), end_serial);
  v.row_begin = static_cast<int>(lo - dates.begin());
  const int n = static_cast<int>(hi - lo);
  v.dates.assign(lo, hi);
  v.vol.dates = v.dates;
  v.vol.tickers = b.vol.tickers;
  v.vol.sigma = b.vol.sigma.middleRows(v.row_begin, n);
  v.vol.vs_factor = b.vol.vs_factor.middleRows(v.row_begin, n);
  v.vol.mu = b.vol.mu.middleRows(v.row_begin, n);
  v.returns.dates = v.dates;
  v.returns.tickers = b.returns.tickers;
  v.returns.r = b.returns.r.middleRows(v.row_begin, n);
  return v;
}

int fold_burn_in_days(int seq_len) { return std::max(21, seq_len / 4); }

struct TrainedModel {
  SignalPanel signals;
  std::vector<RunRecord> records;  // per (fold, seed)
  std::vector<int> record_folds;
  std::map<std::string, double> chosen;
  ModelSpec spec;
  TrainConfig train;
};

TrainedModel train_model(const ModelRunSpec& mspec, const RunConfig& cfg,
                         const PanelBundle& panels, const FoldSchedule& folds,
                         const OosView& oos) {
  TrainedModel out;
  out.spec = mspec.spec;
  out.spec.n_features = static_cast<int>(panels.data.features.size());
  out.spec.n_tickers = static_cast<int>(panels.data.tickers.size());
  out.train = cfg.training;

  // hyperparameter selection: grid variants race on fold 0 with the first seed,
  // winner by validation Sharpe
  ModelRunSpec bound = mspec;
  bound.spec = out.spec;
  auto variants = expand_grid(bound, cfg.training, cfg.grid_cap);
  if (variants.size() > 1) {
    std::vector<RunRecord> probes(variants.size());
    parallel_for(static_cast<int>(variants.size()), [&](int i) {
      probes[static_cast<size_t>(i)] =
          train_one(variants[static_cast<size_t>(i)].spec, panels.data, folds.folds[0],
                    variants[static_cast<size_t>(i)].train, 1);
    });
    int best = -1;
    for (size_t i = 0; i < probes.size(); ++i) {
      if (probes[i].failed) continue;
      if (best < 0 || probes[i].val_loss < probes[static_cast<size_t>(best)].val_loss)
        best = static_cast<int>(i);
    }
    if (best < 0) throw ValidationError("grid selection: every variant failed");
    out.spec = variants[static_cast<size_t>(best)].spec;
    out.train = variants[static_cast<size_t>(best)].train;
    out.chosen = variants[static_cast<size_t>(best)].assignment;
  }

  // all (fold, seed) runs
  const int n_folds = static_cast<int>(folds.folds.size());
  const int n_seeds = out.train.n_seeds;
  out.records.resize(static_cast<size_t>(n_folds) * n_seeds);
  out.record_folds.resize(out.records.size());
  parallel_for(n_folds * n_seeds, [&](int i) {
    const int f = i / n_seeds;
    const std::uint64_t seed = static_cast<std::uint64_t>(i % n_seeds) + 1;
    RunRecord rec;
    try {
      rec = train_one(out.spec, panels.data, folds.folds[static_cast<size_t>(f)], out.train,
                      seed);
    } catch (const std::exception& e) {
      rec.seed = seed;
      rec.failed = true;
      rec.fail_reason = e.what();
    }
    rec.fold_id = f;
    out.records[static_cast<size_t>(i)] = std::move(rec);
    out.record_folds[static_cast<size_t>(i)] = f;
  });

  // per-fold top-S ensembles stitched onto the OOS calendar, with the first
  // max(21, L/4) test dates of each fold flagged out
  out.signals.dates = oos.dates;
  out.signals.tickers = panels.data.tickers;
  out.signals.burn_in = fold_burn_in_days(out.spec.seq_len);
  out.signals.yhat = make_missing(static_cast<Eigen::Index>(oos.dates.size()),
                                  static_cast<Eigen::Index>(panels.data.tickers.size()));
  for (int f = 0; f < n_folds; ++f) {
    std::vector<RunRecord> fold_records;
    for (size_t i = 0; i < out.records.size(); ++i)
      if (out.record_folds[i] == f) fold_records.push_back(out.records[i]);
    SignalPanel fold_panel = ensemble_positions(fold_records, out.train.top_s);
    const int burn = out.signals.burn_in;
    for (size_t r = 0; r < fold_panel.dates.size(); ++r) {
      if (static_cast<int>(r) < burn) continue;
      const auto it =
          std::lower_bound(oos.dates.begin(), oos.dates.end(), fold_panel.dates[r]);
      if (it == oos.dates.end() || *it != fold_panel.dates[r]) continue;
      const auto row = static_cast<Eigen::Index>(it - oos.dates.begin());
      for (Eigen::Index k = 0; k < fold_panel.yhat.cols(); ++k)
        out.signals.yhat(row, k) = fold_panel.yhat(static_cast<Eigen::Index>(r), k);
    }
  }
  return out;
}

ModelResult evaluate_model(const std::string& name, const SignalPanel& signals,
                           const OosView& oos, const std::vector<double>& costs,
                           double sigma_tgt, const VectorXd& passive_series,
                           const std::vector<PeriodSpec>& periods) {
  ModelResult res;
  res.name = name;
  auto weights = position_weights(signals, oos.vol, sigma_tgt);
  auto gross = strategy_returns(weights, oos.returns);
  res.weights = weights.w;
  res.gross = gross.portfolio;
  res.net = net_returns(gross, weights, costs);
  res.breakeven = breakeven_costs(gross, weights);
  std::sort(res.breakeven.begin(), res.breakeven.end(),
            [](const BreakevenRow& a, const BreakevenRow& b) {
              const double x = present(a.cstar_bps) ? a.cstar_bps : -1e300;
              const double y = present(b.cstar_bps) ? b.cstar_bps : -1e300;
              if (x != y) return x > y;
              return a.ticker < b.ticker;
            });
  res.portfolio_cstar_bps = portfolio_breakeven(gross, weights);
  if (present(res.portfolio_cstar_bps)) res.portfolio_cstar_bps *= 1e4;
  res.metrics =
      compute_metrics(gross.portfolio, oos.dates, passive_series, weights, oos.returns, periods);
  return res;
}

std::vector<PeriodSpec> default_periods(const std::vector<int>& dates) {
  if (dates.empty()) return {};
  const int y0 = year_of(dates.front()), y1 = year_of(dates.back()) + 1;
  auto mk = [](int a, int b) {
    return PeriodSpec{std::to_string(a) + "-" + std::to_string(b),
                      days_from_civil(a, 1, 1), days_from_civil(b, 1, 1)};
  };
  std::vector<PeriodSpec> out;
  out.push_back(mk(y0, y1));
  const int mid = y0 + (y1 - y0) / 2;
  if (mid > y0 && mid < y1) {
    out.push_back(mk(mid, y1));
    out.push_back(mk(y0, mid));
    const int q1 = y0 + (y1 - y0) / 4 * 1;
    (void)q1;
    const int half2 = mid + (y1 - mid) / 2;
    if (half2 > mid && half2 < y1) {
      out.push_back(mk(mid, half2));
      out.push_back(mk(half2, y1));
    }
  }
  return out;
}

}  // namespace

ResultStore run_benchmark(const RunConfig& config) {
  config.validate();
  // fail fast on unknown models / bad specs before any computation
  for (const auto& m : config.models) m.spec.validate();

  PanelBundle panels = build_panels(config);
  auto folds = build_fold_schedule(panels.data.dates, config.retrain_every_years,
                                   config.initial_train_years);
  OosView oos = make_oos_view(panels, folds.folds.front().test_start,
                              folds.folds.back().test_end);
  if (oos.dates.empty()) throw ConfigError("no out-of-sample dates");

  ResultStore store;
  store.dates = oos.dates;
  store.tickers = panels.data.tickers;
  store.config_text = config.config_text.empty() ? std::string("{}") : config.config_text;
  store.periods =
      config.subperiods.empty() ? default_periods(oos.dates) : config.subperiods;

  const auto costs = load_costs(config.costs_csv, panels.data.tickers);

  // passive benchmark through the identical pipeline
  auto passive_sig = passive_signals(oos.vol);
  ModelResult passive = evaluate_model("Passive", passive_sig, oos, costs,
                                       config.training.sigma_tgt, VectorXd(), store.periods);
  {
    // passive measured against itself: the relative diagnostics go missing
    auto w = position_weights(passive_sig, oos.vol, config.training.sigma_tgt);
    auto g = strategy_returns(w, oos.returns);
    passive.metrics = compute_metrics(g.portfolio, oos.dates, g.portfolio, w, oos.returns,
                                      store.periods);
  }
  const VectorXd passive_series = passive.gross;
  store.models.push_back(std::move(passive));

  for (const auto& mspec : config.models) {
    ModelResult res;
    res.name = mspec.name;
    try {
      TrainedModel trained = train_model(mspec, config, panels, folds, oos);
      res = evaluate_model(mspec.name, trained.signals, oos, costs,
                           config.training.sigma_tgt, passive_series, store.periods);
      res.chosen = trained.chosen;
      // ledger + checkpoints
      const std::string ckpt_dir = config.output_dir + "/checkpoints/" + slug(mspec.name);
      fs::create_directories(ckpt_dir);
      for (const auto& rec : trained.records) {
        LedgerRow row;
        row.model = mspec.name;
        row.fold = rec.fold_id;
        row.seed = rec.seed;
        row.val_loss = rec.val_loss;
        row.epochs = rec.epochs_run;
        row.wall_seconds = rec.wall_seconds;
        row.status = rec.failed ? "failed: " + rec.fail_reason : "ok";
        store.ledger.push_back(row);
        if (!rec.failed) {
          models::save_checkpoint(ckpt_dir + "/fold" + std::to_string(rec.fold_id) +
                                      "_seed" + std::to_string(rec.seed) + ".ckpt",
                                  trained.spec, rec.params);
        }
      }
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    store.models.push_back(std::move(res));
  }

  std::sort(store.ledger.begin(), store.ledger.end(),
            [](const LedgerRow& a, const LedgerRow& b) {
              if (a.model != b.model) return a.model < b.model;
              if (a.fold != b.fold) return a.fold < b.fold;
              return a.seed < b.seed;
            });
  store.save(config.output_dir);
  return store;
}

// --- tables -------------------------------------------------------------------

TableKind table_kind_from_string(const std::string& s) {
  if (s == "performance") return TableKind::Performance;
  if (s == "risk") return TableKind::Risk;
  if (s == "subperiod") return TableKind::Subperiod;
  if (s == "annual") return TableKind::Annual;
  if (s == "breakeven") return TableKind::Breakeven;
  throw ConfigError("unknown table kind: " + s);
}

namespace {

std::string cell_or_dashes(const std::string& s, bool txt) {
  if (!s.empty()) return s;
  return txt ? "--" : "";
}

void write_table(const std::string& base, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows,
                 std::vector<std::string>& written) {
  {
    std::ofstream out(base + ".csv", std::ios::trunc);
    for (size_t c = 0; c < header.size(); ++c)
      out << header[c] << (c + 1 == header.size() ? "\n" : ",");
    for (const auto& row : rows) {
      for (size_t c = 0; c < row.size(); ++c)
        out << cell_or_dashes(row[c], false) << (c + 1 == row.size() ? "\n" : ",");
    }
  }
  {
    std::vector<size_t> width(header.size());
    for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows)
      for (size_t c = 0; c < row.size(); ++c)
        width[c] = std::max(width[c], cell_or_dashes(row[c], true).size());
    std::ofstream out(base + ".txt", std::ios::trunc);
    auto emit = [&](const std::vector<std::string>& cells, bool pad_with_dashes) {
      for (size_t c = 0; c < cells.size(); ++c) {
        const std::string v = pad_with_dashes ? cell_or_dashes(cells[c], true) : cells[c];
        out << v << std::string(width[c] - v.size(), ' ');
        out << (c + 1 == cells.size() ? "\n" : "  ");
      }
    };
    emit(header, false);
    for (size_t c = 0; c < header.size(); ++c)
      out << std::string(width[c], '-') << (c + 1 == header.size() ? "\n" : "  ");
    for (const auto& row : rows) emit(row, true);
  }
  written.push_back(base + ".csv");
  written.push_back(base + ".txt");
}

}  // namespace

std::vector<std::string> emit_tables(const ResultStore& store, const std::string& dir,
                                     const std::vector<TableKind>& which) {
  if (store.models.empty()) throw ValidationError("emit_tables: empty result store");
  fs::create_directories(dir + "/tables");
  std::vector<std::string> written;

  for (TableKind kind : which) {
    switch (kind) {
      case TableKind::Performance: {
        std::vector<std::string> header = {"Model",    "CAGR",       "Ann. Ret.",
                                           "SR",       "t (HAC)",    "Hit",
                                           "Turnover", "xGMV",       "Info. Ratio",
                                           "t (HAC) v Passive",      "Corr. v Passive"};
        std::vector<std::vector<std::string>> rows;
        for (const auto& m : store.models) {
          const auto& r = m.metrics;
          const bool passive = m.name == "Passive";
          rows.push_back({m.name, fmt(r.cagr), fmt(r.ann_return), fmt(r.sharpe, 2),
                          fmt(r.t_hac, 2), fmt(r.hit_rate, 3),
                          passive ? "" : fmt(r.turnover_ann, 2),
                          passive ? "" : fmt(r.xgmv, 3), passive ? "" : fmt(r.info_ratio),
                          passive ? "" : fmt(r.t_hac_vs_passive),
                          passive ? "" : fmt(r.corr_vs_passive)});
        }
        write_table(dir + "/tables/performance", header, rows, written);
        break;
      }
      case TableKind::Risk: {
        std::vector<std::string> header = {"Model",           "Max DD",
                                           "Calmar",          "Worst 3m Sharpe",
                                           "Min Ann. Sharpe", "CVaR 5%"};
        std::vector<std::vector<std::string>> rows;
        for (const auto& m : store.models) {
          const auto& r = m.metrics;
          rows.push_back({m.name, fmt(r.max_dd, 3), fmt(r.calmar, 2),
                          fmt(r.worst_3m_sharpe, 2), fmt(r.min_annual_sharpe, 2),
                          fmt(r.cvar_5)});
        }
        write_table(dir + "/tables/risk", header, rows, written);
        break;
      }
      case TableKind::Subperiod: {
        std::vector<std::string> header = {"Strategy"};
        for (const auto& p : store.periods) header.push_back(p.label);
        std::vector<std::vector<std::string>> rows;
        for (const auto& m : store.models) {
          std::vector<std::string> row = {m.name};
          for (const auto& p : store.periods) {
            auto it = m.metrics.per_period.find(p.label);
            row.push_back(it == m.metrics.per_period.end() ? "" : fmt(it->second, 2));
          }
          rows.push_back(std::move(row));
        }
        write_table(dir + "/tables/subperiod", header, rows, written);
        break;
      }
      case TableKind::Annual: {
        std::set<int> years;
        for (const auto& m : store.models)
          for (const auto& [y, v] : m.metrics.per_year) years.insert(y);
        std::vector<std::string> header = {"Strategy"};
        for (int y : years) header.push_back(std::to_string(y));
        std::vector<std::vector<std::string>> rows;
        for (const auto& m : store.models) {
          std::vector<std::string> row = {m.name};
          for (int y : years) {
            auto it = m.metrics.per_year.find(y);
            row.push_back(it == m.metrics.per_year.end() ? "" : fmt(it->second, 2));
          }
          rows.push_back(std::move(row));
        }
        write_table(dir + "/tables/annual", header, rows, written);
        break;
      }
      case TableKind::Breakeven: {
        for (const auto& m : store.models) {
          if (m.name == "Passive" || m.breakeven.empty()) continue;
          std::vector<std::string> header = {"Ticker", "Gross (ann.)", "Turnover (ann.)",
                                             "c* (bps)"};
          std::vector<std::vector<std::string>> rows;
          for (const auto& r : m.breakeven)
            rows.push_back({r.ticker, fmt(r.gross_ann), fmt(r.turnover_ann, 2),
                            fmt(r.cstar_bps, 2)});
          rows.push_back({"PORTFOLIO", "", "", fmt(m.portfolio_cstar_bps, 2)});
          write_table(dir + "/tables/breakeven_" + slug(m.name), header, rows, written);
        }
        break;
      }
    }
  }
  return written;
}

// --- plot ---------------------------------------------------------------------

std::vector<std::string> emit_pnl_plot(const ResultStore& store, const std::string& dir,
                                       double vol_rescale) {
  fs::create_directories(dir + "/plots");
  std::vector<std::string> written;

  struct Curve {
    std::string name;
    std::vector<double> cum;  // NaN before the first defined point
  };
  std::vector<Curve> curves;
  for (const auto& m : store.models) {
    if (m.gross.size() == 0 || !m.error.empty()) continue;
    VectorXd compact = compact_series(m.gross);
    if (compact.size() < 2) continue;
    const double mean = compact.mean();
    const double sd =
        std::sqrt((compact.array() - mean).square().sum() / (compact.size() - 1));
    if (!(sd > 0)) continue;
    const double scale = vol_rescale / (sd * std::sqrt(kTradingDaysPerYear));
    Curve c;
    c.name = m.name;
    c.cum.assign(store.dates.size(), kMissing);
    double acc = 0;
    bool started = false;
    for (size_t i = 0; i < store.dates.size(); ++i) {
      const double v = m.gross(static_cast<Eigen::Index>(i));
      if (present(v)) {
        acc += v * scale;
        started = true;
      }
      if (started) c.cum[i] = acc;
    }
    curves.push_back(std::move(c));
  }

  const std::string data_path = dir + "/plots/pnl_data.csv";
  {
    std::ofstream out(data_path, std::ios::trunc);
    out << "date";
    for (const auto& c : curves) out << "," << c.name;
    out << "\n";
    for (size_t i = 0; i < store.dates.size(); ++i) {
      out << format_iso_date(store.dates[i]);
      for (const auto& c : curves)
        out << "," << (present(c.cum[i]) ? csv_cell(c.cum[i]) : "");
      out << "\n";
    }
  }
  written.push_back(data_path);

  // dependency-free SVG line chart
  const int W = 960, H = 520, ml = 70, mr = 180, mt = 30, mb = 40;
  double lo = 0, hi = 0;
  for (const auto& c : curves)
    for (double v : c.cum)
      if (present(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (hi == lo) hi = lo + 1;
  const double xspan = std::max<double>(1, static_cast<double>(store.dates.size()) - 1);
  auto xpix = [&](size_t i) { return ml + (W - ml - mr) * (static_cast<double>(i) / xspan); };
  auto ypix = [&](double v) { return mt + (H - mt - mb) * (1.0 - (v - lo) / (hi - lo)); };
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const std::string svg_path = dir + "/plots/pnl.svg";
  {
    std::ofstream out(svg_path, std::ios::trunc);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">"
        << "Cumulative gross PnL, rescaled to " << fmt(vol_rescale * 100, 0)
        << "% annualized volatility</text>\n";
    // axes
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << H - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << ypix(0) << "\" x2=\"" << W - mr << "\" y2=\""
        << ypix(0) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
        << H - mb << "\" stroke=\"black\"/>\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", hi);
    out << "<text x=\"8\" y=\"" << mt + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.2f", lo);
    out << "<text x=\"8\" y=\"" << H - mb << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << buf << "</text>\n";
    if (!store.dates.empty()) {
      out << "<text x=\"" << ml << "\" y=\"" << H - 12
          << "\" font-family=\"sans-serif\" font-size=\"11\">"
          << format_iso_date(store.dates.front()) << "</text>\n";
      out << "<text x=\"" << W - mr - 70 << "\" y=\"" << H - 12
          << "\" font-family=\"sans-serif\" font-size=\"11\">"
          << format_iso_date(store.dates.back()) << "</text>\n";
    }
    for (size_t ci = 0; ci < curves.size(); ++ci) {
      const char* color = kPalette[ci % 10];
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < curves[ci].cum.size(); ++i) {
        if (!present(curves[ci].cum[i])) continue;
        out << xpix(i) << "," << ypix(curves[ci].cum[i]) << " ";
      }
      out << "\"/>\n";
      out << "<text x=\"" << W - mr + 12 << "\" y=\"" << mt + 16 + 18 * ci
          << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">"
          << curves[ci].name << "</text>\n";
    }
    out << "</svg>\n";
  }
  written.push_back(svg_path);
  return written;
}

}  // namespace sbench
