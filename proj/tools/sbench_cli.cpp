// sbench: train sequence models end-to-end on the Sharpe objective over a
// volatility-targeted futures portfolio and report the full metric suite.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "sbench/runner.hpp"

using namespace sbench;

namespace {

int cmd_run(const std::string& config_path) {
  RunConfig cfg = RunConfig::from_file(config_path);
  cfg.validate();
  std::cout << "running benchmark -> " << cfg.output_dir << "\n";
  ResultStore store = run_benchmark(cfg);
  auto files = emit_tables(store, cfg.output_dir,
                           {TableKind::Performance, TableKind::Risk, TableKind::Subperiod,
                            TableKind::Annual, TableKind::Breakeven});
  auto plots = emit_pnl_plot(store, cfg.output_dir);
  files.insert(files.end(), plots.begin(), plots.end());
  for (const auto& m : store.models) {
    if (!m.error.empty())
      std::cout << "  " << m.name << ": FAILED (" << m.error << ")\n";
    else
      std::cout << "  " << m.name << ": SR " << (present(m.metrics.sharpe)
                                                     ? std::to_string(m.metrics.sharpe)
                                                     : std::string("--"))
                << "\n";
  }
  std::cout << files.size() << " report files under " << cfg.output_dir << "\n";
  return 0;
}

int cmd_tables(const std::string& store_dir, const std::string& which_csv) {
  ResultStore store = ResultStore::load(store_dir);
  std::vector<TableKind> which;
  std::stringstream ss(which_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) which.push_back(table_kind_from_string(item));
  }
  if (which.empty())
    which = {TableKind::Performance, TableKind::Risk, TableKind::Subperiod,
             TableKind::Annual, TableKind::Breakeven};
  auto files = emit_tables(store, store_dir, which);
  for (const auto& f : files) std::cout << f << "\n";
  return 0;
}

int cmd_plot(const std::string& store_dir, double vol) {
  ResultStore store = ResultStore::load(store_dir);
  auto files = emit_pnl_plot(store, store_dir, vol);
  for (const auto& f : files) std::cout << f << "\n";
  return 0;
}

int cmd_gridcheck(const std::string& config_path) {
  RunConfig cfg = RunConfig::from_file(config_path);
  cfg.validate();
  for (const auto& m : cfg.models) {
    auto variants = expand_grid(m, cfg.training, cfg.grid_cap);
    std::cout << m.name << ": " << variants.size() << " variant"
              << (variants.size() == 1 ? "" : "s") << "\n";
    for (const auto& v : variants) {
      if (v.assignment.empty()) continue;
      std::cout << "  ";
      bool first = true;
      for (const auto& [k, val] : v.assignment) {
        std::cout << (first ? "" : ", ") << k << "=" << val;
        first = false;
      }
      std::cout << "\n";
    }
  }
  return 0;
}

int cmd_gradcheck(const std::string& arch, int hidden, int seq_len, int layers, int samples,
                  std::uint64_t seed) {
  models::ModelSpec spec;
  spec.arch = models::arch_from_string(arch);
  spec.hidden_dim = hidden;
  spec.seq_len = seq_len;
  spec.layers = layers;
  spec.embed_dim = 2;
  spec.n_features = 9;
  spec.n_tickers = 2;
  spec.patch_len = std::min(8, seq_len / 2);
  spec.stride = spec.patch_len;
  spec.heads = hidden % 2 == 0 ? 2 : 1;
  spec.ssm_state = 4;
  auto report = gradient_check(spec, 4, samples, seed);
  std::printf("%-14s %-10s %-12s\n", "block", "checked", "max rel err");
  for (const auto& b : report.blocks)
    std::printf("%-14s %-10d %-12.3e\n", b.name.c_str(), b.checked, b.max_rel_err);
  std::printf("overall max %.3e (%s) -> %s\n", report.max_rel_err,
              report.worst_block.c_str(), report.pass(1e-4) ? "PASS" : "FAIL");
  return report.pass(1e-4) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequence-model Sharpe benchmark"};
  app.require_subcommand(1);

  std::string config_path, store_dir, which;
  double vol = 0.10;
  std::string arch = "LSTM";
  int hidden = 4, seq_len = 16, layers = 1, samples = 200;
  std::uint64_t seed = 2024;

  auto* run = app.add_subcommand("run", "execute a full benchmark from a config file");
  run->add_option("config", config_path, "JSON config")->required();

  auto* tables = app.add_subcommand("tables", "emit report tables from a result store");
  tables->add_option("store", store_dir, "result store directory")->required();
  tables->add_option("--which", which,
                     "comma list: performance,risk,subperiod,annual,breakeven");

  auto* plot = app.add_subcommand("plot", "emit vol-rescaled PnL data and SVG");
  plot->add_option("store", store_dir, "result store directory")->required();
  plot->add_option("--vol", vol, "rescale target annualized vol");

  auto* gridcheck = app.add_subcommand("gridcheck", "expand and list hyperparameter grids");
  gridcheck->add_option("config", config_path, "JSON config")->required();

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of a model's gradients");
  gradcheck->add_option("arch", arch, "architecture name")->required();
  gradcheck->add_option("--hidden", hidden, "hidden dim");
  gradcheck->add_option("--seq-len", seq_len, "window length");
  gradcheck->add_option("--layers", layers, "layer count");
  gradcheck->add_option("--samples", samples, "samples per parameter block");
  gradcheck->add_option("--seed", seed, "instance seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return cmd_run(config_path);
    if (tables->parsed()) return cmd_tables(store_dir, which);
    if (plot->parsed()) return cmd_plot(store_dir, vol);
    if (gridcheck->parsed()) return cmd_gridcheck(config_path);
    if (gradcheck->parsed())
      return cmd_gradcheck(arch, hidden, seq_len, layers, samples, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
