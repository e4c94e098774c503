// Command-line front end for the factor-mining toolkit.
//
// Subcommands cover the individual stages (gen-data, indicators, pretrain,
// train, gp, evaluate, backtest), full-scheme orchestration (run), and
// cross-run comparison (compare). Every subcommand accepts --seed, --out,
// and --config; --out is always a directory. Exit code 0 on success,
// 1 with a stage-named diagnostic on stderr otherwise.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/forge.hpp"

namespace fs = std::filesystem;

namespace {

// --config is honoured before CLI11 parses so every flag's default comes
// from the file and explicit flags still win.
forge::ExperimentConfig preload_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return forge::load_config(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return forge::load_config(a.substr(9));
  }
  return {};
}

void write_json(const std::string& path, const nlohmann::json& j) {
  forge::detail::write_text(path, j.dump(2) + "\n");
}

struct WindowBounds {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

WindowBounds resolve_window(const std::string& window, const forge::SplitSpec& split,
                            std::size_t panel_days) {
  const std::size_t t = split.train_days, v = split.valid_days, s = split.test_days;
  WindowBounds w;
  if (window == "train") {
    w = {0, t};
  } else if (window == "valid") {
    w = {t, t + v};
  } else if (window == "test") {
    w = {t + v, t + v + s};
  } else if (window == "all") {
    w = {0, panel_days};
  } else {
    throw forge::Error("unknown window '" + window + "' (train|valid|test|all)");
  }
  w.hi = std::min(w.hi, panel_days);
  if (w.lo >= w.hi) throw forge::Error("window '" + window + "' is empty for this panel");
  return w;
}

forge::FactorMatrix merge_windows(const forge::FactorMatrix& a, const forge::FactorMatrix& b) {
  forge::FactorMatrix out = a;
  for (std::size_t i = 0; i < b.mask.size(); ++i)
    if (b.mask[i]) {
      out.mask[i] = 1;
      out.values[i] = b.values[i];
    }
  return out;
}

int cmd_gen_data(const forge::ExperimentConfig& cfg, const std::string& out_dir) {
  forge::AlphaSpec a;
  a.target_spearman = cfg.synthetic.target_spearman;
  a.reversal_days = cfg.synthetic.reversal_days;
  a.horizon = cfg.horizon;
  const auto mkt = forge::generate_synthetic_market(cfg.synthetic.n_symbols, cfg.synthetic.n_days,
                                                    cfg.seed, a);
  fs::create_directories(out_dir);
  forge::save_panel_csv(mkt.panel, out_dir + "/panel.csv");
  forge::save_factor_csv(mkt.hidden, out_dir + "/hidden.csv");
  write_json(out_dir + "/meta.json",
             {{"n_symbols", cfg.synthetic.n_symbols},
              {"n_days", cfg.synthetic.n_days},
              {"target_spearman", cfg.synthetic.target_spearman},
              {"measured_spearman", mkt.measured_spearman},
              {"mix_weight", mkt.mix_weight},
              {"reversal_days", cfg.synthetic.reversal_days},
              {"horizon", cfg.horizon},
              {"seed", cfg.seed}});
  std::printf("wrote %s/panel.csv (%zu symbols x %zu days, measured spearman %.4f)\n",
              out_dir.c_str(), mkt.panel.n_symbols(), mkt.panel.days(), mkt.measured_spearman);
  return 0;
}

int cmd_indicators(const std::string& panel_path, const std::vector<std::string>& names,
                   int window, int slow, const std::string& out_dir) {
  const forge::PricePanel panel = forge::load_panel(panel_path);
  fs::create_directories(out_dir);
  std::vector<std::string> wanted = names;
  if (wanted.empty())
    for (const auto& spec : forge::default_indicator_pool())
      wanted.push_back(forge::indicator_name(spec.kind));
  for (const auto& name : wanted) {
    forge::IndicatorSpec spec;
    spec.kind = forge::indicator_kind_from(name);
    spec.window = window;
    spec.slow = slow;
    const forge::FactorMatrix f = forge::compute_indicator(spec, panel);
    std::string fname = name;
    if (window > 0) fname += "_" + std::to_string(window);
    forge::save_factor_csv(f, out_dir + "/" + fname + ".csv");
    std::printf("wrote %s/%s.csv\n", out_dir.c_str(), fname.c_str());
  }
  return 0;
}

int cmd_pretrain(const forge::ExperimentConfig& cfg, const std::string& panel_path,
                 const std::string& indicator, const std::string& out_dir) {
  const forge::PricePanel panel = forge::load_panel(panel_path);
  const forge::BatchSet batches = forge::make_batches(panel, cfg.split, cfg.m, cfg.horizon);
  forge::IndicatorSpec spec;
  spec.kind = forge::indicator_kind_from(indicator);
  const forge::FactorMatrix target = forge::compute_indicator(spec, panel);
  forge::NetworkGraph net = forge::detail::build_network(cfg.network, cfg.m, cfg.seed);
  const forge::PretrainReport rep =
      forge::pretrain(net, target, panel, batches, cfg.pretrain_opt, cfg.seed, spec.kind);
  fs::create_directories(out_dir);
  forge::save_network(net, out_dir + "/net.net");
  write_json(out_dir + "/report.json",
             {{"target", indicator},
              {"network", cfg.network.kind},
              {"train_mse", rep.train_mse},
              {"test_mse", rep.test_mse},
              {"train_rel_err", rep.train_rel_err},
              {"test_rel_err", rep.test_rel_err},
              {"train_accuracy", rep.train_accuracy},
              {"test_accuracy", rep.test_accuracy},
              {"epochs_run", rep.epochs_run},
              {"diverged", rep.diverged},
              {"seed", cfg.seed}});
  std::printf("pretrained on %s: train mse %.6f, test mse %.6f, test accuracy %.4f\n",
              indicator.c_str(), rep.train_mse, rep.test_mse, rep.test_accuracy);
  return 0;
}

int cmd_train(const forge::ExperimentConfig& cfg, const std::string& panel_path,
              const std::string& net_in, const std::string& out_dir) {
  const forge::PricePanel panel = forge::load_panel(panel_path);
  const forge::BatchSet batches = forge::make_batches(panel, cfg.split, cfg.m, cfg.horizon);
  forge::FactorCandidate cand;
  if (!net_in.empty()) {
    cand.net = forge::load_network(net_in);
    cand.pretrained = true;
  } else {
    cand.net = forge::detail::build_network(cfg.network, cfg.m, cfg.seed);
  }
  if (cand.net.m != cfg.m)
    throw forge::Error("train: network expects window " + std::to_string(cand.net.m) +
                       " but --m is " + std::to_string(cfg.m));
  if (cfg.prune_rate > 0.0) {
    forge::prune(cand.net, cfg.prune_rate);
    cand.pruned_rate = cfg.prune_rate;
  }
  forge::TrainOptions opt = cfg.train_opt;
  opt.q = cfg.q;
  opt.kernel.p = cfg.kernel_p;
  cand = forge::train_factor(std::move(cand), batches, opt, cfg.seed);
  const forge::Evaluation ev = forge::evaluate_factor(cand.net, batches.test, panel);
  fs::create_directories(out_dir);
  forge::save_network(cand.net, out_dir + "/net.net");
  forge::save_factor_csv(ev.factor, out_dir + "/factor_test.csv");
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : cand.history)
    hist.push_back({{"train_ic", h.train_ic}, {"valid_ic", h.valid_ic}});
  write_json(out_dir + "/report.json",
             {{"network", cfg.network.kind},
              {"pretrained_from", net_in},
              {"prune_rate", cfg.prune_rate},
              {"best_valid_ic", cand.best_valid_ic},
              {"best_epoch", cand.best_epoch},
              {"aborted", cand.aborted},
              {"test_mean_ic", ev.mean_ic},
              {"test_skipped_days", ev.skipped_days},
              {"history", hist},
              {"seed", cfg.seed}});
  std::printf("trained: best valid ic %.4f (epoch %zu), test ic %.4f\n", cand.best_valid_ic,
              cand.best_epoch, ev.mean_ic);
  return 0;
}

int cmd_gp(const forge::ExperimentConfig& cfg, const std::string& panel_path,
           const std::string& out_dir) {
  const forge::PricePanel panel = forge::load_panel(panel_path);
  forge::GpOptions opt = cfg.gp;
  opt.horizon = cfg.horizon;
  if (cfg.split.train_days <= cfg.m + cfg.horizon)
    throw forge::Error("gp: training split too short for window and horizon");
  const forge::GpRun run = forge::evolve(panel, cfg.m, cfg.split.train_days - cfg.horizon, opt,
                                         cfg.seed, cfg.gp_top_k);
  fs::create_directories(out_dir);
  std::string trees;
  nlohmann::json best = nlohmann::json::array();
  for (std::size_t i = 0; i < run.best.size(); ++i) {
    const std::string expr = forge::format_tree(run.best[i]);
    trees += forge::detail::format_double(run.best_fitness[i]) + "\t" + expr + "\n";
    best.push_back({{"expr", expr}, {"train_fitness", run.best_fitness[i]}});
    forge::save_factor_csv(forge::eval_tree(run.best[i], panel),
                           out_dir + "/gp_" + std::to_string(i) + ".csv");
  }
  forge::detail::write_text(out_dir + "/best_trees.txt", trees);
  write_json(out_dir + "/report.json",
             {{"best_trees", best},
              {"best_fitness_per_generation", run.best_per_generation},
              {"population", opt.population},
              {"generations", opt.generations},
              {"seed", cfg.seed}});
  std::printf("gp: best train fitness %.4f, tree %s\n", run.best_fitness.front(),
              forge::format_tree(run.best.front()).c_str());
  return 0;
}

// Materializes a factor from whichever source flag was given.
forge::FactorMatrix factor_from_source(const forge::ExperimentConfig& cfg,
                                       const forge::PricePanel& panel,
                                       const std::string& factor_path, const std::string& net_path,
                                       const std::string& expr, const std::string& window) {
  const int sources = int(!factor_path.empty()) + int(!net_path.empty()) + int(!expr.empty());
  if (sources != 1)
    throw forge::Error("pass exactly one of --factor, --net, or --expr");
  if (!factor_path.empty())
    return forge::align_factor(forge::load_factor_csv(factor_path), panel);
  if (!expr.empty()) return forge::eval_tree(forge::parse_tree(expr), panel);
  const forge::NetworkGraph net = forge::load_network(net_path);
  const forge::BatchSet batches = forge::make_batches(panel, cfg.split, net.m, cfg.horizon);
  if (window == "train") return forge::evaluate_factor(net, batches.train, panel).factor;
  if (window == "valid") return forge::evaluate_factor(net, batches.valid, panel).factor;
  if (window == "test") return forge::evaluate_factor(net, batches.test, panel).factor;
  if (window == "all")
    return merge_windows(
        merge_windows(forge::evaluate_factor(net, batches.train, panel).factor,
                      forge::evaluate_factor(net, batches.valid, panel).factor),
        forge::evaluate_factor(net, batches.test, panel).factor);
  throw forge::Error("unknown window '" + window + "' (train|valid|test|all)");
}

int cmd_evaluate(const forge::ExperimentConfig& cfg, const std::string& panel_path,
                 const std::string& factor_path, const std::string& net_path,
                 const std::string& expr, const std::string& window, const std::string& out_dir) {
  const forge::PricePanel panel = forge::load_panel(panel_path);
  const forge::FactorMatrix f =
      factor_from_source(cfg, panel, factor_path, net_path, expr, window);
  const WindowBounds w = resolve_window(window, cfg.split, panel.days());
  const forge::IcStats st = forge::ic_stats(f, panel, w.lo, w.hi, cfg.horizon);
  fs::create_directories(out_dir);
  forge::save_factor_csv(f, out_dir + "/factor.csv");
  write_json(out_dir + "/report.json",
             {{"source", !factor_path.empty() ? factor_path : (!net_path.empty() ? net_path : expr)},
              {"window", window},
              {"day_lo", w.lo},
              {"day_hi", w.hi},
              {"horizon", cfg.horizon},
              {"mean_ic", st.mean},
              {"ic_std", st.std},
              {"ir", st.ir},
              {"days", st.day_ic.size()},
              {"skipped_days", st.skipped_days}});
  std::printf("mean ic %.4f over %zu days (ir %.4f, skipped %zu)\n", st.mean, st.day_ic.size(),
              st.ir, st.skipped_days);
  return 0;
}

int cmd_backtest(const forge::ExperimentConfig& cfg, const std::string& panel_path,
                 const std::string& factor_path, const std::string& net_path,
                 const std::string& expr, const std::string& window, const std::string& out_dir) {
  const forge::PricePanel panel = forge::load_panel(panel_path);
  const forge::FactorMatrix f =
      factor_from_source(cfg, panel, factor_path, net_path, expr, window);
  const WindowBounds w = resolve_window(window, cfg.split, panel.days());
  const forge::BacktestMode mode = cfg.backtest_mode == "long-minus-benchmark"
                                       ? forge::BacktestMode::LongMinusBenchmark
                                       : forge::BacktestMode::LongShort;
  const forge::BacktestReport rep = forge::backtest(f, panel, w.lo, w.hi, cfg.horizon,
                                                    cfg.backtest_quantile,
                                                    cfg.backtest_commission, mode);
  fs::create_directories(out_dir);
  forge::detail::write_equity_csv(out_dir + "/equity.csv", rep);
  nlohmann::json j = forge::detail::backtest_json(rep);
  j["window"] = window;
  j["mode"] = cfg.backtest_mode;
  j["quantile"] = cfg.backtest_quantile;
  write_json(out_dir + "/report.json", j);
  std::printf("backtest: cumulative %.4f, annualized %.4f, sharpe %.4f, mdd %.4f (%zu periods)\n",
              rep.cumulative_return, rep.annualized_return, rep.sharpe, rep.max_drawdown,
              rep.periods);
  return 0;
}

int cmd_run(const forge::ExperimentConfig& cfg) {
  const forge::RunResult r = forge::run_pipeline(cfg);
  std::printf("run complete: %s\n", r.dir.c_str());
  if (r.report.contains("backtest"))
    std::printf("  backtest sharpe %.4f, annualized %.4f\n",
                r.report["backtest"]["sharpe"].get<double>(),
                r.report["backtest"]["annualized_return"].get<double>());
  return 0;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  const nlohmann::json cmp = forge::compare_schemes(run_dirs);
  const std::string table = forge::render_comparison(cmp);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json(out_dir + "/comparison.json", cmp);
    forge::detail::write_text(out_dir + "/comparison.txt", table);
  }
  std::printf("%s", table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  forge::ExperimentConfig cfg;
  try {
    cfg = preload_config(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config: error: %s\n", e.what());
    return 1;
  }

  CLI::App app{"factor mining toolkit: indicator-seeded neural factors, GP baselines, "
               "combination, and backtesting"};
  app.require_subcommand(1);

  std::string config_path, out_dir, panel_path, window = "test";
  std::string net_in, factor_path, expr;
  std::string indicator = "ma";
  std::vector<std::string> indicator_set, run_dirs;
  int ind_window = 0, ind_slow = 0;

  std::map<const CLI::App*, std::string> out_defaults;
  auto add_common = [&](CLI::App* sub, const std::string& default_out) {
    out_defaults[sub] = default_out;
    sub->add_option("--config", config_path, "config file (JSON, schema of run --dump-config)");
    sub->add_option("--seed", cfg.seed, "RNG seed");
    sub->add_option("--out", out_dir, "output directory")->default_str(default_out);
  };
  auto add_panel = [&](CLI::App* sub) {
    sub->add_option("--panel", panel_path, "price panel CSV")->required();
  };
  auto add_splits = [&](CLI::App* sub) {
    sub->add_option("--split-train", cfg.split.train_days, "training days");
    sub->add_option("--split-valid", cfg.split.valid_days, "validation days");
    sub->add_option("--split-test", cfg.split.test_days, "test days");
    sub->add_option("--m", cfg.m, "observation window length");
    sub->add_option("--horizon", cfg.horizon, "forward-return horizon");
  };
  auto add_network = [&](CLI::App* sub) {
    sub->add_option("--net-kind", cfg.network.kind, "fcn|lstm|conv");
    sub->add_option("--depth", cfg.network.depth, "hidden layers (fcn)");
    sub->add_option("--width", cfg.network.width, "hidden width (fcn)");
    sub->add_option("--hidden", cfg.network.hidden, "hidden state size (lstm)");
    sub->add_option("--kernel", cfg.network.kernel, "kernel width (conv)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic OHLCV panel with a planted signal");
  add_common(gen, "data");
  gen->add_option("--symbols", cfg.synthetic.n_symbols, "number of symbols");
  gen->add_option("--days", cfg.synthetic.n_days, "number of trading days");
  gen->add_option("--target-ic", cfg.synthetic.target_spearman, "planted mean daily rank correlation");
  gen->add_option("--reversal", cfg.synthetic.reversal_days, "reversal lookback of the hidden signal");
  gen->add_option("--horizon", cfg.horizon, "forward-return horizon");

  auto* ind = app.add_subcommand("indicators", "compute technical-indicator factor matrices");
  add_common(ind, "indicators_out");
  add_panel(ind);
  ind->add_option("--set", indicator_set, "indicators (default: full pool)")->delimiter(',');
  ind->add_option("--window", ind_window, "override window (0 = per-kind default)");
  ind->add_option("--slow", ind_slow, "slow span override (macd)");

  auto* pre = app.add_subcommand("pretrain", "pretrain a network to mimic an indicator");
  add_common(pre, "pretrain_out");
  add_panel(pre);
  add_splits(pre);
  add_network(pre);
  pre->add_option("--indicator", indicator, "pretraining target")->capture_default_str();
  pre->add_option("--epochs", cfg.pretrain_opt.epochs, "pretraining epochs");
  pre->add_option("--lr", cfg.pretrain_opt.lr, "learning rate");

  auto* trn = app.add_subcommand("train", "prune and train a network against the rank-IC objective");
  add_common(trn, "train_out");
  add_panel(trn);
  add_splits(trn);
  add_network(trn);
  trn->add_option("--net-in", net_in, "pretrained network file (omit to train from scratch)");
  trn->add_option("--prune", cfg.prune_rate, "pruning rate (0 disables)");
  trn->add_option("--epochs", cfg.train_opt.epochs, "training epochs");
  trn->add_option("--lr", cfg.train_opt.lr, "learning rate");
  trn->add_option("--patience", cfg.train_opt.patience, "early-stop patience");
  trn->add_option("--q", cfg.q, "days per loss evaluation");
  trn->add_option("--kernel-p", cfg.kernel_p, "rank-surrogate steepness");

  auto* gp = app.add_subcommand("gp", "evolve factor expressions by genetic programming");
  add_common(gp, "gp_out");
  add_panel(gp);
  add_splits(gp);
  gp->add_option("--population", cfg.gp.population, "population size");
  gp->add_option("--generations", cfg.gp.generations, "generations");
  gp->add_option("--max-depth", cfg.gp.max_depth, "expression depth cap");
  gp->add_option("--top-k", cfg.gp_top_k, "distinct best trees to keep");

  auto* ev = app.add_subcommand("evaluate", "rank-IC statistics for a factor on a day window");
  add_common(ev, "evaluate_out");
  add_panel(ev);
  add_splits(ev);
  ev->add_option("--factor", factor_path, "factor CSV");
  ev->add_option("--net", net_in, "trained network file");
  ev->add_option("--expr", expr, "factor expression, e.g. '(div (sub high low) close)'");
  ev->add_option("--window", window, "train|valid|test|all")->capture_default_str();

  auto* bt = app.add_subcommand("backtest", "quantile long/short backtest of a factor");
  add_common(bt, "backtest_out");
  add_panel(bt);
  add_splits(bt);
  bt->add_option("--factor", factor_path, "factor CSV");
  bt->add_option("--net", net_in, "trained network file");
  bt->add_option("--expr", expr, "factor expression");
  bt->add_option("--window", window, "train|valid|test|all")->capture_default_str();
  bt->add_option("--quantile", cfg.backtest_quantile, "long/short quantile");
  bt->add_option("--commission", cfg.backtest_commission, "commission per unit turnover");
  bt->add_option("--mode", cfg.backtest_mode, "long-short|long-minus-benchmark");

  auto* run = app.add_subcommand("run", "run a full scheme end-to-end into a run directory");
  add_common(run, cfg.out_dir);
  std::string scheme_str;
  bool dump_config = false;
  run->add_option("--scheme", scheme_str, "only-gp|only-nn|gp-and-nn|pk-only|combine");
  run->add_option("--data", cfg.data_path, "price panel CSV (omit for synthetic)");
  run->add_flag("--dump-config", dump_config, "print the effective config as JSON and exit");

  auto* cmp = app.add_subcommand("compare", "compare completed run directories");
  cmp->add_option("runs", run_dirs, "run directories")->required()->expected(-1);
  cmp->add_option("--config", config_path, "config file (ignored)");
  cmp->add_option("--seed", cfg.seed, "RNG seed (ignored)");
  cmp->add_option("--out", out_dir, "directory for comparison.json + comparison.txt");

  CLI11_PARSE(app, argc, argv);

  const CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (sub->count("--out") == 0) {
    const auto it = out_defaults.find(sub);
    out_dir = it != out_defaults.end() ? it->second : std::string();
  }
  try {
    if (sub == gen) return cmd_gen_data(cfg, out_dir);
    if (sub == ind) return cmd_indicators(panel_path, indicator_set, ind_window, ind_slow, out_dir);
    if (sub == pre) return cmd_pretrain(cfg, panel_path, indicator, out_dir);
    if (sub == trn) return cmd_train(cfg, panel_path, net_in, out_dir);
    if (sub == gp) return cmd_gp(cfg, panel_path, out_dir);
    if (sub == ev) return cmd_evaluate(cfg, panel_path, factor_path, net_in, expr, window, out_dir);
    if (sub == bt) return cmd_backtest(cfg, panel_path, factor_path, net_in, expr, window, out_dir);
    if (sub == run) {
      if (!scheme_str.empty()) cfg.scheme = forge::scheme_from(scheme_str);
      cfg.out_dir = out_dir;
      if (dump_config) {
        std::printf("%s\n", forge::config_to_json(cfg).dump(2).c_str());
        return 0;
      }
      return cmd_run(cfg);
    }
    if (sub == cmp) return cmd_compare(run_dirs, out_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s: error: %s\n", name.c_str(), e.what());
    return 1;
  }
  return 0;
}
