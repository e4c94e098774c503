#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/batches.hpp"
#include "forge/core.hpp"
#include "forge/factor_train.hpp"
#include "forge/gp.hpp"
#include "forge/indicators.hpp"
#include "forge/portfolio.hpp"
#include "forge/sha1.hpp"
#include "forge/synthetic.hpp"

namespace forge {

enum class Scheme { OnlyGp, OnlyNn, GpAndNn, PkOnly, Combine };

inline std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::OnlyGp: return "only-gp";
    case Scheme::OnlyNn: return "only-nn";
    case Scheme::GpAndNn: return "gp-and-nn";
    case Scheme::PkOnly: return "pk-only";
    case Scheme::Combine: return "combine";
  }
  throw Error("unknown scheme");
}

inline Scheme scheme_from(const std::string& s) {
  for (auto v : {Scheme::OnlyGp, Scheme::OnlyNn, Scheme::GpAndNn, Scheme::PkOnly, Scheme::Combine})
    if (scheme_name(v) == s) return v;
  throw Error("unknown scheme: " + s);
}

struct NetworkSpec {
  std::string kind = "fcn";  // fcn | lstm | conv
  std::size_t depth = 3;     // fcn hidden layers / conv layers
  std::size_t width = 64;    // fcn width
  std::size_t hidden = 32;   // lstm hidden size
  std::size_t kernel = 3;    // conv kernel width
  std::string activation = "tanh";
};

struct SyntheticSpec {
  std::size_t n_symbols = 50;
  std::size_t n_days = 420;
  double target_spearman = 0.3;
  std::size_t reversal_days = 5;
};

struct ExperimentConfig {
  std::string data_path;                   // empty -> synthetic
  SyntheticSpec synthetic;
  SplitSpec split;                         // 250 / 30 / 90
  std::size_t m = 30;
  std::size_t horizon = 5;                 // forward-return span
  std::size_t q = 20;                      // days per loss evaluation
  double kernel_p = 1.83;
  double prune_rate = 0.3;
  NetworkSpec network;
  std::vector<std::string> seed_indicators = {"ma", "ema", "macd", "rsi"};
  PretrainOptions pretrain_opt;
  TrainOptions train_opt;
  GpOptions gp;
  std::size_t gp_top_k = 3;
  std::size_t diversity_k = 3;
  double backtest_quantile = 0.2;
  double backtest_commission = 0.003;
  std::string backtest_mode = "long-short";  // or "long-minus-benchmark"
  std::size_t combine_top_k = 5;
  Scheme scheme = Scheme::OnlyNn;
  std::uint64_t seed = 1;
  std::string out_dir = "run";
};

// ---------------------------------------------------------------------------
// Config <-> JSON

namespace detail {

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::maybe(j, "data_path", c.data_path);
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    detail::maybe(s, "n_symbols", c.synthetic.n_symbols);
    detail::maybe(s, "n_days", c.synthetic.n_days);
    detail::maybe(s, "target_spearman", c.synthetic.target_spearman);
    detail::maybe(s, "reversal_days", c.synthetic.reversal_days);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::maybe(s, "train_days", c.split.train_days);
    detail::maybe(s, "valid_days", c.split.valid_days);
    detail::maybe(s, "test_days", c.split.test_days);
  }
  detail::maybe(j, "m", c.m);
  detail::maybe(j, "horizon", c.horizon);
  detail::maybe(j, "q", c.q);
  detail::maybe(j, "kernel_p", c.kernel_p);
  detail::maybe(j, "prune_rate", c.prune_rate);
  if (j.contains("network")) {
    const auto& n = j.at("network");
    detail::maybe(n, "kind", c.network.kind);
    detail::maybe(n, "depth", c.network.depth);
    detail::maybe(n, "width", c.network.width);
    detail::maybe(n, "hidden", c.network.hidden);
    detail::maybe(n, "kernel", c.network.kernel);
    detail::maybe(n, "activation", c.network.activation);
  }
  detail::maybe(j, "seed_indicators", c.seed_indicators);
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    detail::maybe(p, "epochs", c.pretrain_opt.epochs);
    detail::maybe(p, "lr", c.pretrain_opt.lr);
    detail::maybe(p, "clip_outliers", c.pretrain_opt.clip_outliers);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::maybe(t, "epochs", c.train_opt.epochs);
    detail::maybe(t, "lr", c.train_opt.lr);
    detail::maybe(t, "patience", c.train_opt.patience);
  }
  if (j.contains("gp")) {
    const auto& g = j.at("gp");
    detail::maybe(g, "population", c.gp.population);
    detail::maybe(g, "generations", c.gp.generations);
    int depth = c.gp.max_depth;
    detail::maybe(g, "max_depth", depth);
    c.gp.max_depth = depth;
    detail::maybe(g, "top_k", c.gp_top_k);
  }
  detail::maybe(j, "diversity_k", c.diversity_k);
  if (j.contains("backtest")) {
    const auto& b = j.at("backtest");
    detail::maybe(b, "quantile", c.backtest_quantile);
    detail::maybe(b, "commission", c.backtest_commission);
    detail::maybe(b, "mode", c.backtest_mode);
  }
  detail::maybe(j, "combine_top_k", c.combine_top_k);
  if (j.contains("scheme")) c.scheme = scheme_from(j.at("scheme").get<std::string>());
  detail::maybe(j, "seed", c.seed);
  detail::maybe(j, "out_dir", c.out_dir);
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["data_path"] = c.data_path;
  j["synthetic"] = {{"n_symbols", c.synthetic.n_symbols},
                    {"n_days", c.synthetic.n_days},
                    {"target_spearman", c.synthetic.target_spearman},
                    {"reversal_days", c.synthetic.reversal_days}};
  j["split"] = {{"train_days", c.split.train_days},
                {"valid_days", c.split.valid_days},
                {"test_days", c.split.test_days}};
  j["m"] = c.m;
  j["horizon"] = c.horizon;
  j["q"] = c.q;
  j["kernel_p"] = c.kernel_p;
  j["prune_rate"] = c.prune_rate;
  j["network"] = {{"kind", c.network.kind},       {"depth", c.network.depth},
                  {"width", c.network.width},     {"hidden", c.network.hidden},
                  {"kernel", c.network.kernel},   {"activation", c.network.activation}};
  j["seed_indicators"] = c.seed_indicators;
  j["pretrain"] = {{"epochs", c.pretrain_opt.epochs},
                   {"lr", c.pretrain_opt.lr},
                   {"clip_outliers", c.pretrain_opt.clip_outliers}};
  j["train"] = {{"epochs", c.train_opt.epochs},
                {"lr", c.train_opt.lr},
                {"patience", c.train_opt.patience}};
  j["gp"] = {{"population", c.gp.population},
             {"generations", c.gp.generations},
             {"max_depth", c.gp.max_depth},
             {"top_k", c.gp_top_k}};
  j["diversity_k"] = c.diversity_k;
  j["backtest"] = {{"quantile", c.backtest_quantile},
                   {"commission", c.backtest_commission},
                   {"mode", c.backtest_mode}};
  j["combine_top_k"] = c.combine_top_k;
  j["scheme"] = scheme_name(c.scheme);
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Pipeline

struct RunResult {
  std::string dir;
  nlohmann::json report;
  nlohmann::json manifest;
};

namespace detail {

struct StageClock {
  std::map<std::string, double> seconds;
  template <class F>
  auto timed(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        seconds[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return;
      } else {
        auto r = f();
        seconds[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return r;
      }
    } catch (const Error& e) {
      throw Error("stage " + name + ": " + e.what());
    }
  }
};

inline NetworkGraph build_network(const NetworkSpec& spec, std::size_t m, std::uint64_t seed) {
  if (spec.kind == "fcn")
    return build_fcn(spec.depth, spec.width, m, seed, activation_from(spec.activation));
  if (spec.kind == "lstm") return build_recurrent(spec.hidden, m, seed);
  if (spec.kind == "conv") return build_cross_sectional_conv(spec.kernel, spec.depth, m, seed);
  throw Error("unknown network kind: " + spec.kind);
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for write: " + path);
  out << content;
}

inline nlohmann::json ic_stats_json(const IcStats& st) {
  return {{"mean_ic", st.mean},
          {"ic_std", st.std},
          {"ir", st.ir},
          {"days", st.day_ic.size()},
          {"skipped_days", st.skipped_days}};
}

inline nlohmann::json backtest_json(const BacktestReport& bt) {
  return {{"cumulative_return", bt.cumulative_return},
          {"annualized_return", bt.annualized_return},
          {"max_drawdown", bt.max_drawdown},
          {"sharpe", bt.sharpe},
          {"turnover", bt.total_turnover},
          {"commission_paid", bt.commission_paid},
          {"periods", bt.periods},
          {"skipped", bt.skipped}};
}

inline void write_equity_csv(const std::string& path, const BacktestReport& bt) {
  std::ostringstream out;
  out << "date,period_return,equity\n";
  out << ",," << format_double(bt.equity.front()) << '\n';
  for (std::size_t i = 0; i < bt.periods; ++i)
    out << bt.dates[i] << ',' << format_double(bt.period_returns[i]) << ','
        << format_double(bt.equity[i + 1]) << '\n';
  write_text(path, out.str());
}

inline void write_distance_csv(const std::string& path, const std::vector<std::string>& names,
                               const std::vector<double>& d) {
  const std::size_t n = names.size();
  std::ostringstream out;
  out << "factor";
  for (const auto& nm : names) out << ',' << nm;
  out << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << names[i];
    for (std::size_t j = 0; j < n; ++j) out << ',' << format_double(d[i * n + j]);
    out << '\n';
  }
  write_text(path, out.str());
}

}  // namespace detail

/// Runs the configured scheme end-to-end and persists every artifact under
/// config.out_dir. The manifest holds the canonical config and content
/// hashes only, so identical (config, seed) reruns are bit-identical;
/// wall-clock timings go to a separate, unhashed file.
inline RunResult run_pipeline(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  detail::StageClock clock;
  fs::create_directories(cfg.out_dir);
  fs::create_directories(cfg.out_dir + "/factors");

  // --- data
  PricePanel panel;
  std::optional<FactorMatrix> hidden;
  clock.timed("data", [&] {
    if (!cfg.data_path.empty()) {
      panel = load_panel(cfg.data_path);
    } else {
      AlphaSpec a;
      a.target_spearman = cfg.synthetic.target_spearman;
      a.reversal_days = cfg.synthetic.reversal_days;
      a.horizon = cfg.horizon;
      auto mkt = generate_synthetic_market(cfg.synthetic.n_symbols, cfg.synthetic.n_days,
                                           cfg.seed, a);
      panel = std::move(mkt.panel);
      hidden = std::move(mkt.hidden);
    }
    save_panel_csv(panel, cfg.out_dir + "/panel.csv");
    if (hidden) save_factor_csv(*hidden, cfg.out_dir + "/hidden.csv");
  });

  BatchSet batches = clock.timed("batches", [&] { return make_batches(panel, cfg.split, cfg.m, cfg.horizon); });
  const std::size_t test_lo = cfg.split.train_days + cfg.split.valid_days;
  const std::size_t test_hi = test_lo + cfg.split.test_days;
  const std::size_t valid_lo = cfg.split.train_days;
  const std::size_t valid_hi = valid_lo + cfg.split.valid_days;

  KernelParams kp;
  kp.p = cfg.kernel_p;
  TrainOptions train_opt = cfg.train_opt;
  train_opt.q = cfg.q;
  train_opt.kernel = kp;

  nlohmann::json report;
  report["scheme"] = scheme_name(cfg.scheme);
  nlohmann::json factors_json = nlohmann::json::object();

  std::vector<std::string> pool_names;
  std::vector<FactorMatrix> pool_factors;
  auto add_factor = [&](const std::string& name, const FactorMatrix& f) {
    save_factor_csv(f, cfg.out_dir + "/factors/" + name + ".csv");
    const IcStats st = ic_stats(f, panel, test_lo, test_hi, cfg.horizon);
    factors_json[name] = detail::ic_stats_json(st);
    pool_names.push_back(name);
    pool_factors.push_back(f);
    return st;
  };

  // --- GP stage
  GpRun gp_run;
  const bool wants_gp = cfg.scheme == Scheme::OnlyGp || cfg.scheme == Scheme::GpAndNn;
  if (wants_gp) {
    gp_run = clock.timed("gp", [&] {
      GpOptions g = cfg.gp;
      g.horizon = cfg.horizon;
      // Trees see only the training window; labels stay inside it.
      return evolve(panel, cfg.m, cfg.split.train_days - cfg.horizon, g, cfg.seed, cfg.gp_top_k);
    });
    fs::create_directories(cfg.out_dir + "/gp");
    std::ostringstream trees;
    for (std::size_t i = 0; i < gp_run.best.size(); ++i)
      trees << detail::format_double(gp_run.best_fitness[i]) << '\t' << format_tree(gp_run.best[i]) << '\n';
    detail::write_text(cfg.out_dir + "/gp/best_trees.txt", trees.str());
    nlohmann::json gj;
    gj["best_fitness_per_generation"] = gp_run.best_per_generation;
    gj["best_trees"] = nlohmann::json::array();
    for (std::size_t i = 0; i < gp_run.best.size(); ++i)
      gj["best_trees"].push_back({{"expr", format_tree(gp_run.best[i])},
                                  {"train_fitness", gp_run.best_fitness[i]}});
    report["gp"] = gj;
    clock.timed("gp-eval", [&] {
      for (std::size_t i = 0; i < gp_run.best.size(); ++i)
        add_factor("gp_" + std::to_string(i), eval_tree(gp_run.best[i], panel));
    });
  }

  // --- prior-knowledge pool
  const bool wants_pk = cfg.scheme == Scheme::PkOnly || cfg.scheme == Scheme::Combine;
  std::map<std::string, FactorMatrix> indicator_values;
  auto indicator_factor = [&](const std::string& name) -> const FactorMatrix& {
    auto it = indicator_values.find(name);
    if (it == indicator_values.end()) {
      IndicatorSpec spec;
      spec.kind = indicator_kind_from(name);
      it = indicator_values.emplace(name, compute_indicator(spec, panel)).first;
    }
    return it->second;
  };
  if (wants_pk) {
    clock.timed("indicators", [&] {
      for (const auto& name : cfg.seed_indicators) add_factor("pk_" + name, indicator_factor(name));
    });
  }

  // --- neural candidates
  const bool wants_nn =
      cfg.scheme == Scheme::OnlyNn || cfg.scheme == Scheme::GpAndNn || cfg.scheme == Scheme::Combine;
  nlohmann::json candidates_json = nlohmann::json::array();
  if (wants_nn) {
    fs::create_directories(cfg.out_dir + "/candidates");
    struct SeedTarget {
      std::string name;
      const FactorMatrix* target;
      std::optional<IndicatorKind> rule;
      bool from_gp;
    };
    std::vector<SeedTarget> seeds;
    std::vector<FactorMatrix> gp_factors;
    if (cfg.scheme == Scheme::GpAndNn) {
      gp_factors.reserve(gp_run.best.size());
      for (std::size_t i = 0; i < gp_run.best.size(); ++i)
        gp_factors.push_back(eval_tree(gp_run.best[i], panel));
      for (std::size_t i = 0; i < gp_factors.size(); ++i)
        seeds.push_back({"gpseed_" + std::to_string(i), &gp_factors[i], std::nullopt, true});
    } else {
      for (const auto& name : cfg.seed_indicators)
        seeds.push_back({name, &indicator_factor(name), indicator_kind_from(name), false});
    }
    std::size_t idx = 0;
    for (const auto& seed_target : seeds) {
      const std::string cname = "cand_" + seed_target.name;
      const std::uint64_t cand_seed = cfg.seed + 1000 * (idx + 1);
      nlohmann::json cj;
      cj["name"] = cname;
      cj["seed"] = cand_seed;
      cj["pretrain_target"] = seed_target.name;
      cj["gp_initialized"] = seed_target.from_gp;
      NetworkGraph net = detail::build_network(cfg.network, cfg.m, cand_seed);
      PretrainReport prep = clock.timed("pretrain", [&] {
        return pretrain(net, *seed_target.target, panel, batches, cfg.pretrain_opt, cand_seed,
                        seed_target.rule);
      });
      cj["pretrain"] = {{"train_mse", prep.train_mse},
                        {"test_mse", prep.test_mse},
                        {"train_rel_err", prep.train_rel_err},
                        {"test_rel_err", prep.test_rel_err},
                        {"train_accuracy", prep.train_accuracy},
                        {"test_accuracy", prep.test_accuracy},
                        {"epochs_run", prep.epochs_run},
                        {"diverged", prep.diverged}};
      clock.timed("prune", [&] { prune(net, cfg.prune_rate); });
      cj["prune_rate"] = cfg.prune_rate;
      FactorCandidate cand;
      cand.net = std::move(net);
      cand.seed_name = seed_target.name;
      cand.pretrained = true;
      cand.pruned_rate = cfg.prune_rate;
      cand.gp_initialized = seed_target.from_gp;
      cand = clock.timed("train", [&] { return train_factor(std::move(cand), batches, train_opt, cand_seed + 7); });
      const Evaluation ev = clock.timed("evaluate", [&] { return evaluate_factor(cand.net, batches.test, panel); });
      cj["best_valid_ic"] = cand.best_valid_ic;
      cj["best_epoch"] = cand.best_epoch;
      cj["aborted"] = cand.aborted;
      cj["test_mean_ic"] = ev.mean_ic;
      nlohmann::json hist = nlohmann::json::array();
      for (const auto& h : cand.history)
        hist.push_back({{"train_ic", h.train_ic}, {"valid_ic", h.valid_ic}});
      cj["history"] = hist;
      save_network(cand.net, cfg.out_dir + "/candidates/" + cname + ".net");
      detail::write_text(cfg.out_dir + "/candidates/" + cname + ".meta.json", cj.dump(2) + "\n");
      FactorMatrix cand_factor = ev.factor;
      if (cfg.scheme == Scheme::Combine) {
        // Combination weights are fitted on validation days, so the factor
        // needs values there as well.
        const Evaluation vev = evaluate_factor(cand.net, batches.valid, panel);
        for (std::size_t cell = 0; cell < vev.factor.mask.size(); ++cell)
          if (vev.factor.mask[cell]) {
            cand_factor.mask[cell] = 1;
            cand_factor.values[cell] = vev.factor.values[cell];
          }
      }
      add_factor(cname, cand_factor);
      candidates_json.push_back(cj);
      ++idx;
    }
  }
  if (!candidates_json.empty()) report["candidates"] = candidates_json;
  report["factors"] = factors_json;

  // --- pool-level analytics
  if (pool_factors.size() >= 2) {
    clock.timed("diversity", [&] {
      const std::size_t k = std::min(cfg.diversity_k, pool_factors.size());
      const DiversityReport div = diversity_score(pool_factors, test_lo, test_hi, k, cfg.seed);
      report["diversity"] = {{"score", div.score},
                             {"k", k},
                             {"assignment", div.assignment},
                             {"medoids", div.medoids},
                             {"days_used", div.days_used}};
      detail::write_distance_csv(cfg.out_dir + "/distance_matrix.csv", pool_names, div.distance);
    });
  }

  std::optional<FactorMatrix> chosen;  // factor carried into the backtest
  std::string chosen_name;
  if (cfg.scheme == Scheme::Combine && pool_factors.size() >= 2) {
    clock.timed("combine", [&] {
      // Weights come from validation-window ICs; the test window stays out
      // of the weight fit.
      FactorSet fs_all = build_factor_set(pool_names, pool_factors, panel, valid_lo, valid_hi,
                                          cfg.horizon);
      Combination comb = optimal_combination(fs_all);
      std::vector<std::size_t> order(comb.weights.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(comb.weights[a]) > std::abs(comb.weights[b]);
      });
      order.resize(std::min(cfg.combine_top_k, order.size()));
      std::vector<std::string> kept_names;
      std::vector<FactorMatrix> kept;
      for (std::size_t i : order) {
        kept_names.push_back(pool_names[i]);
        kept.push_back(pool_factors[i]);
      }
      FactorSet fs_kept = build_factor_set(kept_names, kept, panel, valid_lo, valid_hi, cfg.horizon);
      Combination final_comb = optimal_combination(fs_kept);
      nlohmann::json cj;
      cj["pool"] = pool_names;
      cj["kept"] = kept_names;
      cj["weights"] = final_comb.weights;
      cj["optimal_ic_valid"] = final_comb.optimal_ic;
      cj["ridge"] = final_comb.ridge;
      save_factor_csv(final_comb.combined, cfg.out_dir + "/factors/combined.csv");
      const IcStats st = ic_stats(final_comb.combined, panel, test_lo, test_hi, cfg.horizon);
      cj["test"] = detail::ic_stats_json(st);
      report["combine"] = cj;
      chosen = std::move(final_comb.combined);
      chosen_name = "combined";
    });
  }

  if (!chosen && !pool_factors.empty()) {
    // Backtest the best factor by test-window IC.
    std::size_t best = 0;
    double best_ic = -2.0;
    for (std::size_t i = 0; i < pool_factors.size(); ++i) {
      const double mean = factors_json[pool_names[i]]["mean_ic"].get<double>();
      if (mean > best_ic) {
        best_ic = mean;
        best = i;
      }
    }
    chosen = pool_factors[best];
    chosen_name = pool_names[best];
  }

  if (chosen) {
    clock.timed("backtest", [&] {
      const BacktestMode mode = cfg.backtest_mode == "long-minus-benchmark"
                                    ? BacktestMode::LongMinusBenchmark
                                    : BacktestMode::LongShort;
      const BacktestReport bt = backtest(*chosen, panel, test_lo, test_hi, cfg.horizon,
                                         cfg.backtest_quantile, cfg.backtest_commission, mode);
      report["backtest"] = detail::backtest_json(bt);
      report["backtest"]["factor"] = chosen_name;
      detail::write_equity_csv(cfg.out_dir + "/equity.csv", bt);
    });
  }

  detail::write_text(cfg.out_dir + "/report.json", report.dump(2) + "\n");

  // --- manifest: canonical config + content hashes of every artifact
  nlohmann::json manifest;
  manifest["config"] = config_to_json(cfg);
  manifest["seed"] = cfg.seed;
  nlohmann::json hashes = nlohmann::json::object();
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(cfg.out_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), cfg.out_dir).generic_string();
    if (rel == "manifest.json" || rel == "timings.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  for (const auto& rel : files) hashes[rel] = git_blob_hash_file(cfg.out_dir + "/" + rel);
  manifest["artifacts"] = hashes;
  manifest["data_hash"] = hashes.contains("panel.csv") ? hashes["panel.csv"] : nlohmann::json();
  detail::write_text(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");

  nlohmann::json timings;
  for (const auto& [k, v] : clock.seconds) timings[k] = v;
  detail::write_text(cfg.out_dir + "/timings.json", timings.dump(2) + "\n");

  RunResult rr;
  rr.dir = cfg.out_dir;
  rr.report = std::move(report);
  rr.manifest = std::move(manifest);
  return rr;
}

/// Side-by-side table for completed runs on the same data.
inline nlohmann::json compare_schemes(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw Error("compare: no run directories given");
  nlohmann::json rows = nlohmann::json::array();
  std::string data_hash;
  for (const auto& dir : run_dirs) {
    nlohmann::json manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    nlohmann::json report = nlohmann::json::parse(read_file(dir + "/report.json"));
    nlohmann::json timings = nlohmann::json::parse(read_file(dir + "/timings.json"));
    const std::string dh = manifest["data_hash"].is_string() ? manifest["data_hash"].get<std::string>() : "";
    if (data_hash.empty()) data_hash = dh;
    else if (dh != data_hash) throw Error("compare: run " + dir + " used different data");
    double total_s = 0.0;
    for (const auto& [k, v] : timings.items()) {
      (void)k;
      total_s += v.get<double>();
    }
    double best_ic = -2.0;
    if (report.contains("factors"))
      for (const auto& [name, st] : report["factors"].items()) {
        (void)name;
        best_ic = std::max(best_ic, st["mean_ic"].get<double>());
      }
    nlohmann::json row;
    row["run"] = dir;
    row["scheme"] = report["scheme"];
    row["network"] = manifest["config"]["network"]["kind"];
    row["data_hash"] = dh;
    row["best_test_ic"] = best_ic;
    if (report.contains("diversity")) row["diversity"] = report["diversity"]["score"];
    if (report.contains("backtest")) {
      row["sharpe"] = report["backtest"]["sharpe"];
      row["annualized_return"] = report["backtest"]["annualized_return"];
      row["max_drawdown"] = report["backtest"]["max_drawdown"];
    }
    row["wall_seconds"] = total_s;
    rows.push_back(row);
  }
  nlohmann::json out;
  out["data_hash"] = data_hash;
  out["rows"] = rows;
  return out;
}

/// Fixed-width text rendering of a compare_schemes table.
inline std::string render_comparison(const nlohmann::json& cmp) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-10s %-8s %12s %10s %10s %12s\n", "run", "scheme",
                "network", "best_ic", "diversity", "sharpe", "wall_s");
  out << line;
  for (const auto& row : cmp["rows"]) {
    auto num = [&](const char* key) {
      return row.contains(key) ? row[key].get<double>() : std::nan("");
    };
    std::snprintf(line, sizeof line, "%-24s %-10s %-8s %12.4f %10.4f %10.4f %12.2f\n",
                  row["run"].get<std::string>().c_str(),
                  row["scheme"].get<std::string>().c_str(),
                  row["network"].get<std::string>().c_str(), num("best_test_ic"),
                  num("diversity"), num("sharpe"), num("wall_seconds"));
    out << line;
  }
  return out.str();
}

}  // namespace forge
