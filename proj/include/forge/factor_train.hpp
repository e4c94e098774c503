#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "forge/batches.hpp"
#include "forge/core.hpp"
#include "forge/ic.hpp"
#include "forge/ic_loss.hpp"
#include "forge/indicators.hpp"
#include "forge/network.hpp"
#include "forge/panel.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Pre-training: regress the network onto a target factor (an indicator, or a
// mined factor when seeding from the evolutionary baseline).

struct PretrainOptions {
  std::size_t epochs = 30;
  double lr = 0.05;
  double clip_norm = 5.0;
  bool clip_outliers = true;  // clamp standardized targets to +-outlier_sd
  double outlier_sd = 5.0;
};

struct PretrainReport {
  double train_mse = 0.0, test_mse = 0.0;        // standardized target units
  double train_rel_err = 0.0, test_rel_err = 0.0;  // raw-scale |y-f|/|y|
  double train_accuracy = -1.0, test_accuracy = -1.0;  // binary decisions
  double target_mean = 0.0, target_std = 1.0;
  std::size_t epochs_run = 0;
  bool diverged = false;
};

namespace detail {

// The window of the batch dated t ends at day t-1, where the target factor
// is fully determined by data the network can see.
inline bool pretrain_cell(const FactorMatrix& target, const WindowBatch& b, std::size_t i,
                          double* out) {
  const std::size_t day = b.day - 1;
  const std::size_t sym = b.symbols[i];
  if (!target.present(day, sym)) return false;
  *out = target.at(day, sym);
  return true;
}

struct TargetStats {
  double mean = 0.0, sd = 1.0;
};

inline TargetStats target_stats(const FactorMatrix& target, const std::vector<WindowBatch>& train) {
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& b : train)
    for (std::size_t i = 0; i < b.n(); ++i) {
      double y;
      if (!pretrain_cell(target, b, i, &y)) continue;
      sum += y;
      sum2 += y * y;
      ++n;
    }
  if (n < 2) throw Error("pretrain: target not computable over the training split");
  TargetStats st;
  st.mean = sum / static_cast<double>(n);
  double var = sum2 / static_cast<double>(n) - st.mean * st.mean;
  st.sd = var > 1e-16 ? std::sqrt(var) : 1.0;
  return st;
}

struct MseEval {
  double mse = 0.0;
  double rel_err = 0.0;
  std::size_t cells = 0;
};

inline MseEval mse_over(const NetworkGraph& net, const std::vector<WindowBatch>& split,
                        const FactorMatrix& target, const TargetStats& st,
                        const PretrainOptions& opt) {
  MseEval ev;
  double rel_sum = 0.0;
  std::size_t rel_n = 0;
  for (const auto& b : split) {
    const auto out = forward_values(net, batch_tensor(b));
    for (std::size_t i = 0; i < b.n(); ++i) {
      double y_raw;
      if (!pretrain_cell(target, b, i, &y_raw)) continue;
      double yz = (y_raw - st.mean) / st.sd;
      if (opt.clip_outliers) yz = std::clamp(yz, -opt.outlier_sd, opt.outlier_sd);
      const double d = out[i] - yz;
      ev.mse += d * d;
      ++ev.cells;
      if (std::abs(y_raw) > 1e-8) {
        const double f_raw = out[i] * st.sd + st.mean;
        rel_sum += std::abs(y_raw - f_raw) / std::abs(y_raw);
        ++rel_n;
      }
    }
  }
  if (ev.cells > 0) ev.mse /= static_cast<double>(ev.cells);
  if (rel_n > 0) ev.rel_err = rel_sum / static_cast<double>(rel_n);
  return ev;
}

/// Predicted factor values on the raw scale, placed at each batch's
/// window-end day so the decision rules line up with the panel.
inline FactorMatrix predicted_factor(const NetworkGraph& net, const std::vector<WindowBatch>& split,
                                     const PricePanel& panel, const TargetStats& st) {
  FactorMatrix f;
  f.dates = panel.dates;
  f.symbols = panel.symbols;
  f.values.assign(panel.days() * panel.n_symbols(), 0.0);
  f.mask.assign(panel.days() * panel.n_symbols(), 0);
  for (const auto& b : split) {
    const auto out = forward_values(net, batch_tensor(b));
    for (std::size_t i = 0; i < b.n(); ++i) f.set(b.day - 1, b.symbols[i], out[i] * st.sd + st.mean);
  }
  return f;
}

inline double decision_agreement(IndicatorKind kind, const FactorMatrix& predicted,
                                 const FactorMatrix& target, const PricePanel& panel) {
  const FactorMatrix dp = indicator_to_decision(kind, predicted, panel);
  const FactorMatrix dt = indicator_to_decision(kind, target, panel);
  std::size_t match = 0, total = 0;
  for (std::size_t t = 0; t < panel.days(); ++t)
    for (std::size_t s = 0; s < panel.n_symbols(); ++s) {
      if (!dp.present(t, s) || !dt.present(t, s)) continue;
      ++total;
      if (dp.at(t, s) == dt.at(t, s)) ++match;
    }
  return total > 0 ? static_cast<double>(match) / static_cast<double>(total) : -1.0;
}

}  // namespace detail

/// Minimizes mean squared error between the network output and the target
/// factor at each batch's window end. `rule` adds binary-decision scoring.
inline PretrainReport pretrain(NetworkGraph& net, const FactorMatrix& target,
                               const PricePanel& panel, const BatchSet& batches,
                               const PretrainOptions& opt, std::uint64_t seed,
                               std::optional<IndicatorKind> rule = std::nullopt) {
  if (batches.train.empty()) throw Error("pretrain: no training batches");
  const detail::TargetStats st = detail::target_stats(target, batches.train);
  PretrainReport rep;
  rep.target_mean = st.mean;
  rep.target_std = st.sd;

  Rng rng(seed);
  std::vector<std::size_t> order(batches.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  NetworkGraph snapshot = net;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    try {
      for (std::size_t bi : order) {
        const WindowBatch& b = batches.train[bi];
        std::vector<double> y(b.n(), 0.0);
        std::vector<double> sel(b.n(), 0.0);
        double n_sel = 0.0;
        for (std::size_t i = 0; i < b.n(); ++i) {
          double raw;
          if (!detail::pretrain_cell(target, b, i, &raw)) continue;
          double yz = (raw - st.mean) / st.sd;
          if (opt.clip_outliers) yz = std::clamp(yz, -opt.outlier_sd, opt.outlier_sd);
          y[i] = yz;
          sel[i] = 1.0;
          n_sel += 1.0;
        }
        if (n_sel == 0.0) continue;
        Tape tape;
        ForwardPass fp = run_forward(tape, net, batch_tensor(b));
        Var out = tape.reshape(fp.output, {b.n()});
        Var diff = tape.sub(out, tape.leaf(Tensor({b.n()}, y)));
        Var sq = tape.mul(tape.mul(diff, diff), tape.leaf(Tensor({b.n()}, sel)));
        Var loss = tape.scale(tape.sum_all(sq), 1.0 / n_sel);
        tape.backward(loss);
        NetGradients g = collect_grads(tape, fp);
        clip_gradients(g, opt.clip_norm);
        sgd_step(net, g, opt.lr);
      }
    } catch (const Error& e) {
      warn(std::string("pretrain aborted: ") + e.what());
      net = snapshot;
      rep.diverged = true;
      break;
    }
    snapshot = net;
    ++rep.epochs_run;
  }

  const auto train_ev = detail::mse_over(net, batches.train, target, st, opt);
  const auto test_ev = detail::mse_over(net, batches.test, target, st, opt);
  rep.train_mse = train_ev.mse;
  rep.test_mse = test_ev.mse;
  rep.train_rel_err = train_ev.rel_err;
  rep.test_rel_err = test_ev.rel_err;
  if (rule) {
    rep.train_accuracy = detail::decision_agreement(
        *rule, detail::predicted_factor(net, batches.train, panel, st), target, panel);
    rep.test_accuracy = detail::decision_agreement(
        *rule, detail::predicted_factor(net, batches.test, panel, st), target, panel);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Pruning: permanently mask the smallest weights of every weight tensor.

inline void prune(NetworkGraph& net, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw Error("prune: rate must be in [0, 1)");
  for (auto ref : param_refs(net)) {
    if (!ref.mask) continue;  // biases stay dense
    const Tensor& w = *ref.value;
    Tensor mask(w.shape, std::vector<double>(w.numel(), 1.0));
    const std::size_t n_prune = static_cast<std::size_t>(rate * static_cast<double>(w.numel()));
    if (n_prune > 0) {
      std::vector<std::size_t> idx(w.numel());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(w.data[a]), mb = std::abs(w.data[b]);
        return ma != mb ? ma < mb : a < b;
      });
      for (std::size_t i = 0; i < n_prune; ++i) mask.data[idx[i]] = 0.0;
    }
    *ref.mask = std::move(mask);
  }
}

// ---------------------------------------------------------------------------
// IC training with validation early stopping.

struct TrainOptions {
  std::size_t q = 20;  // days averaged per loss evaluation
  std::size_t epochs = 60;
  double lr = 0.05;
  std::size_t patience = 10;
  double clip_norm = 5.0;
  KernelParams kernel;
};

struct EpochStats {
  double train_ic = 0.0;  // surrogate, mean over the epoch's loss groups
  double valid_ic = 0.0;  // exact rank IC on the validation split
};

struct FactorCandidate {
  NetworkGraph net;
  std::string seed_name;  // indicator or expression that seeded pre-training
  bool pretrained = false;
  double pruned_rate = 0.0;
  bool gp_initialized = false;
  std::vector<EpochStats> history;
  double best_valid_ic = 0.0;
  std::size_t best_epoch = 0;
  bool aborted = false;
};

/// Mean per-day exact rank IC of the network against realized returns.
inline double mean_rank_ic(const NetworkGraph& net, const std::vector<WindowBatch>& split) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& b : split) {
    if (b.n() < 3) continue;
    bool degen = false;
    const double rho = exact_spearman(forward_values(net, batch_tensor(b)), b.returns, &degen);
    if (degen) continue;
    sum += rho;
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

/// Gradient steps on the negative mean-IC loss, q training days per step,
/// days reshuffled every epoch. Returns the best-validation snapshot.
inline FactorCandidate train_factor(FactorCandidate cand, const BatchSet& batches,
                                    const TrainOptions& opt, std::uint64_t seed) {
  if (batches.train.empty() || batches.valid.empty())
    throw Error("train_factor: empty training or validation split");
  if (opt.q < 1) throw Error("train_factor: q must be >= 1");

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < batches.train.size(); ++i)
    if (batches.train[i].n() >= 3) usable.push_back(i);
  if (usable.empty()) throw Error("train_factor: no usable training batches");

  Rng rng(seed);
  NetworkGraph best = cand.net;
  double best_valid = mean_rank_ic(cand.net, batches.valid);
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(usable);
    double ic_sum = 0.0;
    std::size_t ic_n = 0;
    try {
      for (std::size_t pos = 0; pos < usable.size(); pos += opt.q) {
        std::vector<const WindowBatch*> group;
        for (std::size_t j = pos; j < std::min(pos + opt.q, usable.size()); ++j)
          group.push_back(&batches.train[usable[j]]);
        IcLossResult r = ic_loss(cand.net, group, opt.kernel);
        for (double v : r.day_ic) ic_sum += v;
        ic_n += r.day_ic.size();
        clip_gradients(r.grads, opt.clip_norm);
        sgd_step(cand.net, r.grads, opt.lr);
      }
    } catch (const Error& e) {
      warn(std::string("ic training aborted: ") + e.what());
      cand.aborted = true;
      break;
    }
    EpochStats st;
    st.train_ic = ic_n > 0 ? ic_sum / static_cast<double>(ic_n) : 0.0;
    st.valid_ic = mean_rank_ic(cand.net, batches.valid);
    cand.history.push_back(st);
    if (st.valid_ic > best_valid + 1e-9) {
      best_valid = st.valid_ic;
      best = cand.net;
      best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }

  cand.net = std::move(best);
  cand.best_valid_ic = best_valid;
  cand.best_epoch = best_epoch;
  return cand;
}

// ---------------------------------------------------------------------------
// Evaluation: factor values plus per-day exact rank ICs on a split.

struct Evaluation {
  FactorMatrix factor;
  std::vector<double> day_ic;
  double mean_ic = 0.0;
  std::size_t skipped_days = 0;  // too few symbols or degenerate cross-section
};

inline Evaluation evaluate_factor(const NetworkGraph& net, const std::vector<WindowBatch>& split,
                                  const PricePanel& panel) {
  Evaluation ev;
  ev.factor.dates = panel.dates;
  ev.factor.symbols = panel.symbols;
  ev.factor.values.assign(panel.days() * panel.n_symbols(), 0.0);
  ev.factor.mask.assign(panel.days() * panel.n_symbols(), 0);
  double sum = 0.0;
  for (const auto& b : split) {
    const auto out = forward_values(net, batch_tensor(b));
    for (std::size_t i = 0; i < b.n(); ++i) ev.factor.set(b.day, b.symbols[i], out[i]);
    if (b.n() < 3) {
      ++ev.skipped_days;
      continue;
    }
    bool degen = false;
    const double rho = exact_spearman(out, b.returns, &degen);
    if (degen) {
      ++ev.skipped_days;
      continue;
    }
    ev.day_ic.push_back(rho);
    sum += rho;
  }
  if (!ev.day_ic.empty()) ev.mean_ic = sum / static_cast<double>(ev.day_ic.size());
  return ev;
}

}  // namespace forge
