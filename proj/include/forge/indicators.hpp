#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "forge/core.hpp"
#include "forge/panel.hpp"

namespace forge {

enum class IndicatorKind { MA, EMA, MACD, PVT, TOP10, DC, BOLL, RSI };

struct IndicatorSpec {
  IndicatorKind kind = IndicatorKind::MA;
  // window: N for MA/EMA/BOLL/DC/RSI, the fast span for MACD, the MA span
  // feeding TOP10. slow: MACD's slow span only. 0 selects the kind default.
  int window = 0;
  int slow = 0;
};

inline std::string indicator_name(IndicatorKind k) {
  switch (k) {
    case IndicatorKind::MA: return "ma";
    case IndicatorKind::EMA: return "ema";
    case IndicatorKind::MACD: return "macd";
    case IndicatorKind::PVT: return "pvt";
    case IndicatorKind::TOP10: return "top10";
    case IndicatorKind::DC: return "dc";
    case IndicatorKind::BOLL: return "boll";
    case IndicatorKind::RSI: return "rsi";
  }
  throw Error("unknown indicator kind");
}

inline IndicatorKind indicator_kind_from(const std::string& name) {
  for (auto k : {IndicatorKind::MA, IndicatorKind::EMA, IndicatorKind::MACD, IndicatorKind::PVT,
                 IndicatorKind::TOP10, IndicatorKind::DC, IndicatorKind::BOLL, IndicatorKind::RSI})
    if (indicator_name(k) == name) return k;
  throw Error("unknown indicator: " + name);
}

namespace detail {

inline IndicatorSpec resolve_spec(IndicatorSpec s) {
  if (s.window == 0) {
    switch (s.kind) {
      case IndicatorKind::MA:
      case IndicatorKind::EMA:
      case IndicatorKind::TOP10: s.window = 10; break;
      case IndicatorKind::MACD: s.window = 12; break;
      case IndicatorKind::PVT: s.window = 1; break;
      case IndicatorKind::DC:
      case IndicatorKind::BOLL: s.window = 20; break;
      case IndicatorKind::RSI: s.window = 14; break;
    }
  }
  if (s.kind == IndicatorKind::MACD && s.slow == 0) s.slow = 26;
  if (s.window < 1) throw Error("indicator window must be >= 1");
  if (s.kind == IndicatorKind::MACD && !(s.window < s.slow))
    throw Error("macd fast window must be shorter than slow window");
  return s;
}

constexpr double kDivGuard = 1e-12;

inline FactorMatrix blank_like(const PricePanel& p) {
  FactorMatrix f;
  f.dates = p.dates;
  f.symbols = p.symbols;
  f.values.assign(p.days() * p.n_symbols(), 0.0);
  f.mask.assign(p.days() * p.n_symbols(), 0);
  return f;
}

// Trailing N-term mean of an arbitrary per-cell series; output masked unless
// all N days of history are unmasked in the panel.
template <class Series>
inline FactorMatrix trailing_mean(const PricePanel& p, int n, Series value_at) {
  FactorMatrix f = blank_like(p);
  const int D = static_cast<int>(p.days());
  for (std::size_t s = 0; s < p.n_symbols(); ++s)
    for (int t = n - 1; t < D; ++t) {
      double sum = 0.0;
      bool ok = true;
      for (int k = 0; k < n && ok; ++k) {
        const std::size_t cell = p.idx(static_cast<std::size_t>(t - k), s);
        if (!p.mask[cell]) ok = false;
        else sum += value_at(cell);
      }
      if (ok) f.set(static_cast<std::size_t>(t), s, sum / n);
    }
  return f;
}

// Exponential mean with the infinite tail truncated at the start of the
// current run of unmasked days and the weights renormalized to sum to 1.
// Output is masked until the run reaches n days.
inline FactorMatrix ema_matrix(const PricePanel& p, int n) {
  FactorMatrix f = blank_like(p);
  const double w = static_cast<double>(n - 1) / (n + 1);
  for (std::size_t s = 0; s < p.n_symbols(); ++s) {
    double num = 0.0, den = 0.0;
    int run = 0;
    for (std::size_t t = 0; t < p.days(); ++t) {
      const std::size_t cell = p.idx(t, s);
      if (!p.mask[cell]) {
        run = 0;
        continue;
      }
      if (run == 0) {
        num = 0.0;
        den = 0.0;
      }
      num = p.close[cell] + w * num;
      den = 1.0 + w * den;
      ++run;
      if (run >= n) f.set(t, s, num / den);
    }
  }
  return f;
}

}  // namespace detail

inline FactorMatrix compute_indicator(const IndicatorSpec& raw, const PricePanel& p) {
  const IndicatorSpec spec = detail::resolve_spec(raw);
  if (static_cast<std::size_t>(std::max(spec.window, spec.slow)) >= p.days())
    throw Error("indicator window exceeds history");

  switch (spec.kind) {
    case IndicatorKind::MA:
      return detail::trailing_mean(p, spec.window, [&](std::size_t c) { return p.close[c]; });

    case IndicatorKind::EMA: return detail::ema_matrix(p, spec.window);

    case IndicatorKind::MACD: {
      FactorMatrix fast = detail::ema_matrix(p, spec.window);
      FactorMatrix slow = detail::ema_matrix(p, spec.slow);
      FactorMatrix f = detail::blank_like(p);
      for (std::size_t i = 0; i < f.values.size(); ++i)
        if (fast.mask[i] && slow.mask[i]) {
          f.values[i] = fast.values[i] - slow.values[i];
          f.mask[i] = 1;
        }
      return f;
    }

    case IndicatorKind::PVT: {
      // Resets to 0 at the start of each run of unmasked days.
      FactorMatrix f = detail::blank_like(p);
      for (std::size_t s = 0; s < p.n_symbols(); ++s) {
        bool in_run = false;
        double pvt = 0.0;
        double prev_close = 0.0;
        for (std::size_t t = 0; t < p.days(); ++t) {
          const std::size_t cell = p.idx(t, s);
          if (!p.mask[cell]) {
            in_run = false;
            continue;
          }
          if (!in_run) {
            pvt = 0.0;
            in_run = true;
          } else {
            if (std::abs(prev_close) < detail::kDivGuard) {
              in_run = false;
              continue;
            }
            pvt += p.volume[cell] * (p.close[cell] - prev_close) / prev_close;
          }
          prev_close = p.close[cell];
          f.set(t, s, pvt);
        }
      }
      return f;
    }

    case IndicatorKind::TOP10: {
      FactorMatrix ma = detail::trailing_mean(p, spec.window,
                                              [&](std::size_t c) { return p.close[c]; });
      FactorMatrix f = detail::blank_like(p);
      for (std::size_t t = 0; t < p.days(); ++t) {
        std::vector<double> xs;
        for (std::size_t s = 0; s < p.n_symbols(); ++s)
          if (ma.present(t, s)) xs.push_back(ma.at(t, s));
        if (xs.empty()) continue;
        std::sort(xs.begin(), xs.end());
        const double pos = 0.9 * static_cast<double>(xs.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        const double q90 = (lo + 1 < xs.size()) ? xs[lo] * (1.0 - frac) + xs[lo + 1] * frac
                                                : xs[lo];
        if (std::abs(q90) < detail::kDivGuard) continue;
        for (std::size_t s = 0; s < p.n_symbols(); ++s)
          if (ma.present(t, s)) f.set(t, s, ma.at(t, s) / q90 - 1.0);
      }
      return f;
    }

    case IndicatorKind::DC: {
      auto adj_ratio = [&](std::size_t c, const std::vector<double>& px) {
        return px[c] * p.adj_close[c] / p.close[c];
      };
      FactorMatrix h = detail::trailing_mean(p, spec.window,
                                             [&](std::size_t c) { return adj_ratio(c, p.high); });
      FactorMatrix l = detail::trailing_mean(p, spec.window,
                                             [&](std::size_t c) { return adj_ratio(c, p.low); });
      FactorMatrix f = detail::blank_like(p);
      for (std::size_t t = 0; t < p.days(); ++t)
        for (std::size_t s = 0; s < p.n_symbols(); ++s) {
          if (!h.present(t, s) || !l.present(t, s)) continue;
          const double mid = 0.5 * (h.at(t, s) + l.at(t, s));
          if (std::abs(mid) < detail::kDivGuard) continue;
          f.set(t, s, p.adj_close[p.idx(t, s)] / mid);
        }
      return f;
    }

    case IndicatorKind::BOLL: {
      // Lower band over close: (mean - population std of the last n closes) / close.
      FactorMatrix f = detail::blank_like(p);
      const int n = spec.window;
      for (std::size_t s = 0; s < p.n_symbols(); ++s)
        for (int t = n - 1; t < static_cast<int>(p.days()); ++t) {
          double sum = 0.0, sum2 = 0.0;
          bool ok = true;
          for (int k = 0; k < n && ok; ++k) {
            const std::size_t cell = p.idx(static_cast<std::size_t>(t - k), s);
            if (!p.mask[cell]) ok = false;
            else {
              sum += p.close[cell];
              sum2 += p.close[cell] * p.close[cell];
            }
          }
          if (!ok) continue;
          const double mean = sum / n;
          double var = sum2 / n - mean * mean;
          if (var < 0.0) var = 0.0;
          const std::size_t cell = p.idx(static_cast<std::size_t>(t), s);
          if (std::abs(p.close[cell]) < detail::kDivGuard) continue;
          f.set(static_cast<std::size_t>(t), s, (mean - std::sqrt(var)) / p.close[cell]);
        }
      return f;
    }

    case IndicatorKind::RSI: {
      // Wilder smoothing over close changes, rescaled to [0,1]. A run needs
      // window+1 days before the first value.
      FactorMatrix f = detail::blank_like(p);
      const int n = spec.window;
      for (std::size_t s = 0; s < p.n_symbols(); ++s) {
        int run = 0;
        double prev_close = 0.0, avg_gain = 0.0, avg_loss = 0.0;
        double gain_sum = 0.0, loss_sum = 0.0;
        for (std::size_t t = 0; t < p.days(); ++t) {
          const std::size_t cell = p.idx(t, s);
          if (!p.mask[cell]) {
            run = 0;
            continue;
          }
          if (run == 0) {
            prev_close = p.close[cell];
            gain_sum = loss_sum = 0.0;
            run = 1;
            continue;
          }
          const double ch = p.close[cell] - prev_close;
          prev_close = p.close[cell];
          ++run;
          const int changes = run - 1;
          if (changes <= n) {
            gain_sum += std::max(ch, 0.0);
            loss_sum += std::max(-ch, 0.0);
            if (changes < n) continue;
            avg_gain = gain_sum / n;
            avg_loss = loss_sum / n;
          } else {
            avg_gain = (avg_gain * (n - 1) + std::max(ch, 0.0)) / n;
            avg_loss = (avg_loss * (n - 1) + std::max(-ch, 0.0)) / n;
          }
          double v;
          if (avg_gain + avg_loss < detail::kDivGuard) v = 0.5;
          else v = avg_gain / (avg_gain + avg_loss);
          f.set(t, s, v);
        }
      }
      return f;
    }
  }
  throw Error("unknown indicator kind");
}

/// Binary buy/sell reading of an indicator, used to score how faithfully a
/// fitted model reproduces the rule. Ties at the threshold label 0.
inline FactorMatrix indicator_to_decision(IndicatorKind kind, const FactorMatrix& values,
                                          const PricePanel& p) {
  if (values.rows() != p.days() || values.cols() != p.n_symbols())
    throw Error("decision: factor shape does not match panel");
  FactorMatrix d = detail::blank_like(p);
  for (std::size_t t = 0; t < values.rows(); ++t)
    for (std::size_t s = 0; s < values.cols(); ++s) {
      if (!values.present(t, s)) continue;
      const double v = values.at(t, s);
      bool defined = true;
      bool buy = false;
      switch (kind) {
        case IndicatorKind::MA:
        case IndicatorKind::EMA: buy = p.close[p.idx(t, s)] > v; break;
        case IndicatorKind::MACD:
        case IndicatorKind::TOP10: buy = v > 0.0; break;
        case IndicatorKind::PVT:
          if (t == 0 || !values.present(t - 1, s)) defined = false;
          else buy = v > values.at(t - 1, s);
          break;
        case IndicatorKind::DC:
        case IndicatorKind::BOLL: buy = v > 1.0; break;
        case IndicatorKind::RSI: buy = v < 0.3; break;
        default: throw Error("decision rule undefined for indicator");
      }
      if (defined) d.set(t, s, buy ? 1.0 : 0.0);
    }
  return d;
}

/// The expert pool used for pre-training seeds and as baseline factors.
inline std::vector<IndicatorSpec> default_indicator_pool() {
  return {
      {IndicatorKind::MA, 10, 0},   {IndicatorKind::EMA, 10, 0}, {IndicatorKind::MACD, 12, 26},
      {IndicatorKind::PVT, 0, 0},   {IndicatorKind::TOP10, 10, 0}, {IndicatorKind::DC, 20, 0},
      {IndicatorKind::BOLL, 20, 0}, {IndicatorKind::RSI, 14, 0},
  };
}

}  // namespace forge
