#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "forge/core.hpp"
#include "forge/ic.hpp"
#include "forge/panel.hpp"

namespace forge {

/// Planted-alpha recipe. The hidden signal is the cross-sectional z-score of
/// the k-day reversal -(close_t/close_{t-k} - 1); a mixing weight feeds it
/// into the next day's log-return innovations so that the measured mean daily
/// Spearman between the signal and the horizon-day forward return lands near
/// `target_spearman`. Everything an oracle needs to recompute the signal is
/// in the panel itself.
struct AlphaSpec {
  double target_spearman = 0.3;
  std::size_t reversal_days = 5;
  std::size_t horizon = 5;  // forward-return span used for calibration
  double daily_vol = 0.02;
  double drift = 0.0002;
};

struct SyntheticMarket {
  PricePanel panel;
  FactorMatrix hidden;
  double measured_spearman = 0.0;
  double mix_weight = 0.0;
};

namespace detail {

// Days-from-civil (Gregorian), used to mint ISO dates from a serial index.
inline std::int64_t days_from_civil(int y, unsigned mo, unsigned d) {
  y -= mo <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (mo + (mo > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::string civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned mo = mp + (mp < 10 ? 3 : -9);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u",
                static_cast<long long>(y + (mo <= 2)), mo, d);
  return buf;
}

inline std::vector<std::string> synthetic_dates(std::size_t n) {
  const std::int64_t start = days_from_civil(2015, 1, 2);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) out.push_back(civil_from_days(start + static_cast<std::int64_t>(t)));
  return out;
}

inline std::vector<std::string> synthetic_symbols(std::size_t n) {
  std::size_t width = 3;
  for (std::size_t v = n; v > 1000; v /= 10) ++width;
  std::vector<std::string> out;
  out.reserve(n);
  char buf[24];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "S%0*zu", static_cast<int>(width), i);
    out.push_back(buf);
  }
  return out;
}

inline void zscore_row(std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  if (sd < 1e-12) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double& x : v) x = (x - mean) / sd;
}

struct GenOutcome {
  PricePanel panel;
  FactorMatrix hidden;
  double measured = 0.0;
};

inline GenOutcome generate_once(std::size_t n_symbols, std::size_t n_days, std::uint64_t seed,
                                const AlphaSpec& spec, double w) {
  Rng rng(seed);
  const std::size_t k = spec.reversal_days;
  const double vol = spec.daily_vol;

  PricePanel p;
  p.dates = synthetic_dates(n_days);
  p.symbols = synthetic_symbols(n_symbols);
  p.resize_cells();

  std::vector<double> start(n_symbols), volbase(n_symbols);
  for (std::size_t s = 0; s < n_symbols; ++s) start[s] = rng.uniform(30.0, 120.0);
  for (std::size_t s = 0; s < n_symbols; ++s) volbase[s] = 1e6 * std::exp(rng.normal() * 0.5);

  // Closes first: each day's innovations mix the hidden signal with noise.
  std::vector<double> close(n_days * n_symbols);
  for (std::size_t s = 0; s < n_symbols; ++s) close[s] = start[s];
  FactorMatrix hidden;
  hidden.dates = p.dates;
  hidden.symbols = p.symbols;
  hidden.values.assign(n_days * n_symbols, 0.0);
  hidden.mask.assign(n_days * n_symbols, 0);

  const double noise_w = std::sqrt(std::max(0.0, 1.0 - w * w));
  std::vector<double> h(n_symbols, 0.0);
  for (std::size_t t = 0; t + 1 < n_days; ++t) {
    bool have_signal = t >= k;
    if (have_signal) {
      for (std::size_t s = 0; s < n_symbols; ++s)
        h[s] = -(close[t * n_symbols + s] / close[(t - k) * n_symbols + s] - 1.0);
      zscore_row(h);
      for (std::size_t s = 0; s < n_symbols; ++s) {
        hidden.values[t * n_symbols + s] = h[s];
        hidden.mask[t * n_symbols + s] = 1;
      }
    }
    for (std::size_t s = 0; s < n_symbols; ++s) {
      const double eps = rng.normal();
      const double signal = have_signal ? w * h[s] + noise_w * eps : eps;
      const double r = spec.drift + vol * signal;
      close[(t + 1) * n_symbols + s] = close[t * n_symbols + s] * std::exp(r);
    }
  }
  // Last day's signal is observable too, even though no return follows it.
  if (n_days > k) {
    const std::size_t t = n_days - 1;
    for (std::size_t s = 0; s < n_symbols; ++s)
      h[s] = -(close[t * n_symbols + s] / close[(t - k) * n_symbols + s] - 1.0);
    zscore_row(h);
    for (std::size_t s = 0; s < n_symbols; ++s) {
      hidden.values[t * n_symbols + s] = h[s];
      hidden.mask[t * n_symbols + s] = 1;
    }
  }

  // Dress open/high/low/volume around the close path.
  for (std::size_t t = 0; t < n_days; ++t)
    for (std::size_t s = 0; s < n_symbols; ++s) {
      const std::size_t cell = t * n_symbols + s;
      const double c = close[cell];
      const double prev = t > 0 ? close[cell - n_symbols] : c;
      const double open = prev * std::exp(rng.normal() * 0.3 * vol);
      const double hi = std::max(open, c) * std::exp(std::abs(rng.normal()) * 0.5 * vol);
      const double lo = std::min(open, c) * std::exp(-std::abs(rng.normal()) * 0.5 * vol);
      p.open[cell] = open;
      p.high[cell] = hi;
      p.low[cell] = lo;
      p.close[cell] = c;
      p.volume[cell] = volbase[s] * std::exp(rng.normal() * 0.6);
      p.adj_close[cell] = c;
      p.mask[cell] = 1;
    }

  GenOutcome out;
  out.panel = std::move(p);
  out.hidden = std::move(hidden);

  // Measure: mean daily Spearman between the signal and forward returns.
  double sum = 0.0;
  std::size_t cnt = 0;
  for (std::size_t t = k; t + spec.horizon < n_days; ++t) {
    std::vector<double> hs(n_symbols), fr(n_symbols);
    for (std::size_t s = 0; s < n_symbols; ++s) {
      hs[s] = out.hidden.values[t * n_symbols + s];
      fr[s] = close[(t + spec.horizon) * n_symbols + s] / close[t * n_symbols + s] - 1.0;
    }
    if (n_symbols >= 3) {
      bool degen = false;
      const double rho = exact_spearman(hs, fr, &degen);
      if (!degen) {
        sum += rho;
        ++cnt;
      }
    }
  }
  out.measured = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
  return out;
}

}  // namespace detail

inline SyntheticMarket generate_synthetic_market(std::size_t n_symbols, std::size_t n_days,
                                                 std::uint64_t seed, const AlphaSpec& spec = {}) {
  if (n_symbols < 2) throw Error("synthetic market: need at least 2 symbols");
  if (n_days <= spec.reversal_days + spec.horizon + 2)
    throw Error("synthetic market: not enough days for the signal and horizon");
  if (spec.target_spearman < 0.0 || spec.target_spearman >= 1.0)
    throw Error("synthetic market: target correlation outside [0, 1)");
  if (!(spec.daily_vol > 0.0)) throw Error("synthetic market: daily vol must be > 0");

  const double target = spec.target_spearman;
  double w = 0.0;
  detail::GenOutcome out;
  if (target == 0.0) {
    out = detail::generate_once(n_symbols, n_days, seed, spec, 0.0);
  } else {
    if (n_symbols < 3) throw Error("synthetic market: calibration needs at least 3 symbols");
    // Secant iteration on measured(w) - target; the same seed is replayed at
    // every trial, so the whole procedure is deterministic.
    w = std::min(0.95, target * std::sqrt(static_cast<double>(spec.horizon)));
    out = detail::generate_once(n_symbols, n_days, seed, spec, w);
    double w_prev = 0.0, f_prev = 0.0 - target;
    for (int iter = 0; iter < 6 && std::abs(out.measured - target) > 0.02; ++iter) {
      const double f = out.measured - target;
      const double denom = f - f_prev;
      double w_next = std::abs(denom) > 1e-9 ? w - f * (w - w_prev) / denom : w * target / std::max(1e-9, out.measured);
      w_next = std::clamp(w_next, 0.01, 0.99);
      w_prev = w;
      f_prev = f;
      w = w_next;
      out = detail::generate_once(n_symbols, n_days, seed, spec, w);
    }
  }
  validate_panel(out.panel);
  SyntheticMarket mkt;
  mkt.panel = std::move(out.panel);
  mkt.hidden = std::move(out.hidden);
  mkt.measured_spearman = out.measured;
  mkt.mix_weight = w;
  return mkt;
}

}  // namespace forge
