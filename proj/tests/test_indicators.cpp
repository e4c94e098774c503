#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "forge/indicators.hpp"
#include "util.hpp"

namespace {

using forge::FactorMatrix;
using forge::IndicatorKind;
using forge::IndicatorSpec;
using forge::PricePanel;
using testutil::make_panel;

// ---------------------------------------------------------------------------
// Independent oracle implementations, written per definition as plain loops.
// Each recomputes everything per cell instead of streaming.

// First day of the unmasked run containing t, or t+1 if cell t is masked.
std::size_t run_start(const PricePanel& p, std::size_t t, std::size_t s) {
  if (!p.tradable(t, s)) return t + 1;
  std::size_t r = t;
  while (r > 0 && p.tradable(r - 1, s)) --r;
  return r;
}

FactorMatrix blank(const PricePanel& p) {
  FactorMatrix f;
  f.dates = p.dates;
  f.symbols = p.symbols;
  f.values.assign(p.days() * p.n_symbols(), 0.0);
  f.mask.assign(p.days() * p.n_symbols(), 0);
  return f;
}

FactorMatrix oracle_mean(const PricePanel& p, int n,
                         const std::function<double(std::size_t)>& value_at) {
  FactorMatrix f = blank(p);
  for (std::size_t s = 0; s < p.n_symbols(); ++s)
    for (std::size_t t = 0; t < p.days(); ++t) {
      if (t + 1 < static_cast<std::size_t>(n)) continue;
      bool ok = true;
      double sum = 0.0;
      for (int k = 0; k < n; ++k) {
        const std::size_t d = t - static_cast<std::size_t>(k);
        if (!p.tradable(d, s)) {
          ok = false;
          break;
        }
        sum += value_at(p.idx(d, s));
      }
      if (ok) f.set(t, s, sum / n);
    }
  return f;
}

FactorMatrix oracle_ma(const PricePanel& p, int n) {
  return oracle_mean(p, n, [&](std::size_t c) { return p.close[c]; });
}

FactorMatrix oracle_ema(const PricePanel& p, int n) {
  FactorMatrix f = blank(p);
  const double w = double(n - 1) / double(n + 1);
  for (std::size_t s = 0; s < p.n_symbols(); ++s)
    for (std::size_t t = 0; t < p.days(); ++t) {
      if (!p.tradable(t, s)) continue;
      const std::size_t r0 = run_start(p, t, s);
      const std::size_t run = t - r0 + 1;
      if (run < static_cast<std::size_t>(n)) continue;
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < run; ++k) {
        const double wk = std::pow(w, double(k));
        num += wk * p.close[p.idx(t - k, s)];
        den += wk;
      }
      f.set(t, s, num / den);
    }
  return f;
}

FactorMatrix oracle_macd(const PricePanel& p, int fast, int slow) {
  const FactorMatrix a = oracle_ema(p, fast), b = oracle_ema(p, slow);
  FactorMatrix f = blank(p);
  for (std::size_t i = 0; i < f.values.size(); ++i)
    if (a.mask[i] && b.mask[i]) {
      f.values[i] = a.values[i] - b.values[i];
      f.mask[i] = 1;
    }
  return f;
}

FactorMatrix oracle_pvt(const PricePanel& p) {
  FactorMatrix f = blank(p);
  for (std::size_t s = 0; s < p.n_symbols(); ++s)
    for (std::size_t t = 0; t < p.days(); ++t) {
      if (!p.tradable(t, s)) continue;
      const std::size_t r0 = run_start(p, t, s);
      double pvt = 0.0;
      for (std::size_t d = r0 + 1; d <= t; ++d) {
        const double prev = p.close[p.idx(d - 1, s)];
        pvt += p.volume[p.idx(d, s)] * (p.close[p.idx(d, s)] - prev) / prev;
      }
      f.set(t, s, pvt);
    }
  return f;
}

FactorMatrix oracle_top10(const PricePanel& p, int n) {
  const FactorMatrix ma = oracle_ma(p, n);
  FactorMatrix f = blank(p);
  for (std::size_t t = 0; t < p.days(); ++t) {
    std::vector<double> xs;
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (ma.present(t, s)) xs.push_back(ma.at(t, s));
    if (xs.empty()) continue;
    std::sort(xs.begin(), xs.end());
    const double pos = 0.9 * double(xs.size() - 1);
    const std::size_t lo = std::size_t(pos);
    const double frac = pos - double(lo);
    const double q90 = lo + 1 < xs.size() ? xs[lo] + frac * (xs[lo + 1] - xs[lo]) : xs[lo];
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (ma.present(t, s)) f.set(t, s, ma.at(t, s) / q90 - 1.0);
  }
  return f;
}

FactorMatrix oracle_dc(const PricePanel& p, int n) {
  const FactorMatrix h = oracle_mean(
      p, n, [&](std::size_t c) { return p.high[c] * p.adj_close[c] / p.close[c]; });
  const FactorMatrix l = oracle_mean(
      p, n, [&](std::size_t c) { return p.low[c] * p.adj_close[c] / p.close[c]; });
  FactorMatrix f = blank(p);
  for (std::size_t t = 0; t < p.days(); ++t)
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (h.present(t, s) && l.present(t, s))
        f.set(t, s, p.adj_close[p.idx(t, s)] / (0.5 * (h.at(t, s) + l.at(t, s))));
  return f;
}

FactorMatrix oracle_boll(const PricePanel& p, int n) {
  FactorMatrix f = blank(p);
  for (std::size_t s = 0; s < p.n_symbols(); ++s)
    for (std::size_t t = 0; t < p.days(); ++t) {
      if (t + 1 < static_cast<std::size_t>(n)) continue;
      std::vector<double> xs;
      bool ok = true;
      for (int k = 0; k < n; ++k) {
        if (!p.tradable(t - k, s)) {
          ok = false;
          break;
        }
        xs.push_back(p.close[p.idx(t - k, s)]);
      }
      if (!ok) continue;
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= xs.size();
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= xs.size();
      f.set(t, s, (mean - std::sqrt(var)) / p.close[p.idx(t, s)]);
    }
  return f;
}

FactorMatrix oracle_rsi(const PricePanel& p, int n) {
  FactorMatrix f = blank(p);
  for (std::size_t s = 0; s < p.n_symbols(); ++s)
    for (std::size_t t = 0; t < p.days(); ++t) {
      if (!p.tradable(t, s)) continue;
      const std::size_t r0 = run_start(p, t, s);
      const std::size_t changes = t - r0;
      if (changes < static_cast<std::size_t>(n)) continue;
      double gain = 0.0, loss = 0.0;
      for (std::size_t d = r0 + 1; d <= r0 + std::size_t(n); ++d) {
        const double ch = p.close[p.idx(d, s)] - p.close[p.idx(d - 1, s)];
        gain += std::max(ch, 0.0);
        loss += std::max(-ch, 0.0);
      }
      gain /= n;
      loss /= n;
      for (std::size_t d = r0 + std::size_t(n) + 1; d <= t; ++d) {
        const double ch = p.close[p.idx(d, s)] - p.close[p.idx(d - 1, s)];
        gain = (gain * (n - 1) + std::max(ch, 0.0)) / n;
        loss = (loss * (n - 1) + std::max(-ch, 0.0)) / n;
      }
      f.set(t, s, gain + loss < 1e-12 ? 0.5 : gain / (gain + loss));
    }
  return f;
}

void expect_same(const FactorMatrix& got, const FactorMatrix& want, double tol,
                 const char* label) {
  ASSERT_EQ(got.rows(), want.rows()) << label;
  ASSERT_EQ(got.cols(), want.cols()) << label;
  for (std::size_t t = 0; t < want.rows(); ++t)
    for (std::size_t s = 0; s < want.cols(); ++s) {
      ASSERT_EQ(got.present(t, s), want.present(t, s))
          << label << " mask mismatch at t=" << t << " s=" << s;
      if (want.present(t, s)) {
        const double scale = std::max(1.0, std::abs(want.at(t, s)));
        ASSERT_NEAR(got.at(t, s), want.at(t, s), tol * scale)
            << label << " at t=" << t << " s=" << s;
      }
    }
}

FactorMatrix compute(IndicatorKind k, const PricePanel& p, int window = 0, int slow = 0) {
  return forge::compute_indicator({k, window, slow}, p);
}

// ---------------------------------------------------------------------------

TEST(Indicators, AllKindsMatchOracles) {
  for (std::uint64_t seed : {1u, 2u}) {
    for (double mask : {0.0, 0.12}) {
      const PricePanel p = make_panel(seed, 70, 7, mask);
      expect_same(compute(IndicatorKind::MA, p, 10), oracle_ma(p, 10), 1e-12, "ma");
      expect_same(compute(IndicatorKind::EMA, p, 10), oracle_ema(p, 10), 1e-12, "ema");
      expect_same(compute(IndicatorKind::MACD, p, 12, 26), oracle_macd(p, 12, 26), 1e-12, "macd");
      expect_same(compute(IndicatorKind::PVT, p), oracle_pvt(p), 1e-9, "pvt");
      expect_same(compute(IndicatorKind::TOP10, p, 10), oracle_top10(p, 10), 1e-12, "top10");
      expect_same(compute(IndicatorKind::DC, p, 20), oracle_dc(p, 20), 1e-12, "dc");
      expect_same(compute(IndicatorKind::BOLL, p, 20), oracle_boll(p, 20), 1e-12, "boll");
      expect_same(compute(IndicatorKind::RSI, p, 14), oracle_rsi(p, 14), 1e-12, "rsi");
    }
  }
}

TEST(Indicators, MaTwoDayHandCase) {
  PricePanel p = make_panel(3, 3, 1);
  p.close[p.idx(0, 0)] = 2.0;
  p.close[p.idx(1, 0)] = 4.0;
  p.close[p.idx(2, 0)] = 6.0;
  const FactorMatrix f = compute(IndicatorKind::MA, p, 2);
  EXPECT_FALSE(f.present(0, 0));  // needs two days of history
  EXPECT_DOUBLE_EQ(f.at(1, 0), 3.0);
  EXPECT_DOUBLE_EQ(f.at(2, 0), 5.0);
}

TEST(Indicators, PvtHandRecursion) {
  // One symbol, closes 1 -> 2 with volume 10 on the move: PVT = 10*(2-1)/1.
  PricePanel p = make_panel(4, 3, 1);
  p.close[p.idx(0, 0)] = 1.0;
  p.close[p.idx(1, 0)] = 2.0;
  p.close[p.idx(2, 0)] = 1.0;
  p.volume[p.idx(1, 0)] = 10.0;
  p.volume[p.idx(2, 0)] = 4.0;
  const FactorMatrix f = compute(IndicatorKind::PVT, p);
  EXPECT_DOUBLE_EQ(f.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(f.at(1, 0), 10.0);
  EXPECT_DOUBLE_EQ(f.at(2, 0), 10.0 + 4.0 * (1.0 - 2.0) / 2.0);  // = 8
}

TEST(Indicators, EmaEqualsRenormalizedTruncatedTail) {
  // On a fully unmasked panel the streaming recursion must equal the explicit
  // weighted sum with weights ((n-1)/(n+1))^k renormalized over the run.
  const PricePanel p = make_panel(5, 40, 3);
  const FactorMatrix f = compute(IndicatorKind::EMA, p, 5);
  const double w = 4.0 / 6.0;
  const std::size_t t = 30, s = 1;
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k <= t; ++k) {
    num += std::pow(w, double(k)) * p.close[p.idx(t - k, s)];
    den += std::pow(w, double(k));
  }
  EXPECT_NEAR(f.at(t, s), num / den, 1e-12 * std::abs(num / den));
}

TEST(Indicators, DefaultWindowsMatchExplicit) {
  const PricePanel p = make_panel(6, 60, 4);
  expect_same(compute(IndicatorKind::MA, p, 0), compute(IndicatorKind::MA, p, 10), 0, "ma dflt");
  expect_same(compute(IndicatorKind::EMA, p, 0), compute(IndicatorKind::EMA, p, 10), 0, "ema dflt");
  expect_same(compute(IndicatorKind::MACD, p, 0, 0), compute(IndicatorKind::MACD, p, 12, 26), 0,
              "macd dflt");
  expect_same(compute(IndicatorKind::DC, p, 0), compute(IndicatorKind::DC, p, 20), 0, "dc dflt");
  expect_same(compute(IndicatorKind::BOLL, p, 0), compute(IndicatorKind::BOLL, p, 20), 0,
              "boll dflt");
  expect_same(compute(IndicatorKind::RSI, p, 0), compute(IndicatorKind::RSI, p, 14), 0,
              "rsi dflt");
}

TEST(Indicators, ScaleBehaviour) {
  const PricePanel p = make_panel(7, 60, 5);
  PricePanel q = p;
  const double c = 3.7;
  for (std::size_t k = 0; k < q.mask.size(); ++k) {
    q.open[k] *= c;
    q.high[k] *= c;
    q.low[k] *= c;
    q.close[k] *= c;
    q.adj_close[k] *= c;
  }
  // MA, EMA, MACD are price-denominated: they scale with the prices.
  for (auto kind : {IndicatorKind::MA, IndicatorKind::EMA, IndicatorKind::MACD}) {
    const FactorMatrix a = compute(kind, p), b = compute(kind, q);
    for (std::size_t i = 0; i < a.values.size(); ++i)
      if (a.mask[i]) {
        ASSERT_NEAR(b.values[i], c * a.values[i], 1e-9 * std::abs(c * a.values[i]));
      }
  }
  // TOP10, DC, BOLL, RSI are ratios: invariant under a common price rescale.
  for (auto kind : {IndicatorKind::TOP10, IndicatorKind::DC, IndicatorKind::BOLL,
                    IndicatorKind::RSI}) {
    const FactorMatrix a = compute(kind, p), b = compute(kind, q);
    for (std::size_t i = 0; i < a.values.size(); ++i)
      if (a.mask[i]) {
        ASSERT_NEAR(b.values[i], a.values[i], 1e-9 * std::max(1.0, std::abs(a.values[i])));
      }
  }
}

TEST(Indicators, RsiIsShiftInvariant) {
  const PricePanel p = make_panel(8, 50, 4);
  PricePanel q = p;
  for (std::size_t k = 0; k < q.mask.size(); ++k) {
    q.open[k] += 100.0;
    q.high[k] += 100.0;
    q.low[k] += 100.0;
    q.close[k] += 100.0;
    q.adj_close[k] += 100.0;
  }
  const FactorMatrix a = compute(IndicatorKind::RSI, p), b = compute(IndicatorKind::RSI, q);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    if (a.mask[i]) {
      ASSERT_NEAR(b.values[i], a.values[i], 1e-9);
    }
}

TEST(Indicators, WindowExceedingHistoryThrows) {
  const PricePanel p = make_panel(9, 15, 3);
  EXPECT_THROW(compute(IndicatorKind::MA, p, 15), forge::Error);
  EXPECT_THROW(compute(IndicatorKind::MACD, p, 12, 26), forge::Error);
  EXPECT_NO_THROW(compute(IndicatorKind::MA, p, 14));
  EXPECT_THROW(compute(IndicatorKind::MACD, p, 26, 12), forge::Error);  // fast >= slow
}

TEST(Decisions, RulesOnHandCases) {
  PricePanel p = make_panel(10, 4, 1);
  // Rising closes: close > MA(2) -> buy.
  p.close[p.idx(0, 0)] = 1.0;
  p.close[p.idx(1, 0)] = 2.0;
  p.close[p.idx(2, 0)] = 3.0;
  p.close[p.idx(3, 0)] = 3.0;  // ma = 3 == close -> tie -> 0
  const FactorMatrix ma = compute(IndicatorKind::MA, p, 2);
  const FactorMatrix d = forge::indicator_to_decision(IndicatorKind::MA, ma, p);
  EXPECT_FALSE(d.present(0, 0));
  EXPECT_DOUBLE_EQ(d.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(d.at(2, 0), 1.0);
  EXPECT_DOUBLE_EQ(d.at(3, 0), 0.0);
}

TEST(Decisions, PvtNeedsPreviousValue) {
  const PricePanel p = make_panel(11, 20, 3);
  const FactorMatrix pvt = compute(IndicatorKind::PVT, p);
  const FactorMatrix d = forge::indicator_to_decision(IndicatorKind::PVT, pvt, p);
  EXPECT_FALSE(d.present(0, 0));  // no previous value on the first day
  for (std::size_t t = 1; t < p.days(); ++t)
    for (std::size_t s = 0; s < p.n_symbols(); ++s) {
      ASSERT_TRUE(d.present(t, s));
      const double want = pvt.at(t, s) > pvt.at(t - 1, s) ? 1.0 : 0.0;
      ASSERT_DOUBLE_EQ(d.at(t, s), want);
    }
}

TEST(Decisions, ThresholdRules) {
  const PricePanel p = make_panel(12, 60, 5);
  struct Case {
    IndicatorKind kind;
    double threshold;
    bool below;  // buy when value < threshold
  };
  for (const Case c : {Case{IndicatorKind::MACD, 0.0, false}, Case{IndicatorKind::TOP10, 0.0, false},
                       Case{IndicatorKind::DC, 1.0, false}, Case{IndicatorKind::BOLL, 1.0, false},
                       Case{IndicatorKind::RSI, 0.3, true}}) {
    const FactorMatrix v = compute(c.kind, p);
    const FactorMatrix d = forge::indicator_to_decision(c.kind, v, p);
    for (std::size_t i = 0; i < v.values.size(); ++i)
      if (v.mask[i]) {
        ASSERT_TRUE(d.mask[i]);
        const bool buy = c.below ? v.values[i] < c.threshold : v.values[i] > c.threshold;
        ASSERT_DOUBLE_EQ(d.values[i], buy ? 1.0 : 0.0);
      }
  }
}

TEST(Indicators, PoolComputesOnTypicalPanel) {
  const PricePanel p = make_panel(13, 80, 6, 0.05);
  for (const auto& spec : forge::default_indicator_pool()) {
    const FactorMatrix f = forge::compute_indicator(spec, p);
    std::size_t n = 0;
    for (auto m : f.mask) n += m;
    EXPECT_GT(n, 0u) << forge::indicator_name(spec.kind);
  }
}

TEST(Indicators, NameRoundTrip) {
  for (const auto& spec : forge::default_indicator_pool())
    EXPECT_EQ(forge::indicator_kind_from(forge::indicator_name(spec.kind)), spec.kind);
  EXPECT_THROW(forge::indicator_kind_from("sma"), forge::Error);
}

}  // namespace
