#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "forge/core.hpp"
#include "forge/panel.hpp"

namespace forge {

struct SplitSpec {
  std::size_t train_days = 250;
  std::size_t valid_days = 30;
  std::size_t test_days = 90;
};

constexpr std::size_t kChannels = 5;  // open, high, low, close, volume

struct ChannelStats {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> std{};
};

/// One cross-sectional batch: all symbols fully observed over the m days
/// before `day`, with the forward return spanning day -> day+horizon.
/// Tensor layout is row-major (n, 5, m): x[i*5*m + c*m + j].
struct WindowBatch {
  std::size_t day = 0;
  std::string date;
  std::vector<std::size_t> symbols;  // indices into panel.symbols
  std::vector<double> x;
  std::vector<double> returns;

  std::size_t n() const { return symbols.size(); }
  std::size_t m() const { return symbols.empty() ? 0 : x.size() / (symbols.size() * kChannels); }
  double at(std::size_t i, std::size_t c, std::size_t j) const {
    return x[(i * kChannels + c) * m() + j];
  }
};

struct BatchSet {
  std::vector<WindowBatch> train, valid, test;
  ChannelStats stats;
  std::size_t skipped_days = 0;  // eligible dates with zero fully-observed symbols
};

namespace detail {

inline double channel_value(const PricePanel& p, std::size_t c, std::size_t cell) {
  switch (c) {
    case 0: return p.open[cell];
    case 1: return p.high[cell];
    case 2: return p.low[cell];
    case 3: return p.close[cell];
    default: return p.volume[cell];
  }
}

}  // namespace detail

/// Per-channel mean/std over every unmasked cell in days [0, train_days).
/// A std below 1e-8 is clamped to 1.0 so constant channels standardize to 0.
inline ChannelStats compute_channel_stats(const PricePanel& p, std::size_t train_days) {
  if (train_days == 0 || train_days > p.days()) throw Error("channel stats: bad training range");
  ChannelStats st;
  for (std::size_t c = 0; c < kChannels; ++c) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (std::size_t d = 0; d < train_days; ++d)
      for (std::size_t s = 0; s < p.n_symbols(); ++s) {
        const std::size_t k = p.idx(d, s);
        if (!p.mask[k]) continue;
        const double v = detail::channel_value(p, c, k);
        sum += v;
        sum2 += v * v;
        ++count;
      }
    if (count == 0) throw Error("channel stats: no unmasked cells in training range");
    const double mean = sum / static_cast<double>(count);
    double var = sum2 / static_cast<double>(count) - mean * mean;
    if (var < 0.0) var = 0.0;
    double sd = std::sqrt(var);
    if (sd < 1e-8) sd = 1.0;
    st.mean[c] = mean;
    st.std[c] = sd;
  }
  return st;
}

namespace detail {

inline bool window_observed(const PricePanel& p, std::size_t day, std::size_t sym, std::size_t m,
                            std::size_t horizon) {
  for (std::size_t j = 0; j < m; ++j)
    if (!p.tradable(day - m + j, sym)) return false;
  return p.tradable(day, sym) && p.tradable(day + horizon, sym);
}

inline void append_batch(const PricePanel& p, const ChannelStats& st, std::size_t day,
                         std::size_t m, std::size_t horizon, std::vector<WindowBatch>& out,
                         std::size_t& skipped) {
  WindowBatch b;
  b.day = day;
  b.date = p.dates[day];
  for (std::size_t s = 0; s < p.n_symbols(); ++s)
    if (window_observed(p, day, s, m, horizon)) b.symbols.push_back(s);
  if (b.symbols.empty()) {
    ++skipped;
    return;
  }
  b.x.resize(b.symbols.size() * kChannels * m);
  b.returns.resize(b.symbols.size());
  const auto ret = forward_return(p, day, horizon);
  for (std::size_t i = 0; i < b.symbols.size(); ++i) {
    const std::size_t s = b.symbols[i];
    for (std::size_t c = 0; c < kChannels; ++c)
      for (std::size_t j = 0; j < m; ++j) {
        const double raw = channel_value(p, c, p.idx(day - m + j, s));
        b.x[(i * kChannels + c) * m + j] = (raw - st.mean[c]) / st.std[c];
      }
    b.returns[i] = ret.values[s];
  }
  out.push_back(std::move(b));
}

}  // namespace detail

/// Builds one batch per eligible day in each split. The window covers the m
/// days before the batch date; labels never resolve past the split boundary,
/// so the last batch in a split sits horizon days before the split's end.
inline BatchSet make_batches(const PricePanel& p, const SplitSpec& split, std::size_t m,
                             std::size_t horizon) {
  if (m < 1 || horizon < 1) throw Error("make_batches: m and horizon must be >= 1");
  const std::size_t T = split.train_days, V = split.valid_days, S = split.test_days;
  if (T == 0 || V == 0 || S == 0) throw Error("make_batches: split sizes must be > 0");
  if (p.days() < T + V + S) throw Error("make_batches: panel too short for split");
  if (T < m + horizon + 1) throw Error("make_batches: training split too short for window");

  BatchSet bs;
  bs.stats = compute_channel_stats(p, T);
  auto fill = [&](std::size_t lo, std::size_t end, std::vector<WindowBatch>& out) {
    const std::size_t first = std::max(lo, m);
    for (std::size_t t = first; t + horizon < end; ++t)
      detail::append_batch(p, bs.stats, t, m, horizon, out, bs.skipped_days);
  };
  fill(0, T, bs.train);
  fill(T, T + V, bs.valid);
  fill(T + V, T + V + S, bs.test);
  if (bs.valid.empty()) warn("make_batches: validation split produced no batches");
  if (bs.test.empty()) warn("make_batches: test split produced no batches");
  return bs;
}

}  // namespace forge
