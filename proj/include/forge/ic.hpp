#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "forge/core.hpp"

namespace forge {

struct KernelParams {
  double p = 1.83;
  double eps = 1e-12;
};

inline double population_std(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return std::sqrt(s / n);
}

/// Smooth rank surrogate: logistic of the centered input scaled by 2*std.
/// Constant input maps to all 0.5.
inline std::vector<double> kernel_g(const std::vector<double>& x, const KernelParams& kp = {}) {
  if (x.size() < 2) throw Error("kernel_g: need at least 2 values");
  if (!(kp.p > 0.0) || !(kp.eps > 0.0)) throw Error("kernel_g: bad params");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  const double sd = population_std(x);
  std::vector<double> out(x.size());
  if (sd < kp.eps) {
    std::fill(out.begin(), out.end(), 0.5);
    return out;
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-kp.p * (x[i] - mean) / (2.0 * sd)));
  return out;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y,
                      bool* degenerate = nullptr) {
  if (x.size() != y.size() || x.size() < 2) throw Error("pearson: bad input sizes");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx < 1e-24 || syy < 1e-24) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return sxy / std::sqrt(sxx * syy);
}

/// Differentiable rank-IC surrogate: Pearson correlation of g(x) and g(y).
/// A degenerate side yields 0; the warning fires only when the caller has no
/// flag to observe it (training survives dead nets either way).
inline double diff_ic(const std::vector<double>& x, const std::vector<double>& y,
                      const KernelParams& kp = {}, bool* degenerate = nullptr) {
  if (x.size() != y.size() || x.size() < 3) throw Error("diff_ic: need aligned vectors, n >= 3");
  bool degen = false;
  const double r = pearson(kernel_g(x, kp), kernel_g(y, kp), &degen);
  if (degen && !degenerate) warn("diff_ic: degenerate input, correlation defined as 0");
  if (degenerate) *degenerate = degen;
  return r;
}

/// Fractional ranks, ties by average rank, 1-based.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Rank correlation: Pearson over average ranks. Constant input -> 0; warns
/// only when the caller has no flag to observe the degeneracy.
inline double exact_spearman(const std::vector<double>& x, const std::vector<double>& y,
                             bool* degenerate = nullptr) {
  if (x.size() != y.size() || x.size() < 3)
    throw Error("exact_spearman: need aligned vectors, n >= 3");
  bool degen = false;
  const double r = pearson(average_ranks(x), average_ranks(y), &degen);
  if (degen) {
    if (!degenerate) warn("exact_spearman: constant input, correlation defined as 0");
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return r;
}

}  // namespace forge
