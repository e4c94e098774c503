#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "forge/core.hpp"
#include "forge/ic.hpp"
#include "forge/panel.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Per-factor IC statistics

struct IcStats {
  std::vector<double> day_ic;
  std::vector<std::size_t> days;  // day indices aligned with day_ic
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  double ir = 0.0;
  std::size_t skipped_days = 0;
};

inline IcStats ic_stats(const FactorMatrix& f, const PricePanel& p, std::size_t day_lo,
                        std::size_t day_hi, std::size_t horizon) {
  if (f.rows() != p.days() || f.cols() != p.n_symbols())
    throw Error("ic_stats: factor shape does not match panel");
  IcStats st;
  for (std::size_t t = day_lo; t < day_hi && t + horizon < p.days(); ++t) {
    const auto ret = forward_return(p, t, horizon);
    std::vector<double> xs, ys;
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (f.present(t, s) && ret.mask[s]) {
        xs.push_back(f.at(t, s));
        ys.push_back(ret.values[s]);
      }
    if (xs.size() < 3) {
      ++st.skipped_days;
      continue;
    }
    bool degen = false;
    const double rho = exact_spearman(xs, ys, &degen);
    if (degen) {
      ++st.skipped_days;
      continue;
    }
    st.day_ic.push_back(rho);
    st.days.push_back(t);
  }
  if (st.day_ic.empty()) return st;
  double sum = 0.0;
  for (double v : st.day_ic) sum += v;
  st.mean = sum / static_cast<double>(st.day_ic.size());
  if (st.day_ic.size() > 1) {
    double ss = 0.0;
    for (double v : st.day_ic) ss += (v - st.mean) * (v - st.mean);
    st.std = std::sqrt(ss / static_cast<double>(st.day_ic.size() - 1));
    if (st.std > 1e-15) st.ir = st.mean / st.std;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Factor sets: joint IC series on common days, IC covariance

struct FactorSet {
  std::vector<std::string> names;
  std::vector<FactorMatrix> factors;
  std::vector<std::size_t> days;                // common scorable days
  std::vector<std::vector<double>> ic_series;   // [factor][day]
  std::vector<double> ic_mean;                  // IC-tilde
  std::vector<double> ic_cov;                   // k x k, population covariance
};

inline FactorSet build_factor_set(std::vector<std::string> names,
                                  std::vector<FactorMatrix> factors, const PricePanel& p,
                                  std::size_t day_lo, std::size_t day_hi, std::size_t horizon) {
  if (names.size() != factors.size() || factors.empty())
    throw Error("factor set: names/factors mismatch or empty");
  const std::size_t k = factors.size();
  FactorSet fs;
  fs.names = std::move(names);
  fs.factors = std::move(factors);
  fs.ic_series.assign(k, {});

  for (std::size_t t = day_lo; t < day_hi && t + horizon < p.days(); ++t) {
    const auto ret = forward_return(p, t, horizon);
    std::vector<double> ics(k);
    bool all_ok = true;
    for (std::size_t i = 0; i < k && all_ok; ++i) {
      std::vector<double> xs, ys;
      for (std::size_t s = 0; s < p.n_symbols(); ++s)
        if (fs.factors[i].present(t, s) && ret.mask[s]) {
          xs.push_back(fs.factors[i].at(t, s));
          ys.push_back(ret.values[s]);
        }
      if (xs.size() < 3) {
        all_ok = false;
        break;
      }
      bool degen = false;
      ics[i] = exact_spearman(xs, ys, &degen);
      if (degen) all_ok = false;
    }
    if (!all_ok) continue;
    fs.days.push_back(t);
    for (std::size_t i = 0; i < k; ++i) fs.ic_series[i].push_back(ics[i]);
  }
  if (fs.days.size() < 2) throw Error("factor set: fewer than 2 common scorable days");

  const double n = static_cast<double>(fs.days.size());
  fs.ic_mean.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (double v : fs.ic_series[i]) fs.ic_mean[i] += v;
    fs.ic_mean[i] /= n;
  }
  fs.ic_cov.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      double c = 0.0;
      for (std::size_t d = 0; d < fs.days.size(); ++d)
        c += (fs.ic_series[i][d] - fs.ic_mean[i]) * (fs.ic_series[j][d] - fs.ic_mean[j]);
      c /= n;
      fs.ic_cov[i * k + j] = c;
      fs.ic_cov[j * k + i] = c;
    }
  return fs;
}

// ---------------------------------------------------------------------------
// Optimal combination (ridge-stabilized quadratic optimum)

namespace detail {

/// Cholesky solve of A x = b for symmetric positive definite A (k x k).
inline std::vector<double> cholesky_solve(std::vector<double> a, std::size_t k,
                                          std::vector<double> b) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * k + j];
      for (std::size_t l = 0; l < j; ++l) s -= a[i * k + l] * a[j * k + l];
      if (i == j) {
        if (s <= 0.0) throw Error("covariance not positive definite after ridge");
        a[i * k + i] = std::sqrt(s);
      } else {
        a[i * k + j] = s / a[j * k + j];
      }
    }
  }
  for (std::size_t i = 0; i < k; ++i) {  // L y = b
    double s = b[i];
    for (std::size_t l = 0; l < i; ++l) s -= a[i * k + l] * b[l];
    b[i] = s / a[i * k + i];
  }
  for (std::size_t i = k; i-- > 0;) {  // L^T x = y
    double s = b[i];
    for (std::size_t l = i + 1; l < k; ++l) s -= a[l * k + i] * b[l];
    b[i] = s / a[i * k + i];
  }
  return b;
}

}  // namespace detail

struct Combination {
  std::vector<double> weights;  // v*
  double optimal_ic = 0.0;      // IC*
  double ridge = 0.0;
  FactorMatrix combined;
};

/// v* = (1/lambda) Sigma^-1 IC-tilde; IC* = (1/lambda) IC-tilde' Sigma^-1
/// IC-tilde. The combined factor is the per-day weighted sum of each
/// factor's z-scored cross-section over the symbols all factors cover.
inline Combination optimal_combination(const FactorSet& fs, double lambda = 1.0) {
  if (!(lambda > 0.0)) throw Error("optimal_combination: lambda must be > 0");
  const std::size_t k = fs.factors.size();
  double trace = 0.0;
  for (std::size_t i = 0; i < k; ++i) trace += fs.ic_cov[i * k + i];
  const double ridge = trace > 0.0 ? 1e-6 * trace / static_cast<double>(k) : 1e-12;
  std::vector<double> a = fs.ic_cov;
  for (std::size_t i = 0; i < k; ++i) a[i * k + i] += ridge;

  Combination out;
  out.ridge = ridge;
  std::vector<double> x = detail::cholesky_solve(a, k, fs.ic_mean);
  out.weights.assign(k, 0.0);
  double ic_star = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.weights[i] = x[i] / lambda;
    ic_star += fs.ic_mean[i] * x[i];
  }
  out.optimal_ic = ic_star / lambda;

  const FactorMatrix& first = fs.factors.front();
  out.combined.dates = first.dates;
  out.combined.symbols = first.symbols;
  out.combined.values.assign(first.values.size(), 0.0);
  out.combined.mask.assign(first.mask.size(), 0);
  const std::size_t D = first.rows(), S = first.cols();
  for (std::size_t t = 0; t < D; ++t) {
    std::vector<std::size_t> common;
    for (std::size_t s = 0; s < S; ++s) {
      bool all = true;
      for (std::size_t i = 0; i < k && all; ++i) all = fs.factors[i].present(t, s);
      if (all) common.push_back(s);
    }
    if (common.size() < 2) continue;
    std::vector<double> acc(common.size(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> z(common.size());
      double mean = 0.0;
      for (std::size_t c = 0; c < common.size(); ++c) {
        z[c] = fs.factors[i].at(t, common[c]);
        mean += z[c];
      }
      mean /= static_cast<double>(common.size());
      double var = 0.0;
      for (double v : z) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(common.size()));
      if (sd < 1e-12) continue;  // constant cross-section adds nothing
      for (std::size_t c = 0; c < common.size(); ++c)
        acc[c] += out.weights[i] * (z[c] - mean) / sd;
    }
    for (std::size_t c = 0; c < common.size(); ++c) out.combined.set(t, common[c], acc[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diversity: softmax cross-entropy distances + k-means over the matrix rows

struct DiversityReport {
  std::vector<double> distance;       // symmetrized mean distance, k x k
  std::vector<double> raw_distance;   // asymmetric cross-entropy mean, k x k
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> medoids;   // one per cluster
  double score = 0.0;                 // mean pairwise medoid distance
  std::size_t days_used = 0;
};

namespace detail {

inline void softmax_inplace(std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

struct KmeansResult {
  std::vector<std::size_t> assignment;
  double objective = std::numeric_limits<double>::infinity();
  bool ok = false;
};

inline KmeansResult kmeans_rows(const std::vector<double>& pts, std::size_t n, std::size_t dim,
                                std::size_t k, Rng& rng) {
  auto dist2 = [&](std::size_t i, const std::vector<double>& c, std::size_t ci) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = pts[i * dim + d] - c[ci * dim + d];
      s += diff * diff;
    }
    return s;
  };
  std::vector<double> centers(k * dim, 0.0);
  std::vector<double> best_d(n, 0.0);
  // k-means++ seeding
  std::size_t first = rng.index(n);
  for (std::size_t d = 0; d < dim; ++d) centers[d] = pts[first * dim + d];
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t cc = 0; cc < c; ++cc) m = std::min(m, dist2(i, centers, cc));
      best_d[i] = m;
      total += m;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total, acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += best_d[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);
    }
    for (std::size_t d = 0; d < dim; ++d) centers[c * dim + d] = pts[pick * dim + d];
  }

  KmeansResult res;
  res.assignment.assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = dist2(i, centers, c);
        if (d < m) {
          m = d;
          arg = c;
        }
      }
      if (res.assignment[i] != arg) {
        res.assignment[i] = arg;
        changed = true;
      }
    }
    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[res.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[res.assignment[i] * dim + d] += pts[i * dim + d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) return res;  // empty cluster: this restart fails
      for (std::size_t d = 0; d < dim; ++d)
        centers[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
    }
    if (!changed) break;
  }
  res.objective = 0.0;
  for (std::size_t i = 0; i < n; ++i) res.objective += dist2(i, centers, res.assignment[i]);
  res.ok = true;
  return res;
}

/// Global optimum by enumerating every surjective labeling; only called when
/// k^n is small. Ties keep the first labeling in odometer order.
inline KmeansResult kmeans_exact(const std::vector<double>& pts, std::size_t n, std::size_t dim,
                                 std::size_t k) {
  KmeansResult best;
  std::vector<std::size_t> assign(n, 0);
  std::vector<double> centers(k * dim);
  std::vector<std::size_t> counts(k);
  while (true) {
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) ++counts[assign[i]];
    bool surjective = true;
    for (std::size_t c = 0; c < k; ++c) surjective = surjective && counts[c] > 0;
    if (surjective) {
      std::fill(centers.begin(), centers.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) centers[assign[i] * dim + d] += pts[i * dim + d];
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t d = 0; d < dim; ++d)
          centers[c * dim + d] /= static_cast<double>(counts[c]);
      double obj = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = pts[i * dim + d] - centers[assign[i] * dim + d];
          obj += diff * diff;
        }
      if (obj < best.objective) {
        best.objective = obj;
        best.assignment = assign;
        best.ok = true;
      }
    }
    std::size_t pos = 0;
    while (pos < n && ++assign[pos] == k) assign[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

}  // namespace detail

/// Per day, each factor's cross-section over the mutual symbol set is
/// softmax-normalized; pairwise cross-entropies are averaged over days. The
/// symmetrized matrix feeds k-means on its rows: tiny instances are solved
/// exactly over all surjective labelings, larger ones by k-means++ x 50
/// restarts. The score is the mean distance between cluster medoids.
inline DiversityReport diversity_score(const std::vector<FactorMatrix>& factors,
                                       std::size_t day_lo, std::size_t day_hi, std::size_t k,
                                       std::uint64_t seed = 7) {
  const std::size_t nf = factors.size();
  if (k < 1 || k > nf) throw Error("diversity: k must be in [1, number of factors]");
  if (nf < 2) throw Error("diversity: need at least 2 factors");
  const std::size_t D = factors[0].rows(), S = factors[0].cols();
  for (const auto& f : factors)
    if (f.rows() != D || f.cols() != S) throw Error("diversity: factor shapes differ");

  DiversityReport rep;
  rep.raw_distance.assign(nf * nf, 0.0);
  for (std::size_t t = day_lo; t < day_hi && t < D; ++t) {
    std::vector<std::size_t> common;
    for (std::size_t s = 0; s < S; ++s) {
      bool all = true;
      for (std::size_t i = 0; i < nf && all; ++i) all = factors[i].present(t, s);
      if (all) common.push_back(s);
    }
    if (common.size() < 2) continue;
    std::vector<std::vector<double>> probs(nf, std::vector<double>(common.size()));
    for (std::size_t i = 0; i < nf; ++i) {
      for (std::size_t c = 0; c < common.size(); ++c) probs[i][c] = factors[i].at(t, common[c]);
      detail::softmax_inplace(probs[i]);
    }
    for (std::size_t i = 0; i < nf; ++i)
      for (std::size_t j = 0; j < nf; ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < common.size(); ++c)
          d -= probs[i][c] * std::log(std::max(probs[j][c], 1e-300));
        rep.raw_distance[i * nf + j] += d;
      }
    ++rep.days_used;
  }
  if (rep.days_used == 0) throw Error("diversity: no day with a usable mutual symbol set");
  for (double& v : rep.raw_distance) v /= static_cast<double>(rep.days_used);

  rep.distance.assign(nf * nf, 0.0);
  for (std::size_t i = 0; i < nf; ++i)
    for (std::size_t j = 0; j < nf; ++j)
      rep.distance[i * nf + j] =
          0.5 * (rep.raw_distance[i * nf + j] + rep.raw_distance[j * nf + i]);

  detail::KmeansResult best;
  std::uint64_t labelings = 1;
  for (std::size_t i = 0; i < nf && labelings <= (1u << 16); ++i) labelings *= k;
  if (labelings <= (1u << 16)) {
    best = detail::kmeans_exact(rep.distance, nf, nf, k);
  } else {
    Rng rng(seed);
    for (int restart = 0; restart < 50; ++restart) {
      auto r = detail::kmeans_rows(rep.distance, nf, nf, k, rng);
      if (r.ok && r.objective < best.objective) best = std::move(r);
    }
  }
  if (!best.ok) throw Error("diversity: k-means failed on every restart");
  rep.assignment = best.assignment;

  rep.medoids.assign(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    double best_sum = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nf; ++i) {
      if (rep.assignment[i] != c) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < nf; ++j)
        if (rep.assignment[j] == c) s += rep.distance[i * nf + j];
      if (s < best_sum) {
        best_sum = s;
        rep.medoids[c] = i;
      }
    }
  }
  double score = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      score += rep.distance[rep.medoids[a] * nf + rep.medoids[b]];
      ++pairs;
    }
  rep.score = pairs > 0 ? score / static_cast<double>(pairs) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Long-short quantile backtest

enum class BacktestMode { LongShort, LongMinusBenchmark };

struct BacktestReport {
  std::vector<std::string> dates;  // rebalance dates
  std::vector<double> period_returns;
  std::vector<double> equity;  // length = periods + 1, starts at 1.0
  double cumulative_return = 0.0;
  double annualized_return = 0.0;
  double max_drawdown = 0.0;
  double sharpe = 0.0;
  double total_turnover = 0.0;
  double commission_paid = 0.0;  // in equity fractions, sum of rate * turnover
  std::size_t periods = 0;
  std::size_t skipped = 0;
};

/// Rebalances every `horizon` days inside [day_lo, day_hi): long the top
/// `quantile` of factor values, short the bottom (or track an equal-weight
/// benchmark in LongMinusBenchmark mode). Commission is charged on traded
/// notional; open positions are not liquidated after the last period.
inline BacktestReport backtest(const FactorMatrix& f, const PricePanel& p, std::size_t day_lo,
                               std::size_t day_hi, std::size_t horizon, double quantile = 0.2,
                               double commission = 0.003,
                               BacktestMode mode = BacktestMode::LongShort) {
  if (f.rows() != p.days() || f.cols() != p.n_symbols())
    throw Error("backtest: factor shape does not match panel");
  if (!(quantile > 0.0) || quantile > 0.5) throw Error("backtest: quantile must be in (0, 0.5]");
  if (commission < 0.0) throw Error("backtest: negative commission");
  if (horizon < 1) throw Error("backtest: horizon must be >= 1");
  if (day_hi <= day_lo) throw Error("backtest: empty day range");

  BacktestReport rep;
  rep.equity.push_back(1.0);
  std::vector<double> w_prev(p.n_symbols(), 0.0);
  const double periods_per_year = 252.0 / static_cast<double>(horizon);

  for (std::size_t t = day_lo; t + horizon < p.days() && t + horizon <= day_hi - 1; t += horizon) {
    const auto ret = forward_return(p, t, horizon);
    std::vector<std::size_t> elig;
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (f.present(t, s) && ret.mask[s]) elig.push_back(s);
    const std::size_t nq = static_cast<std::size_t>(quantile * static_cast<double>(elig.size()));

    std::vector<double> w(p.n_symbols(), 0.0);
    bool tradable_day = nq >= 1 && 2 * nq <= elig.size();
    if (!tradable_day) {
      ++rep.skipped;
      warn("backtest: skipping " + p.dates[t] + " (too few names)");
      // Positions are liquidated; the wind-down trade still costs commission.
    } else {
      std::stable_sort(elig.begin(), elig.end(), [&](std::size_t a, std::size_t b) {
        const double va = f.at(t, a), vb = f.at(t, b);
        return va != vb ? va > vb : a < b;
      });
      if (mode == BacktestMode::LongShort) {
        for (std::size_t i = 0; i < nq; ++i) w[elig[i]] = 0.5 / static_cast<double>(nq);
        for (std::size_t i = 0; i < nq; ++i)
          w[elig[elig.size() - 1 - i]] = -0.5 / static_cast<double>(nq);
      } else {
        for (std::size_t i = 0; i < nq; ++i) w[elig[i]] = 1.0 / static_cast<double>(nq);
      }
    }

    double turnover = 0.0;
    for (std::size_t s = 0; s < p.n_symbols(); ++s) turnover += std::abs(w[s] - w_prev[s]);
    double gross = 0.0;
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (w[s] != 0.0) gross += w[s] * ret.values[s];
    if (tradable_day && mode == BacktestMode::LongMinusBenchmark) {
      double bench = 0.0;
      for (std::size_t s : elig) bench += ret.values[s];
      gross -= bench / static_cast<double>(elig.size());
    }
    const double net = gross - commission * turnover;
    rep.period_returns.push_back(net);
    rep.dates.push_back(p.dates[t]);
    rep.total_turnover += turnover;
    rep.commission_paid += commission * turnover;
    double e = rep.equity.back() * (1.0 + net);
    if (e <= 0.0) {
      warn("backtest: equity wiped out at " + p.dates[t]);
      e = 1e-12;
    }
    rep.equity.push_back(e);
    ++rep.periods;
    // Turnover compares consecutive target books; intra-period drift is not
    // modeled, which keeps the accounting hand-checkable.
    w_prev = w;
  }

  rep.cumulative_return = rep.equity.back() - 1.0;
  if (rep.periods > 0) {
    const double years = static_cast<double>(rep.periods) / periods_per_year;
    rep.annualized_return = std::pow(rep.equity.back(), 1.0 / years) - 1.0;
  }
  double peak = rep.equity.front();
  for (double e : rep.equity) {
    peak = std::max(peak, e);
    rep.max_drawdown = std::max(rep.max_drawdown, (peak - e) / peak);
  }
  if (rep.periods > 1) {
    double mean = 0.0;
    for (double r : rep.period_returns) mean += r;
    mean /= static_cast<double>(rep.periods);
    double ss = 0.0;
    for (double r : rep.period_returns) ss += (r - mean) * (r - mean);
    const double sd = std::sqrt(ss / static_cast<double>(rep.periods - 1));
    if (sd > 1e-15) rep.sharpe = mean / sd * std::sqrt(periods_per_year);
  }
  return rep;
}

}  // namespace forge
