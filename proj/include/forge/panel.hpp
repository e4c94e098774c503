#pragma once

#include <array>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "forge/core.hpp"

namespace forge {

/// Aligned OHLCV panel: dates x symbols column arrays plus a tradability
/// mask. Immutable after load by convention; all downstream math reads it.
struct PricePanel {
  std::vector<std::string> dates;    // strictly increasing
  std::vector<std::string> symbols;  // unique, sorted
  std::vector<double> open, high, low, close, volume, adj_close;
  std::vector<std::uint8_t> mask;

  std::size_t days() const { return dates.size(); }
  std::size_t n_symbols() const { return symbols.size(); }
  std::size_t idx(std::size_t day, std::size_t sym) const { return day * symbols.size() + sym; }
  bool tradable(std::size_t day, std::size_t sym) const { return mask[idx(day, sym)] != 0; }

  void resize_cells() {
    const std::size_t n = days() * n_symbols();
    open.assign(n, 0.0);
    high.assign(n, 0.0);
    low.assign(n, 0.0);
    close.assign(n, 0.0);
    volume.assign(n, 0.0);
    adj_close.assign(n, 0.0);
    mask.assign(n, 0);
  }
};

struct LoadReport {
  std::size_t rows = 0;
  std::size_t masked_invalid = 0;  // rows violating price/volume ordering
  bool adj_close_defaulted = false;
};

namespace detail {

inline bool valid_ohlcv(double o, double h, double l, double c, double v) {
  if (!(o > 0.0 && h > 0.0 && l > 0.0 && c > 0.0)) return false;
  if (v < 0.0) return false;
  return h >= std::max(o, c) && std::min(o, c) >= l;
}

}  // namespace detail

/// Reads `date,symbol,open,high,low,close,volume[,adj_close]`. Rows that
/// violate the price ordering are masked and counted, not dropped silently.
inline PricePanel load_panel(const std::string& path, LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty panel file: " + path);
  auto header = detail::split_csv_line(line);
  const std::vector<std::string> required = {"date",  "symbol", "open",
                                             "high",  "low",    "close",
                                             "volume"};
  if (header.size() < required.size())
    throw Error("panel header too short in " + path);
  for (std::size_t i = 0; i < required.size(); ++i)
    if (header[i] != required[i])
      throw Error("panel header must start with date,symbol,open,high,low,close,volume");
  bool has_adj = header.size() > 7 && header[7] == "adj_close";

  struct Row {
    std::string date, symbol;
    double o, h, l, c, v, ac;
  };
  std::vector<Row> rows;
  std::set<std::string> date_set, symbol_set;
  std::set<std::pair<std::string, std::string>> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() < 7) throw Error("short panel row: " + line);
    Row r;
    r.date = f[0];
    r.symbol = f[1];
    r.o = detail::parse_double(f[2], "open");
    r.h = detail::parse_double(f[3], "high");
    r.l = detail::parse_double(f[4], "low");
    r.c = detail::parse_double(f[5], "close");
    r.v = detail::parse_double(f[6], "volume");
    r.ac = (has_adj && f.size() > 7 && !f[7].empty()) ? detail::parse_double(f[7], "adj_close")
                                                      : r.c;
    if (!seen.insert({r.date, r.symbol}).second)
      throw Error("duplicate (date,symbol): " + r.date + "," + r.symbol);
    date_set.insert(r.date);
    symbol_set.insert(r.symbol);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error("panel has no data rows: " + path);

  PricePanel p;
  p.dates.assign(date_set.begin(), date_set.end());
  p.symbols.assign(symbol_set.begin(), symbol_set.end());
  p.resize_cells();
  std::map<std::string, std::size_t> dix, six;
  for (std::size_t i = 0; i < p.dates.size(); ++i) dix[p.dates[i]] = i;
  for (std::size_t i = 0; i < p.symbols.size(); ++i) six[p.symbols[i]] = i;

  std::size_t masked = 0;
  for (const auto& r : rows) {
    const std::size_t k = p.idx(dix[r.date], six[r.symbol]);
    p.open[k] = r.o;
    p.high[k] = r.h;
    p.low[k] = r.l;
    p.close[k] = r.c;
    p.volume[k] = r.v;
    p.adj_close[k] = r.ac;
    if (detail::valid_ohlcv(r.o, r.h, r.l, r.c, r.v)) {
      p.mask[k] = 1;
    } else {
      ++masked;
    }
  }
  if (masked > 0) warn(std::to_string(masked) + " rows masked for invalid OHLCV in " + path);
  if (report) {
    report->rows = rows.size();
    report->masked_invalid = masked;
    report->adj_close_defaulted = !has_adj;
  }
  return p;
}

inline void save_panel_csv(const PricePanel& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << "date,symbol,open,high,low,close,volume,adj_close\n";
  for (std::size_t d = 0; d < p.days(); ++d)
    for (std::size_t s = 0; s < p.n_symbols(); ++s) {
      const std::size_t k = p.idx(d, s);
      if (!p.mask[k]) continue;
      out << p.dates[d] << ',' << p.symbols[s] << ',' << detail::format_double(p.open[k]) << ','
          << detail::format_double(p.high[k]) << ',' << detail::format_double(p.low[k]) << ','
          << detail::format_double(p.close[k]) << ',' << detail::format_double(p.volume[k]) << ','
          << detail::format_double(p.adj_close[k]) << '\n';
    }
}

struct ReturnVector {
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
};

/// close_{t+dt}/close_t - 1 per symbol; masked at either endpoint -> masked.
inline ReturnVector forward_return(const PricePanel& p, std::size_t day, std::size_t horizon) {
  if (horizon < 1) throw Error("forward_return: horizon must be >= 1");
  if (day + horizon >= p.days()) throw Error("forward_return: horizon extends past last date");
  ReturnVector r;
  r.values.assign(p.n_symbols(), 0.0);
  r.mask.assign(p.n_symbols(), 0);
  for (std::size_t s = 0; s < p.n_symbols(); ++s) {
    if (p.tradable(day, s) && p.tradable(day + horizon, s)) {
      r.values[s] = p.close[p.idx(day + horizon, s)] / p.close[p.idx(day, s)] - 1.0;
      r.mask[s] = 1;
    }
  }
  return r;
}

/// Projects a factor onto the panel's date x symbol grid. A factor CSV omits
/// masked cells, so a reloaded matrix can be missing whole dates; alignment
/// restores the panel shape. Cells for unknown dates/symbols are dropped with
/// a warning.
inline FactorMatrix align_factor(const FactorMatrix& f, const PricePanel& p) {
  FactorMatrix out;
  out.dates = p.dates;
  out.symbols = p.symbols;
  out.values.assign(p.days() * p.n_symbols(), 0.0);
  out.mask.assign(p.days() * p.n_symbols(), 0);
  std::unordered_map<std::string, std::size_t> date_ix, sym_ix;
  for (std::size_t d = 0; d < p.dates.size(); ++d) date_ix.emplace(p.dates[d], d);
  for (std::size_t s = 0; s < p.symbols.size(); ++s) sym_ix.emplace(p.symbols[s], s);
  std::size_t dropped = 0;
  for (std::size_t d = 0; d < f.rows(); ++d) {
    const auto di = date_ix.find(f.dates[d]);
    for (std::size_t s = 0; s < f.cols(); ++s) {
      if (!f.present(d, s)) continue;
      const auto si = sym_ix.find(f.symbols[s]);
      if (di == date_ix.end() || si == sym_ix.end()) {
        ++dropped;
        continue;
      }
      out.set(di->second, si->second, f.at(d, s));
    }
  }
  if (dropped > 0)
    warn("align_factor: dropped " + std::to_string(dropped) + " cells outside the panel");
  return out;
}

/// Invariant check used by tests and the synthetic generator.
inline void validate_panel(const PricePanel& p) {
  for (std::size_t i = 1; i < p.dates.size(); ++i)
    if (!(p.dates[i - 1] < p.dates[i])) throw Error("panel dates not strictly increasing");
  for (std::size_t i = 1; i < p.symbols.size(); ++i)
    if (!(p.symbols[i - 1] < p.symbols[i])) throw Error("panel symbols not sorted/unique");
  for (std::size_t d = 0; d < p.days(); ++d)
    for (std::size_t s = 0; s < p.n_symbols(); ++s) {
      const std::size_t k = p.idx(d, s);
      if (!p.mask[k]) continue;
      if (!detail::valid_ohlcv(p.open[k], p.high[k], p.low[k], p.close[k], p.volume[k]))
        throw Error("masked-true cell violates OHLCV invariants");
    }
}

}  // namespace forge
