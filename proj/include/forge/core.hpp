#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace forge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void warn(const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; }

/// Deterministic RNG. mt19937_64 drives everything; the float mappings are
/// written out explicitly so streams do not depend on libstdc++'s
/// distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    // Box-Muller; discard the paired draw to keep the object stateless.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::size_t index(std::size_t n) {
    if (n == 0) throw Error("Rng::index: n must be positive");
    std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 gen_;
};

/// dates x symbols matrix of factor values with a presence mask.
/// The layout matches PricePanel: row-major by date.
struct FactorMatrix {
  std::vector<std::string> dates;
  std::vector<std::string> symbols;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  FactorMatrix() = default;
  FactorMatrix(std::vector<std::string> d, std::vector<std::string> s)
      : dates(std::move(d)),
        symbols(std::move(s)),
        values(dates.size() * symbols.size(), 0.0),
        mask(dates.size() * symbols.size(), 0) {}

  std::size_t rows() const { return dates.size(); }
  std::size_t cols() const { return symbols.size(); }
  std::size_t idx(std::size_t d, std::size_t s) const { return d * symbols.size() + s; }

  double at(std::size_t d, std::size_t s) const { return values[idx(d, s)]; }
  bool present(std::size_t d, std::size_t s) const { return mask[idx(d, s)] != 0; }
  void set(std::size_t d, std::size_t s, double v) {
    values[idx(d, s)] = v;
    mask[idx(d, s)] = 1;
  }
  void clear(std::size_t d, std::size_t s) {
    values[idx(d, s)] = 0.0;
    mask[idx(d, s)] = 0;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const char* what) {
  // strtod instead of stod: stod raises out_of_range for subnormals, which
  // format_double can legitimately emit.
  errno = 0;
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || end != begin + s.size())
    throw Error(std::string("cannot parse ") + what + " from '" + s + "'");
  if (errno == ERANGE && (v == HUGE_VAL || v == -HUGE_VAL))
    throw Error(std::string("out-of-range ") + what + " '" + s + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// CSV form: date,symbol,value with masked cells omitted.
inline void save_factor_csv(const FactorMatrix& fm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << "date,symbol,value\n";
  for (std::size_t d = 0; d < fm.rows(); ++d)
    for (std::size_t s = 0; s < fm.cols(); ++s)
      if (fm.present(d, s))
        out << fm.dates[d] << ',' << fm.symbols[s] << ',' << detail::format_double(fm.at(d, s))
            << '\n';
}

inline FactorMatrix load_factor_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty factor file: " + path);
  auto header = detail::split_csv_line(line);
  if (header.size() != 3 || header[0] != "date" || header[1] != "symbol" || header[2] != "value")
    throw Error("bad factor header in " + path);

  struct Cell {
    std::string date, symbol;
    double value;
  };
  std::vector<Cell> cells;
  std::vector<std::string> dates, symbols;
  std::unordered_map<std::string, std::size_t> dix, six;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 3) throw Error("bad factor row in " + path + ": " + line);
    cells.push_back({f[0], f[1], detail::parse_double(f[2], "value")});
    if (!dix.count(f[0])) {
      dix[f[0]] = 0;
      dates.push_back(f[0]);
    }
    if (!six.count(f[1])) {
      six[f[1]] = 0;
      symbols.push_back(f[1]);
    }
  }
  std::sort(dates.begin(), dates.end());
  std::sort(symbols.begin(), symbols.end());
  for (std::size_t i = 0; i < dates.size(); ++i) dix[dates[i]] = i;
  for (std::size_t i = 0; i < symbols.size(); ++i) six[symbols[i]] = i;
  FactorMatrix fm(dates, symbols);
  for (const auto& c : cells) fm.set(dix[c.date], six[c.symbol], c.value);
  return fm;
}

}  // namespace forge
