#pragma once

// Shared helpers for the test suites.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "forge/core.hpp"
#include "forge/panel.hpp"

namespace testutil {

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// Random-walk panel with optional masked cells; independent of the synthetic
// market generator so tests of lower layers do not depend on it.
inline forge::PricePanel make_panel(std::uint64_t seed, std::size_t days, std::size_t syms,
                                    double mask_prob = 0.0) {
  forge::Rng rng(seed);
  forge::PricePanel p;
  for (std::size_t d = 0; d < days; ++d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "d%04u", static_cast<unsigned>(d));
    p.dates.push_back(buf);
  }
  for (std::size_t s = 0; s < syms; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%03u", static_cast<unsigned>(s));
    p.symbols.push_back(buf);
  }
  p.resize_cells();
  for (std::size_t s = 0; s < syms; ++s) {
    double px = 20.0 + 10.0 * rng.uniform();
    for (std::size_t d = 0; d < days; ++d) {
      px *= std::exp(0.01 * rng.normal());
      const std::size_t k = p.idx(d, s);
      const double o = px * std::exp(0.004 * rng.normal());
      p.open[k] = o;
      p.close[k] = px;
      p.high[k] = std::max(o, px) * (1.0 + 0.003 * rng.uniform());
      p.low[k] = std::min(o, px) * (1.0 - 0.003 * rng.uniform());
      p.volume[k] = 1e5 * (0.5 + rng.uniform());
      p.adj_close[k] = px;
      p.mask[k] = rng.uniform() < mask_prob ? 0 : 1;
    }
  }
  return p;
}

}  // namespace testutil
