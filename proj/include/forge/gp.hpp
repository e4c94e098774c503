#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "forge/core.hpp"
#include "forge/ic.hpp"
#include "forge/panel.hpp"

namespace forge {

enum class GpOp {
  Add, Sub, Mul, Div,          // binary
  Neg, Abs, Log1pAbs,          // unary
  TsMean, TsStd, TsDelta, TsRank,  // unary with window
  Series, Const,               // leaves
};

inline int gp_arity(GpOp op) {
  switch (op) {
    case GpOp::Add:
    case GpOp::Sub:
    case GpOp::Mul:
    case GpOp::Div: return 2;
    case GpOp::Series:
    case GpOp::Const: return 0;
    default: return 1;
  }
}

struct GpNode {
  GpOp op = GpOp::Const;
  int series = 0;   // 0..4 = open high low close volume
  int lag = 0;      // Series only
  int window = 0;   // ts ops only
  double value = 0.0;  // Const only
};

/// Factor expression in postfix (reverse polish) order.
struct ExprTree {
  std::vector<GpNode> nodes;
};

constexpr const char* kGpSeriesNames[5] = {"open", "high", "low", "close", "volume"};

// ---------------------------------------------------------------------------
// Structure helpers

/// Start index of the subtree whose root sits at postfix position `end`.
inline std::size_t subtree_start(const ExprTree& t, std::size_t end) {
  if (end >= t.nodes.size()) throw Error("subtree_start: index out of range");
  int need = 1;
  std::size_t i = end + 1;
  while (i-- > 0) {
    need += gp_arity(t.nodes[i].op) - 1;
    if (need == 0) return i;
  }
  throw Error("malformed expression tree");
}

inline int tree_depth(const ExprTree& t) {
  std::vector<int> stack;
  for (const auto& n : t.nodes) {
    const int a = gp_arity(n.op);
    if (static_cast<int>(stack.size()) < a) throw Error("malformed expression tree");
    int d = 0;
    for (int i = 0; i < a; ++i) {
      d = std::max(d, stack.back());
      stack.pop_back();
    }
    stack.push_back(d + 1);
  }
  if (stack.size() != 1) throw Error("malformed expression tree");
  return stack[0];
}

inline void validate_tree(const ExprTree& t, int max_depth) {
  if (t.nodes.empty()) throw Error("empty expression tree");
  if (tree_depth(t) > max_depth) throw Error("expression tree too deep");
  bool has_series = false;
  for (const auto& n : t.nodes) {
    if (n.op == GpOp::Series) {
      has_series = true;
      if (n.series < 0 || n.series > 4 || n.lag < 0) throw Error("bad series leaf");
    }
    const int a = gp_arity(n.op);
    if (a == 1 && n.op != GpOp::Neg && n.op != GpOp::Abs && n.op != GpOp::Log1pAbs) {
      if (n.window < 1) throw Error("time-series op needs a window >= 1");
      if (n.op == GpOp::TsRank && n.window < 2) throw Error("ts_rank needs a window >= 2");
    }
  }
  if (!has_series) throw Error("expression tree has no market-data leaf");
}

// ---------------------------------------------------------------------------
// Evaluation: stack machine over whole (days x symbols) planes.

namespace detail {

struct GpPlane {
  std::vector<double> v;
  std::vector<std::uint8_t> m;
};

inline const std::vector<double>& gp_series(const PricePanel& p, int s) {
  switch (s) {
    case 0: return p.open;
    case 1: return p.high;
    case 2: return p.low;
    case 3: return p.close;
    default: return p.volume;
  }
}

}  // namespace detail

inline FactorMatrix eval_tree(const ExprTree& tree, const PricePanel& p) {
  const std::size_t D = p.days(), S = p.n_symbols(), n = D * S;
  std::vector<detail::GpPlane> stack;
  for (const auto& node : tree.nodes) {
    const int arity = gp_arity(node.op);
    if (static_cast<int>(stack.size()) < arity) throw Error("malformed expression tree");
    detail::GpPlane out;
    out.v.assign(n, 0.0);
    out.m.assign(n, 0);
    switch (node.op) {
      case GpOp::Series: {
        const auto& src = detail::gp_series(p, node.series);
        const std::size_t lag = static_cast<std::size_t>(node.lag);
        for (std::size_t t = lag; t < D; ++t)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t from = (t - lag) * S + s;
            if (p.mask[from]) {
              out.v[t * S + s] = src[from];
              out.m[t * S + s] = 1;
            }
          }
        break;
      }
      case GpOp::Const:
        std::fill(out.v.begin(), out.v.end(), node.value);
        std::fill(out.m.begin(), out.m.end(), std::uint8_t{1});
        break;
      case GpOp::Add:
      case GpOp::Sub:
      case GpOp::Mul:
      case GpOp::Div: {
        detail::GpPlane b = std::move(stack.back());
        stack.pop_back();
        detail::GpPlane a = std::move(stack.back());
        stack.pop_back();
        for (std::size_t i = 0; i < n; ++i) {
          if (!a.m[i] || !b.m[i]) continue;
          switch (node.op) {
            case GpOp::Add: out.v[i] = a.v[i] + b.v[i]; break;
            case GpOp::Sub: out.v[i] = a.v[i] - b.v[i]; break;
            case GpOp::Mul: out.v[i] = a.v[i] * b.v[i]; break;
            default:
              if (std::abs(b.v[i]) < 1e-12) continue;  // protected division
              out.v[i] = a.v[i] / b.v[i];
          }
          out.m[i] = 1;
        }
        stack.push_back(std::move(out));
        continue;
      }
      case GpOp::Neg:
      case GpOp::Abs:
      case GpOp::Log1pAbs: {
        detail::GpPlane a = std::move(stack.back());
        stack.pop_back();
        for (std::size_t i = 0; i < n; ++i) {
          if (!a.m[i]) continue;
          out.m[i] = 1;
          if (node.op == GpOp::Neg) out.v[i] = -a.v[i];
          else if (node.op == GpOp::Abs) out.v[i] = std::abs(a.v[i]);
          else out.v[i] = std::log1p(std::abs(a.v[i]));
        }
        stack.push_back(std::move(out));
        continue;
      }
      case GpOp::TsMean:
      case GpOp::TsStd:
      case GpOp::TsDelta:
      case GpOp::TsRank: {
        detail::GpPlane a = std::move(stack.back());
        stack.pop_back();
        const std::size_t w = static_cast<std::size_t>(node.window);
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t t = 0; t < D; ++t) {
            if (node.op == GpOp::TsDelta) {
              if (t < w) continue;
              if (!a.m[t * S + s] || !a.m[(t - w) * S + s]) continue;
              out.v[t * S + s] = a.v[t * S + s] - a.v[(t - w) * S + s];
              out.m[t * S + s] = 1;
              continue;
            }
            if (t + 1 < w) continue;
            bool ok = true;
            for (std::size_t j = 0; j < w && ok; ++j)
              if (!a.m[(t - j) * S + s]) ok = false;
            if (!ok) continue;
            if (node.op == GpOp::TsMean || node.op == GpOp::TsStd) {
              double sum = 0.0, sum2 = 0.0;
              for (std::size_t j = 0; j < w; ++j) {
                const double v = a.v[(t - j) * S + s];
                sum += v;
                sum2 += v * v;
              }
              const double mean = sum / static_cast<double>(w);
              if (node.op == GpOp::TsMean) {
                out.v[t * S + s] = mean;
              } else {
                double var = sum2 / static_cast<double>(w) - mean * mean;
                out.v[t * S + s] = std::sqrt(var > 0.0 ? var : 0.0);
              }
            } else {  // TsRank: average rank of today's value in its window, in [0,1]
              const double cur = a.v[t * S + s];
              double less = 0.0, equal = 0.0;
              for (std::size_t j = 0; j < w; ++j) {
                const double v = a.v[(t - j) * S + s];
                if (v < cur) less += 1.0;
                else if (v == cur) equal += 1.0;
              }
              const double avg_rank = less + 0.5 * (equal - 1.0) + 1.0;
              out.v[t * S + s] = (avg_rank - 1.0) / static_cast<double>(w - 1);
            }
            out.m[t * S + s] = 1;
          }
        stack.push_back(std::move(out));
        continue;
      }
    }
    stack.push_back(std::move(out));
  }
  if (stack.size() != 1) throw Error("malformed expression tree");
  FactorMatrix f;
  f.dates = p.dates;
  f.symbols = p.symbols;
  f.values = std::move(stack[0].v);
  f.mask = std::move(stack[0].m);
  return f;
}

// ---------------------------------------------------------------------------
// Serialization: canonical prefix text, exact round-trip.

namespace detail {

inline void print_subtree(const ExprTree& t, std::size_t end, std::ostream& out) {
  const GpNode& n = t.nodes[end];
  switch (n.op) {
    case GpOp::Series:
      if (n.lag == 0) out << kGpSeriesNames[n.series];
      else out << "(lag " << n.lag << ' ' << kGpSeriesNames[n.series] << ')';
      return;
    case GpOp::Const: out << format_double(n.value); return;
    default: break;
  }
  const char* name = nullptr;
  switch (n.op) {
    case GpOp::Add: name = "add"; break;
    case GpOp::Sub: name = "sub"; break;
    case GpOp::Mul: name = "mul"; break;
    case GpOp::Div: name = "div"; break;
    case GpOp::Neg: name = "neg"; break;
    case GpOp::Abs: name = "abs"; break;
    case GpOp::Log1pAbs: name = "log1p_abs"; break;
    case GpOp::TsMean: name = "ts_mean"; break;
    case GpOp::TsStd: name = "ts_std"; break;
    case GpOp::TsDelta: name = "ts_delta"; break;
    case GpOp::TsRank: name = "ts_rank"; break;
    default: throw Error("unprintable node");
  }
  out << '(' << name;
  if (gp_arity(n.op) == 1 && n.window > 0) out << ' ' << n.window;
  if (gp_arity(n.op) == 2) {
    const std::size_t right_start = subtree_start(t, end - 1);
    out << ' ';
    print_subtree(t, right_start - 1, out);
    out << ' ';
    print_subtree(t, end - 1, out);
  } else {
    out << ' ';
    print_subtree(t, end - 1, out);
  }
  out << ')';
}

inline std::vector<std::string> gp_tokens(const std::string& text) {
  std::vector<std::string> tok;
  std::string cur;
  for (char c : text) {
    if (c == '(' || c == ')') {
      if (!cur.empty()) {
        tok.push_back(cur);
        cur.clear();
      }
      tok.push_back(std::string(1, c));
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        tok.push_back(cur);
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) tok.push_back(cur);
  return tok;
}

inline int series_index(const std::string& name) {
  for (int i = 0; i < 5; ++i)
    if (name == kGpSeriesNames[i]) return i;
  return -1;
}

inline void parse_expr(const std::vector<std::string>& tok, std::size_t& pos, ExprTree& out);

inline void parse_list(const std::vector<std::string>& tok, std::size_t& pos, ExprTree& out) {
  const std::string head = tok.at(pos++);
  GpNode n;
  if (head == "lag") {
    n.op = GpOp::Series;
    n.lag = std::stoi(tok.at(pos++));
    n.series = series_index(tok.at(pos++));
    if (n.series < 0) throw Error("bad series name in expression");
    out.nodes.push_back(n);
  } else if (head == "add" || head == "sub" || head == "mul" || head == "div") {
    n.op = head == "add" ? GpOp::Add : head == "sub" ? GpOp::Sub
          : head == "mul" ? GpOp::Mul : GpOp::Div;
    parse_expr(tok, pos, out);
    parse_expr(tok, pos, out);
    out.nodes.push_back(n);
  } else if (head == "neg" || head == "abs" || head == "log1p_abs") {
    n.op = head == "neg" ? GpOp::Neg : head == "abs" ? GpOp::Abs : GpOp::Log1pAbs;
    parse_expr(tok, pos, out);
    out.nodes.push_back(n);
  } else if (head == "ts_mean" || head == "ts_std" || head == "ts_delta" || head == "ts_rank") {
    n.op = head == "ts_mean" ? GpOp::TsMean : head == "ts_std" ? GpOp::TsStd
          : head == "ts_delta" ? GpOp::TsDelta : GpOp::TsRank;
    n.window = std::stoi(tok.at(pos++));
    parse_expr(tok, pos, out);
    out.nodes.push_back(n);
  } else {
    throw Error("unknown expression head: " + head);
  }
}

inline void parse_expr(const std::vector<std::string>& tok, std::size_t& pos, ExprTree& out) {
  if (pos >= tok.size()) throw Error("truncated expression");
  if (tok[pos] == "(") {
    ++pos;
    parse_list(tok, pos, out);
    if (pos >= tok.size() || tok[pos] != ")") throw Error("missing ) in expression");
    ++pos;
  } else {
    const std::string& t = tok[pos++];
    GpNode n;
    const int s = series_index(t);
    if (s >= 0) {
      n.op = GpOp::Series;
      n.series = s;
    } else {
      n.op = GpOp::Const;
      n.value = parse_double(t, "expression constant");
    }
    out.nodes.push_back(n);
  }
}

}  // namespace detail

inline std::string format_tree(const ExprTree& t) {
  std::ostringstream out;
  detail::print_subtree(t, t.nodes.size() - 1, out);
  return out.str();
}

inline ExprTree parse_tree(const std::string& text) {
  const auto tok = detail::gp_tokens(text);
  ExprTree t;
  std::size_t pos = 0;
  detail::parse_expr(tok, pos, t);
  if (pos != tok.size()) throw Error("trailing tokens in expression: " + text);
  tree_depth(t);  // structural check
  return t;
}

// ---------------------------------------------------------------------------
// Random generation and variation

struct GpOptions {
  std::size_t population = 200;
  std::size_t generations = 30;
  int max_depth = 6;
  std::size_t tournament = 4;
  std::size_t elitism = 2;
  double crossover_prob = 0.7;
  std::size_t horizon = 5;
  std::size_t min_symbols = 3;
};

namespace detail {

inline GpNode random_leaf(Rng& rng) {
  GpNode n;
  if (rng.uniform() < 0.75) {
    n.op = GpOp::Series;
    n.series = static_cast<int>(rng.index(5));
    n.lag = rng.uniform() < 0.5 ? 0 : static_cast<int>(1 + rng.index(5));
  } else {
    n.op = GpOp::Const;
    n.value = rng.uniform(-2.0, 2.0);
  }
  return n;
}

inline GpNode random_function(Rng& rng) {
  static const GpOp kFns[] = {GpOp::Add, GpOp::Sub, GpOp::Mul, GpOp::Div, GpOp::Neg,
                              GpOp::Abs, GpOp::Log1pAbs, GpOp::TsMean, GpOp::TsStd,
                              GpOp::TsDelta, GpOp::TsRank};
  GpNode n;
  n.op = kFns[rng.index(std::size(kFns))];
  if (gp_arity(n.op) == 1 && n.op != GpOp::Neg && n.op != GpOp::Abs && n.op != GpOp::Log1pAbs)
    n.window = static_cast<int>(2 + rng.index(9));
  return n;
}

inline void grow_tree(Rng& rng, int depth_budget, bool full, ExprTree& out) {
  if (depth_budget <= 1 || (!full && rng.uniform() < 0.3)) {
    out.nodes.push_back(random_leaf(rng));
    return;
  }
  GpNode n = random_function(rng);
  for (int i = 0; i < gp_arity(n.op); ++i) grow_tree(rng, depth_budget - 1, full, out);
  out.nodes.push_back(n);
}

inline ExprTree random_tree(Rng& rng, int max_depth) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    ExprTree t;
    const int depth = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(max_depth - 1)));
    grow_tree(rng, depth, rng.uniform() < 0.5, t);
    bool has_series = false;
    for (const auto& n : t.nodes) has_series |= n.op == GpOp::Series;
    if (has_series && tree_depth(t) <= max_depth) return t;
  }
  // Fall back to a bare close leaf; practically unreachable.
  ExprTree t;
  GpNode n;
  n.op = GpOp::Series;
  n.series = 3;
  t.nodes.push_back(n);
  return t;
}

inline ExprTree splice(const ExprTree& host, std::size_t start, std::size_t end,
                       const std::vector<GpNode>& replacement) {
  ExprTree out;
  out.nodes.assign(host.nodes.begin(), host.nodes.begin() + static_cast<std::ptrdiff_t>(start));
  out.nodes.insert(out.nodes.end(), replacement.begin(), replacement.end());
  out.nodes.insert(out.nodes.end(), host.nodes.begin() + static_cast<std::ptrdiff_t>(end + 1),
                   host.nodes.end());
  return out;
}

}  // namespace detail

/// One of: point substitution, subtree replacement, constant perturbation.
/// Draws that cannot produce a valid tree within the retry budget fall back
/// to returning the input unchanged.
inline ExprTree mutate(const ExprTree& tree, Rng& rng, int max_depth = 6) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    const double kind = rng.uniform();
    ExprTree out = tree;
    if (kind < 0.4) {  // point substitution, arity preserved
      const std::size_t i = rng.index(out.nodes.size());
      const int a = gp_arity(out.nodes[i].op);
      GpNode n;
      if (a == 0) n = detail::random_leaf(rng);
      else {
        n = detail::random_function(rng);
        for (int tries = 0; gp_arity(n.op) != a && tries < 32; ++tries)
          n = detail::random_function(rng);
        if (gp_arity(n.op) != a) continue;
      }
      out.nodes[i] = n;
    } else if (kind < 0.8) {  // subtree replacement
      const std::size_t end = rng.index(out.nodes.size());
      const std::size_t start = subtree_start(out, end);
      ExprTree sub;
      detail::grow_tree(rng, 1 + static_cast<int>(rng.index(3)), false, sub);
      out = detail::splice(out, start, end, sub.nodes);
    } else {  // constant perturbation
      std::vector<std::size_t> consts;
      for (std::size_t i = 0; i < out.nodes.size(); ++i)
        if (out.nodes[i].op == GpOp::Const) consts.push_back(i);
      if (consts.empty()) continue;
      out.nodes[consts[rng.index(consts.size())]].value += rng.normal() * 0.1;
    }
    try {
      validate_tree(out, max_depth);
      return out;
    } catch (const Error&) {
      continue;
    }
  }
  return tree;
}

/// Random subtree swap; offspring over the depth cap trigger a redraw, and
/// a failed budget returns the parents unchanged.
inline std::pair<ExprTree, ExprTree> crossover(const ExprTree& a, const ExprTree& b, Rng& rng,
                                               int max_depth = 6) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    const std::size_t ea = rng.index(a.nodes.size());
    const std::size_t eb = rng.index(b.nodes.size());
    const std::size_t sa = subtree_start(a, ea);
    const std::size_t sb = subtree_start(b, eb);
    std::vector<GpNode> sub_a(a.nodes.begin() + static_cast<std::ptrdiff_t>(sa),
                              a.nodes.begin() + static_cast<std::ptrdiff_t>(ea + 1));
    std::vector<GpNode> sub_b(b.nodes.begin() + static_cast<std::ptrdiff_t>(sb),
                              b.nodes.begin() + static_cast<std::ptrdiff_t>(eb + 1));
    ExprTree ca = detail::splice(a, sa, ea, sub_b);
    ExprTree cb = detail::splice(b, sb, eb, sub_a);
    try {
      validate_tree(ca, max_depth);
      validate_tree(cb, max_depth);
      return {std::move(ca), std::move(cb)};
    } catch (const Error&) {
      continue;
    }
  }
  return {a, b};
}

// ---------------------------------------------------------------------------
// Evolution

struct GpMember {
  ExprTree tree;
  double fitness = 0.0;
  bool valid = false;
};

struct Population {
  std::vector<GpMember> members;
  std::size_t generation = 0;
};

/// Mean per-day exact rank IC of the tree's values against forward returns
/// over days [day_lo, day_hi). Returns false if no day is scorable.
inline bool tree_fitness(const ExprTree& tree, const PricePanel& p, std::size_t day_lo,
                         std::size_t day_hi, std::size_t horizon, std::size_t min_symbols,
                         double* out) {
  const FactorMatrix f = eval_tree(tree, p);
  double sum = 0.0;
  std::size_t days = 0;
  for (std::size_t t = day_lo; t < day_hi; ++t) {
    if (t + horizon >= p.days()) break;
    const auto ret = forward_return(p, t, horizon);
    std::vector<double> xs, ys;
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (f.present(t, s) && ret.mask[s]) {
        xs.push_back(f.at(t, s));
        ys.push_back(ret.values[s]);
      }
    if (xs.size() < min_symbols || xs.size() < 3) continue;
    bool degen = false;
    const double rho = exact_spearman(xs, ys, &degen);
    if (degen) continue;
    sum += rho;
    ++days;
  }
  if (days == 0) return false;
  *out = sum / static_cast<double>(days);
  return true;
}

struct GpRun {
  Population pop;
  std::vector<ExprTree> best;        // top trees, distinct by printed form
  std::vector<double> best_fitness;  // aligned with best
  std::vector<double> best_per_generation;
};

inline GpRun evolve(const PricePanel& panel, std::size_t day_lo, std::size_t day_hi,
                    const GpOptions& opt, std::uint64_t seed, std::size_t top_k = 5) {
  if (opt.population < std::max<std::size_t>(opt.elitism + 1, 2))
    throw Error("evolve: population too small");
  if (opt.max_depth < 2) throw Error("evolve: max depth must be >= 2");
  if (day_lo >= day_hi) throw Error("evolve: empty day range");
  Rng rng(seed);

  Population pop;
  pop.members.resize(opt.population);
  for (auto& m : pop.members) m.tree = detail::random_tree(rng, opt.max_depth);

  auto score = [&](GpMember& m) {
    double fit = 0.0;
    m.valid = tree_fitness(m.tree, panel, day_lo, day_hi, opt.horizon, opt.min_symbols, &fit);
    m.fitness = m.valid ? fit : -1e18;
  };
  auto rank_members = [&](Population& pp) {
    std::stable_sort(pp.members.begin(), pp.members.end(),
                     [](const GpMember& a, const GpMember& b) { return a.fitness > b.fitness; });
  };

  for (auto& m : pop.members) score(m);
  rank_members(pop);
  if (!pop.members.front().valid)
    throw Error("evolve: every tree in the initial population is degenerate on this split");

  GpRun run;
  run.best_per_generation.push_back(pop.members.front().fitness);

  auto tournament_pick = [&]() -> const GpMember& {
    std::size_t best = rng.index(pop.members.size());
    for (std::size_t i = 1; i < opt.tournament; ++i) {
      const std::size_t c = rng.index(pop.members.size());
      if (pop.members[c].fitness > pop.members[best].fitness) best = c;
    }
    return pop.members[best];
  };

  for (std::size_t gen = 0; gen < opt.generations; ++gen) {
    Population next;
    next.generation = gen + 1;
    for (std::size_t i = 0; i < opt.elitism && i < pop.members.size(); ++i)
      next.members.push_back(pop.members[i]);
    while (next.members.size() < opt.population) {
      if (rng.uniform() < opt.crossover_prob) {
        auto [ca, cb] = crossover(tournament_pick().tree, tournament_pick().tree, rng,
                                  opt.max_depth);
        GpMember ma;
        ma.tree = std::move(ca);
        score(ma);
        next.members.push_back(std::move(ma));
        if (next.members.size() < opt.population) {
          GpMember mb;
          mb.tree = std::move(cb);
          score(mb);
          next.members.push_back(std::move(mb));
        }
      } else {
        GpMember m;
        m.tree = mutate(tournament_pick().tree, rng, opt.max_depth);
        score(m);
        next.members.push_back(std::move(m));
      }
    }
    rank_members(next);
    pop = std::move(next);
    run.best_per_generation.push_back(pop.members.front().fitness);
    if (!pop.members.front().valid)
      throw Error("evolve: population degenerated; no scorable tree left");
  }

  std::set<std::string> seen;
  for (const auto& m : pop.members) {
    if (!m.valid) continue;
    const std::string text = format_tree(m.tree);
    if (!seen.insert(text).second) continue;
    run.best.push_back(m.tree);
    run.best_fitness.push_back(m.fitness);
    if (run.best.size() >= top_k) break;
  }
  run.pop = std::move(pop);
  return run;
}

}  // namespace forge
