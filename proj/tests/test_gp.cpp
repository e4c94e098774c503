#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <forge/gp.hpp>
#include <forge/panel.hpp>

#include "util.hpp"

using forge::ExprTree;
using forge::FactorMatrix;
using forge::GpNode;
using forge::GpOp;
using forge::PricePanel;
using forge::Rng;

namespace {

// Independent recursive interpreter over single (day, symbol) cells. Walks
// the postfix vector top-down via subtree offsets; missing data propagates
// as nullopt exactly like the plane evaluator's mask.
std::optional<double> eval_cell(const ExprTree& tree, std::size_t root, const PricePanel& p,
                                std::size_t t, std::size_t s) {
  const GpNode& n = tree.nodes[root];
  const std::size_t S = p.n_symbols();
  switch (n.op) {
    case GpOp::Series: {
      if (t < static_cast<std::size_t>(n.lag)) return std::nullopt;
      const std::size_t from = (t - n.lag) * S + s;
      if (!p.mask[from]) return std::nullopt;
      switch (n.series) {
        case 0: return p.open[from];
        case 1: return p.high[from];
        case 2: return p.low[from];
        case 3: return p.close[from];
        default: return p.volume[from];
      }
    }
    case GpOp::Const:
      return n.value;
    case GpOp::Add:
    case GpOp::Sub:
    case GpOp::Mul:
    case GpOp::Div: {
      const std::size_t right = root - 1;
      const std::size_t left = forge::subtree_start(tree, right) - 1;
      const auto a = eval_cell(tree, left, p, t, s);
      const auto b = eval_cell(tree, right, p, t, s);
      if (!a || !b) return std::nullopt;
      switch (n.op) {
        case GpOp::Add: return *a + *b;
        case GpOp::Sub: return *a - *b;
        case GpOp::Mul: return *a * *b;
        default:
          if (std::abs(*b) < 1e-12) return std::nullopt;
          return *a / *b;
      }
    }
    case GpOp::Neg:
    case GpOp::Abs:
    case GpOp::Log1pAbs: {
      const auto a = eval_cell(tree, root - 1, p, t, s);
      if (!a) return std::nullopt;
      if (n.op == GpOp::Neg) return -*a;
      if (n.op == GpOp::Abs) return std::abs(*a);
      return std::log1p(std::abs(*a));
    }
    case GpOp::TsDelta: {
      const std::size_t w = static_cast<std::size_t>(n.window);
      if (t < w) return std::nullopt;
      const auto now = eval_cell(tree, root - 1, p, t, s);
      const auto then = eval_cell(tree, root - 1, p, t - w, s);
      if (!now || !then) return std::nullopt;
      return *now - *then;
    }
    default: {  // TsMean, TsStd, TsRank over the trailing window
      const std::size_t w = static_cast<std::size_t>(n.window);
      if (t + 1 < w) return std::nullopt;
      std::vector<double> win;
      for (std::size_t j = 0; j < w; ++j) {
        const auto v = eval_cell(tree, root - 1, p, t - j, s);
        if (!v) return std::nullopt;
        win.push_back(*v);
      }
      if (n.op == GpOp::TsMean || n.op == GpOp::TsStd) {
        double sum = 0.0, sum2 = 0.0;
        for (double v : win) {
          sum += v;
          sum2 += v * v;
        }
        const double mean = sum / static_cast<double>(w);
        if (n.op == GpOp::TsMean) return mean;
        const double var = sum2 / static_cast<double>(w) - mean * mean;
        return std::sqrt(var > 0.0 ? var : 0.0);
      }
      const double cur = win[0];
      double less = 0.0, equal = 0.0;
      for (double v : win) {
        if (v < cur) less += 1.0;
        else if (v == cur) equal += 1.0;
      }
      return (less + 0.5 * (equal - 1.0)) / static_cast<double>(w - 1);
    }
  }
}

void expect_matches_oracle(const std::string& text, const PricePanel& p) {
  const ExprTree tree = forge::parse_tree(text);
  const FactorMatrix f = forge::eval_tree(tree, p);
  for (std::size_t t = 0; t < p.days(); ++t)
    for (std::size_t s = 0; s < p.n_symbols(); ++s) {
      const auto want = eval_cell(tree, tree.nodes.size() - 1, p, t, s);
      if (want) {
        ASSERT_TRUE(f.present(t, s)) << text << " at (" << t << "," << s << ")";
        const double tol = 1e-9 * std::max(1.0, std::abs(*want));
        EXPECT_NEAR(f.at(t, s), *want, tol) << text << " at (" << t << "," << s << ")";
      } else {
        EXPECT_FALSE(f.present(t, s)) << text << " at (" << t << "," << s << ")";
      }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Structure helpers

TEST(TreeStructure, SubtreeStartHandCases) {
  // Postfix for (add close (mul open 2)): close open 2 mul add.
  const ExprTree t = forge::parse_tree("(add close (mul open 2))");
  ASSERT_EQ(t.nodes.size(), 5u);
  EXPECT_EQ(forge::subtree_start(t, 4), 0u);  // whole tree
  EXPECT_EQ(forge::subtree_start(t, 3), 1u);  // the mul subtree
  EXPECT_EQ(forge::subtree_start(t, 2), 2u);  // const leaf
  EXPECT_EQ(forge::subtree_start(t, 1), 1u);
  EXPECT_EQ(forge::subtree_start(t, 0), 0u);
  EXPECT_THROW(forge::subtree_start(t, 5), forge::Error);

  ExprTree bad;
  GpNode n;
  n.op = GpOp::Add;
  bad.nodes.push_back(n);  // binary op with no children
  EXPECT_THROW(forge::subtree_start(bad, 0), forge::Error);
}

TEST(TreeStructure, DepthAndValidation) {
  EXPECT_EQ(forge::tree_depth(forge::parse_tree("close")), 1);
  EXPECT_EQ(forge::tree_depth(forge::parse_tree("(neg close)")), 2);
  EXPECT_EQ(forge::tree_depth(forge::parse_tree("(add close (mul open 2))")), 3);

  ExprTree malformed;
  GpNode a;
  a.op = GpOp::Series;
  malformed.nodes.assign(2, a);  // two roots on the stack
  EXPECT_THROW(forge::tree_depth(malformed), forge::Error);

  EXPECT_NO_THROW(forge::validate_tree(forge::parse_tree("(ts_mean 3 close)"), 6));
  EXPECT_THROW(forge::validate_tree(ExprTree{}, 6), forge::Error);
  EXPECT_THROW(forge::validate_tree(forge::parse_tree("(neg (neg (neg close)))"), 3),
               forge::Error);  // depth 4 > 3
  EXPECT_THROW(forge::validate_tree(forge::parse_tree("(add 1 2)"), 6),
               forge::Error);  // no market-data leaf

  ExprTree bad_window = forge::parse_tree("(ts_mean 3 close)");
  bad_window.nodes[1].window = 0;
  EXPECT_THROW(forge::validate_tree(bad_window, 6), forge::Error);
  ExprTree rank1 = forge::parse_tree("(ts_rank 2 close)");
  rank1.nodes[1].window = 1;
  EXPECT_THROW(forge::validate_tree(rank1, 6), forge::Error);
  ExprTree bad_series = forge::parse_tree("close");
  bad_series.nodes[0].series = 7;
  EXPECT_THROW(forge::validate_tree(bad_series, 6), forge::Error);
}

// ---------------------------------------------------------------------------
// Plane evaluation vs the cell-recursive oracle

TEST(EvalTree, MatchesRecursiveOracleOnExpressionBattery) {
  const std::vector<std::string> exprs{
      "close",
      "volume",
      "(lag 2 close)",
      "(add close open)",
      "(sub high low)",
      "(mul (sub high low) 0.5)",
      "(div close (lag 1 close))",
      "(neg (abs (sub close open)))",
      "(log1p_abs (ts_delta 3 close))",
      "(ts_mean 4 close)",
      "(ts_std 4 close)",
      "(ts_rank 5 close)",
      "(ts_mean 2 (ts_std 3 (lag 1 volume)))",
      "(div (sub close (ts_mean 5 close)) (ts_std 5 close))",
  };
  for (unsigned seed : {3u, 4u}) {
    const PricePanel clean = testutil::make_panel(seed, 40, 6);
    const PricePanel holey = testutil::make_panel(seed + 10, 40, 6, 0.15);
    for (const auto& e : exprs) {
      expect_matches_oracle(e, clean);
      expect_matches_oracle(e, holey);
    }
  }
}

TEST(EvalTree, ProtectedDivisionMasksNearZeroDenominators) {
  const PricePanel p = testutil::make_panel(5, 20, 4);
  const FactorMatrix f = forge::eval_tree(forge::parse_tree("(div close (sub close close))"), p);
  for (std::size_t i = 0; i < f.mask.size(); ++i) EXPECT_EQ(f.mask[i], 0);
  // The same shape with a live denominator is fully present on observed cells.
  const FactorMatrix g = forge::eval_tree(forge::parse_tree("(div close high)"), p);
  for (std::size_t i = 0; i < g.mask.size(); ++i) EXPECT_EQ(g.mask[i], p.mask[i]);
}

TEST(EvalTree, TsRankHandValues) {
  PricePanel p = testutil::make_panel(6, 10, 3);
  const std::size_t S = p.n_symbols();
  // Symbol 0: strictly rising closes; symbol 1: strictly falling; symbol 2: flat.
  for (std::size_t t = 0; t < p.days(); ++t) {
    p.close[t * S + 0] = 10.0 + static_cast<double>(t);
    p.close[t * S + 1] = 50.0 - static_cast<double>(t);
    p.close[t * S + 2] = 7.0;
  }
  const FactorMatrix f = forge::eval_tree(forge::parse_tree("(ts_rank 4 close)"), p);
  for (std::size_t t = 3; t < p.days(); ++t) {
    EXPECT_DOUBLE_EQ(f.at(t, 0), 1.0);  // today is the window max
    EXPECT_DOUBLE_EQ(f.at(t, 1), 0.0);  // today is the window min
    EXPECT_DOUBLE_EQ(f.at(t, 2), 0.5);  // all ties: mid rank
  }
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t s = 0; s < S; ++s) EXPECT_FALSE(f.present(t, s));
}

TEST(EvalTree, MalformedPostfixThrows) {
  const PricePanel p = testutil::make_panel(7, 12, 3);
  ExprTree bad;
  GpNode n;
  n.op = GpOp::Mul;
  bad.nodes.push_back(n);
  EXPECT_THROW(forge::eval_tree(bad, p), forge::Error);
}

// ---------------------------------------------------------------------------
// Canonical text round trip

TEST(TreeText, FormatParseRoundTripIsExact) {
  const std::vector<std::string> exprs{
      "close",
      "(lag 3 volume)",
      "(add close open)",
      "(sub (mul high 2) (div low close))",
      "(ts_rank 7 (log1p_abs (ts_delta 2 close)))",
      "0.25",  // parses, though validation would reject a pure constant
  };
  for (const auto& e : exprs) {
    const ExprTree t = forge::parse_tree(e);
    EXPECT_EQ(forge::format_tree(t), e);
  }

  Rng rng(31);
  for (int i = 0; i < 60; ++i) {
    const ExprTree t = forge::detail::random_tree(rng, 6);
    const std::string text = forge::format_tree(t);
    const ExprTree back = forge::parse_tree(text);
    EXPECT_EQ(forge::format_tree(back), text);
    ASSERT_EQ(back.nodes.size(), t.nodes.size());
    for (std::size_t k = 0; k < t.nodes.size(); ++k) {
      EXPECT_EQ(back.nodes[k].op, t.nodes[k].op);
      EXPECT_EQ(back.nodes[k].series, t.nodes[k].series);
      EXPECT_EQ(back.nodes[k].lag, t.nodes[k].lag);
      EXPECT_EQ(back.nodes[k].window, t.nodes[k].window);
      EXPECT_EQ(back.nodes[k].value, t.nodes[k].value);  // hexfloat-exact constants
    }
  }
}

TEST(TreeText, ParserRejectsBrokenInput) {
  EXPECT_THROW(forge::parse_tree(""), forge::Error);
  EXPECT_THROW(forge::parse_tree("(foo close)"), forge::Error);
  EXPECT_THROW(forge::parse_tree("close extra"), forge::Error);
  EXPECT_THROW(forge::parse_tree("(add close"), forge::Error);
  EXPECT_THROW(forge::parse_tree("(add close)"), forge::Error);
  EXPECT_THROW(forge::parse_tree("(lag 1 nonsuch)"), forge::Error);
  EXPECT_ANY_THROW(forge::parse_tree("(ts_mean close)"));  // window is not a number
}

// ---------------------------------------------------------------------------
// Variation operators

TEST(Variation, MutateAndCrossoverAlwaysYieldValidTrees) {
  Rng rng(41);
  std::vector<ExprTree> pool;
  for (int i = 0; i < 20; ++i) pool.push_back(forge::detail::random_tree(rng, 6));
  for (const auto& t : pool) ASSERT_NO_THROW(forge::validate_tree(t, 6));

  for (int i = 0; i < 200; ++i) {
    const ExprTree& parent = pool[rng.index(pool.size())];
    const ExprTree child = forge::mutate(parent, rng, 6);
    EXPECT_NO_THROW(forge::validate_tree(child, 6)) << forge::format_tree(child);
  }
  for (int i = 0; i < 100; ++i) {
    const ExprTree& a = pool[rng.index(pool.size())];
    const ExprTree& b = pool[rng.index(pool.size())];
    const auto [ca, cb] = forge::crossover(a, b, rng, 6);
    EXPECT_NO_THROW(forge::validate_tree(ca, 6)) << forge::format_tree(ca);
    EXPECT_NO_THROW(forge::validate_tree(cb, 6)) << forge::format_tree(cb);
  }
}

TEST(Variation, DeterministicUnderTheSeed) {
  const ExprTree base = forge::parse_tree("(add (ts_mean 3 close) (mul open 0.5))");
  Rng r1(55), r2(55);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(forge::format_tree(forge::mutate(base, r1, 6)),
              forge::format_tree(forge::mutate(base, r2, 6)));
}

// ---------------------------------------------------------------------------
// Fitness

TEST(Fitness, MatchesAManualForwardReturnLoop) {
  const PricePanel p = testutil::make_panel(61, 60, 8, 0.1);
  const ExprTree tree = forge::parse_tree("(ts_delta 2 close)");
  const std::size_t lo = 10, hi = 50, horizon = 5, min_symbols = 3;
  double fit = 0.0;
  ASSERT_TRUE(forge::tree_fitness(tree, p, lo, hi, horizon, min_symbols, &fit));

  const FactorMatrix f = forge::eval_tree(tree, p);
  double sum = 0.0;
  std::size_t days = 0;
  for (std::size_t t = lo; t < hi; ++t) {
    if (t + horizon >= p.days()) break;
    const auto ret = forge::forward_return(p, t, horizon);
    std::vector<double> xs, ys;
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
      if (f.present(t, s) && ret.mask[s]) {
        xs.push_back(f.at(t, s));
        ys.push_back(ret.values[s]);
      }
    if (xs.size() < min_symbols || xs.size() < 3) continue;
    bool degen = false;
    const double rho = forge::exact_spearman(xs, ys, &degen);
    if (degen) continue;
    sum += rho;
    ++days;
  }
  ASSERT_GT(days, 0u);
  EXPECT_NEAR(fit, sum / static_cast<double>(days), 1e-15);
}

TEST(Fitness, UnscorableTreesReportFalse) {
  const PricePanel p = testutil::make_panel(62, 30, 5);
  double fit = 0.0;
  // Constant factor: every cross-section degenerates.
  EXPECT_FALSE(forge::tree_fitness(forge::parse_tree("(div close close)"), p, 5, 25, 5, 3, &fit));
  // Day range entirely beyond the horizon cutoff.
  EXPECT_FALSE(forge::tree_fitness(forge::parse_tree("close"), p, 29, 30, 5, 3, &fit));
}

// ---------------------------------------------------------------------------
// Evolution loop

TEST(Evolve, ElitismKeepsBestFitnessNonDecreasing) {
  const PricePanel p = testutil::make_panel(71, 60, 10, 0.05);
  forge::GpOptions opt;
  opt.population = 30;
  opt.generations = 8;
  opt.horizon = 3;
  const forge::GpRun run = forge::evolve(p, 8, 50, opt, 99, 5);
  ASSERT_EQ(run.best_per_generation.size(), opt.generations + 1);
  for (std::size_t g = 1; g < run.best_per_generation.size(); ++g)
    EXPECT_GE(run.best_per_generation[g], run.best_per_generation[g - 1]) << "generation " << g;

  ASSERT_FALSE(run.best.empty());
  EXPECT_LE(run.best.size(), 5u);
  EXPECT_EQ(run.best_fitness.size(), run.best.size());
  EXPECT_DOUBLE_EQ(run.best_fitness.front(), run.best_per_generation.back());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < run.best.size(); ++i) {
    EXPECT_TRUE(seen.insert(forge::format_tree(run.best[i])).second) << "duplicate best tree";
    if (i > 0) {
      EXPECT_LE(run.best_fitness[i], run.best_fitness[i - 1]);
    }
    EXPECT_NO_THROW(forge::validate_tree(run.best[i], opt.max_depth));
  }
}

TEST(Evolve, DeterministicUnderTheSeed) {
  const PricePanel p = testutil::make_panel(72, 50, 8);
  forge::GpOptions opt;
  opt.population = 20;
  opt.generations = 4;
  opt.horizon = 3;
  const forge::GpRun a = forge::evolve(p, 6, 40, opt, 7, 3);
  const forge::GpRun b = forge::evolve(p, 6, 40, opt, 7, 3);
  ASSERT_EQ(a.best.size(), b.best.size());
  for (std::size_t i = 0; i < a.best.size(); ++i) {
    EXPECT_EQ(forge::format_tree(a.best[i]), forge::format_tree(b.best[i]));
    EXPECT_EQ(a.best_fitness[i], b.best_fitness[i]);
  }
  EXPECT_EQ(a.best_per_generation, b.best_per_generation);
}

TEST(Evolve, InputValidation) {
  const PricePanel p = testutil::make_panel(73, 40, 5);
  forge::GpOptions opt;
  opt.population = 2;
  opt.elitism = 2;  // no room for offspring
  EXPECT_THROW(forge::evolve(p, 5, 30, opt, 1), forge::Error);
  opt.population = 20;
  opt.elitism = 2;
  opt.max_depth = 1;
  EXPECT_THROW(forge::evolve(p, 5, 30, opt, 1), forge::Error);
  opt.max_depth = 6;
  EXPECT_THROW(forge::evolve(p, 30, 30, opt, 1), forge::Error);
}
