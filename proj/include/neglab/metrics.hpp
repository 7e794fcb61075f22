/*
 * Copyright 2026 The neglab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "neglab/csv.hpp"
#include "neglab/parallel.hpp"
#include "neglab/probes.hpp"
#include "neglab/stats.hpp"

namespace neglab {

// ---------------------------------------------------------------------------
// Robustness across contexts
// ---------------------------------------------------------------------------

inline std::string to_string(const RenderContext& c) {
  return "I" + std::to_string(c.instruction) + "-D" + (c.demo_set < 0 ? std::string("z") : std::to_string(c.demo_set)) +
         "-S" + std::to_string(c.style);
}

/// 3 instructions x 2 demonstration sets x 2 answer styles, instruction
/// varying slowest.
inline std::vector<RenderContext> default_contexts() {
  std::vector<RenderContext> out;
  for (int i = 0; i < vocab::kInstructionVariants; ++i)
    for (int d = 0; d < 2; ++d)
      for (int s = 0; s < vocab::kStyles; ++s) out.push_back({i, d, s});
  return out;
}

/// max(acc_xy - alpha, 0) / max(acc_yy - alpha, 0); empty when the
/// denominator is 0.
inline std::optional<double> robustness_value(double acc_xy, double acc_yy, double alpha) {
  const double den = std::max(acc_yy - alpha, 0.0);
  if (den <= 0.0) return std::nullopt;
  return std::max(acc_xy - alpha, 0.0) / den;
}

struct RobustnessCell {
  int train_context = 0;
  int eval_context = 0;
  double acc = 0.0;      // probe from train_context on eval_context's test split
  double value = 0.0;    // 0 when undefined
  bool defined = false;
};

struct RobustnessResult {
  std::vector<RenderContext> contexts;
  double alpha = 0.0;
  int n_neurons = 0;
  std::vector<RobustnessCell> cells;  // row-major, train context = row

  const RobustnessCell& at(int x, int y) const {
    return cells[static_cast<std::size_t>(x) * contexts.size() + static_cast<std::size_t>(y)];
  }
};

struct RobustnessOptions {
  ProbeKind family = ProbeKind::magn;
  int n_neurons = 32;
  int max_train = 0;  // 0: whole train split
  int jobs = 1;
};

/// Robustness from precomputed per-context (train, test) features.
inline RobustnessResult robustness_from_features(const std::vector<RenderContext>& contexts,
                                                 const std::vector<FeatureTable>& train,
                                                 const std::vector<FeatureTable>& test, ProbeKind family,
                                                 int n_neurons) {
  if (contexts.size() < 2) throw InputError("robustness: need at least 2 contexts");
  if (train.size() != contexts.size() || test.size() != contexts.size())
    throw InputError("robustness: one train and one test table per context");
  RobustnessResult r;
  r.contexts = contexts;
  r.alpha = rand_accuracy(test.front().n_candidates);
  r.n_neurons = std::min(n_neurons, train.front().n_neurons());
  if (r.n_neurons < 1) throw InputError("robustness: n_neurons must be positive");
  const std::size_t K = contexts.size();
  std::vector<VoteProbe> probes;
  for (const auto& t : train) {
    probes.push_back(train_probe(family, t));
    probes.back().size = r.n_neurons;
  }
  std::vector<double> acc(K * K);
  for (std::size_t x = 0; x < K; ++x)
    for (std::size_t y = 0; y < K; ++y) acc[x * K + y] = probe_accuracy(probes[x], test[y]);
  for (std::size_t x = 0; x < K; ++x)
    for (std::size_t y = 0; y < K; ++y) {
      RobustnessCell c;
      c.train_context = static_cast<int>(x);
      c.eval_context = static_cast<int>(y);
      c.acc = acc[x * K + y];
      const auto v = robustness_value(c.acc, acc[y * K + y], r.alpha);
      c.defined = v.has_value();
      c.value = v.value_or(0.0);
      r.cells.push_back(c);
    }
  return r;
}

inline RobustnessResult robustness_matrix(const Params& params, const TaskSet& ts,
                                          const std::vector<RenderContext>& contexts,
                                          const RobustnessOptions& opt = {}) {
  if (contexts.size() < 2) throw InputError("robustness: need at least 2 contexts");
  std::vector<ChoiceTask> train_split = ts.train;
  if (opt.max_train > 0 && static_cast<int>(train_split.size()) > opt.max_train)
    train_split.resize(static_cast<std::size_t>(opt.max_train));
  std::vector<FeatureTable> train, test;
  for (const auto& ctx : contexts) {
    train.push_back(extract_features(params, ts, train_split, ctx, opt.jobs));
    test.push_back(extract_features(params, ts, ts.test, ctx, opt.jobs));
  }
  return robustness_from_features(contexts, train, test, opt.family, opt.n_neurons);
}

/// Which single axis separates two contexts (empty if none or several).
inline std::string context_axis(const RenderContext& a, const RenderContext& b) {
  const int diffs = (a.instruction != b.instruction) + (a.demo_set != b.demo_set) + (a.style != b.style);
  if (diffs != 1) return "";
  if (a.instruction != b.instruction) return "instruction";
  return a.demo_set != b.demo_set ? "demonstration" : "style";
}

/// Median defined value over off-diagonal cells that differ in `axis` only.
inline std::optional<double> axis_median(const RobustnessResult& r, const std::string& axis) {
  std::vector<double> v;
  for (const auto& c : r.cells)
    if (c.defined &&
        context_axis(r.contexts[static_cast<std::size_t>(c.train_context)],
                     r.contexts[static_cast<std::size_t>(c.eval_context)]) == axis)
      v.push_back(c.value);
  if (v.empty()) return std::nullopt;
  return stats::median(v);
}

/// Long format: row,col,value,flag (flag "undefined" for a zero denominator).
inline void write_robustness_csv(const std::string& path, const RobustnessResult& r) {
  csv::Writer w(path, {"row", "col", "value", "flag", "accuracy"});
  for (const auto& c : r.cells)
    w.row({to_string(r.contexts[static_cast<std::size_t>(c.train_context)]),
           to_string(r.contexts[static_cast<std::size_t>(c.eval_context)]), c.value,
           std::string(c.defined ? "" : "undefined"), c.acc});
}

// ---------------------------------------------------------------------------
// Substitutability
// ---------------------------------------------------------------------------

struct WindowAccuracy {
  int index = 0;
  int first_rank = 0;  // inclusive
  int last_rank = 0;   // exclusive
  double accuracy = 0.0;
};

struct SubstitutabilityResult {
  std::vector<WindowAccuracy> windows;
  double alpha = 0.0;
  double slope = 0.0;  // OLS slope of accuracy on window index (0 with one window)
};

/// Disjoint windows of `window` consecutive ranks cover the whole ranking in
/// order; the last one may be shorter. Each window votes as a Magn-style
/// probe of its own neurons.
inline SubstitutabilityResult substitutability_sweep(const VoteProbe& ranked, const FeatureTable& eval,
                                                     int window = 64) {
  const int total = static_cast<int>(ranked.ranking.size());
  if (window < 1) throw InputError("substitutability: window must be positive");
  if (window > total) throw InputError("substitutability: window exceeds the number of ranked neurons");
  SubstitutabilityResult r;
  r.alpha = rand_accuracy(eval.n_candidates);
  for (int start = 0, i = 0; start < total; start += window, ++i) {
    const int end = std::min(start + window, total);
    VoteProbe p = ranked;
    p.ranking.assign(ranked.ranking.begin() + start, ranked.ranking.begin() + end);
    p.size = end - start;
    r.windows.push_back({i, start, end, probe_accuracy(p, eval)});
  }
  if (r.windows.size() > 1) {
    std::vector<double> x, y;
    for (const auto& w : r.windows) {
      x.push_back(w.index);
      y.push_back(w.accuracy);
    }
    r.slope = stats::ols_slope(x, y);
  }
  return r;
}

inline void write_substitutability_csv(const std::string& path, const SubstitutabilityResult& r) {
  csv::Writer w(path, {"window", "first_rank", "last_rank", "accuracy"});
  for (const auto& x : r.windows)
    w.row({static_cast<long long>(x.index), static_cast<long long>(x.first_rank), static_cast<long long>(x.last_rank),
           x.accuracy});
}

// ---------------------------------------------------------------------------
// Tree hyperparameter surface
// ---------------------------------------------------------------------------

struct TreeCell {
  int trees_exp = 0;  // n_trees = 2^trees_exp
  int depth_exp = 0;  // max_depth = 2^depth_exp
  double accuracy = 0.0;
};

/// Every (N, M) with N, M >= 0 and N + M < cap, N ascending then M.
inline std::vector<std::pair<int, int>> tree_grid(int cap = 10) {
  std::vector<std::pair<int, int>> g;
  for (int n = 0; n < cap; ++n)
    for (int m = 0; n + m < cap; ++m) g.emplace_back(n, m);
  return g;
}

/// One forest per cell, all with `base` options except n_trees/max_depth.
/// Cells run in parallel; each forest is seeded by base.seed alone.
inline std::vector<TreeCell> tree_hyperparam_sweep(const FeatureTable& train, const FeatureTable& eval,
                                                   const std::vector<std::pair<int, int>>& grid,
                                                   const ForestOptions& base = {}, int jobs = 1) {
  const CategoricalData d = argmax_features(train);
  const CategoricalData e = argmax_features(eval);
  std::vector<TreeCell> cells(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t i) {
    const auto [n, m] = grid[i];
    if (n < 0 || m < 0 || n > 20 || m > 20) throw InputError("tree sweep: exponent out of range");
    ForestOptions opt = base;
    opt.n_trees = 1 << n;
    opt.max_depth = 1 << m;
    const RandomForest f = train_forest(d, opt);
    std::vector<int> pred(e.rows());
    for (std::size_t r = 0; r < e.rows(); ++r) pred[r] = f.predict(e.row(r));
    cells[i] = {n, m, accuracy(pred, e.y)};
  });
  return cells;
}

inline void write_tree_surface_csv(const std::string& path, const std::vector<TreeCell>& cells) {
  csv::Writer w(path, {"trees_exp", "depth_exp", "n_trees", "max_depth", "accuracy"});
  for (const auto& c : cells)
    w.row({static_cast<long long>(c.trees_exp), static_cast<long long>(c.depth_exp), static_cast<long long>(1LL << c.trees_exp),
           static_cast<long long>(1LL << c.depth_exp), c.accuracy});
}

}  // namespace neglab
