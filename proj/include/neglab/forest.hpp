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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "neglab/core.hpp"
#include "neglab/parallel.hpp"

namespace neglab {

/// Categorical data: n rows of n_features small non-negative integers.
struct CategoricalData {
  int n_features = 0;
  int n_classes = 0;
  std::vector<int> x;  // row-major
  std::vector<int> y;

  std::size_t rows() const { return y.size(); }
  int at(std::size_t row, int f) const { return x[row * static_cast<std::size_t>(n_features) + static_cast<std::size_t>(f)]; }
  const int* row(std::size_t r) const { return x.data() + r * static_cast<std::size_t>(n_features); }

  void validate() const {
    if (n_features <= 0 || n_classes <= 0) throw InputError("forest: empty feature or class space");
    if (x.size() != y.size() * static_cast<std::size_t>(n_features)) throw InputError("forest: ragged feature matrix");
    for (int c : y)
      if (c < 0 || c >= n_classes) throw InputError("forest: label out of range");
  }
};

struct ForestOptions {
  int n_trees = 100;
  int max_depth = 0;          // 0: unlimited
  int min_samples_split = 2;
  bool bootstrap = true;
  int max_features = 0;       // 0: ceil(sqrt(n_features))
  std::uint64_t seed = 0;

  int features_per_node(int n_features) const {
    if (max_features > 0) return std::min(max_features, n_features);
    return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_features)))));
  }
};

/// Internal nodes test feature == value; matching rows go to `match`.
struct TreeNode {
  int feature = -1;
  int value = 0;
  int match = -1;
  int other = -1;
  std::vector<double> counts;  // class counts of training rows reaching a leaf

  bool leaf() const { return feature < 0; }
};

inline int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  return best;
}

struct DecisionTree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(const int* x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[n.feature] == n.value ? n.match : n.other;
    }
    return nodes[static_cast<std::size_t>(i)];
  }
  int predict(const int* x) const { return argmax_lowest(leaf_for(x).counts); }
  int depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (!nodes[i].leaf()) {
        d[static_cast<std::size_t>(nodes[i].match)] = d[static_cast<std::size_t>(nodes[i].other)] = d[i] + 1;
        best = std::max(best, d[i] + 1);
      }
    return best;
  }
};

inline double gini(const std::vector<double>& counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 1.0;
  for (double c : counts) s -= (c / total) * (c / total);
  return s;
}

struct SplitChoice {
  int feature = -1;
  int value = 0;
  double impurity = 0.0;  // weighted child impurity
};

/// Best equality split over `features` (visited ascending) for the weighted
/// rows; ties keep the first (feature, value). feature = -1 if no feature
/// separates the rows.
inline SplitChoice best_split(const CategoricalData& d, const std::vector<std::size_t>& rows,
                              const std::vector<double>& weight, std::vector<int> features) {
  std::sort(features.begin(), features.end());
  SplitChoice best;
  double total = 0.0;
  std::vector<double> all(static_cast<std::size_t>(d.n_classes), 0.0);
  for (std::size_t r : rows) {
    all[static_cast<std::size_t>(d.y[r])] += weight[r];
    total += weight[r];
  }
  std::vector<std::vector<double>> by_value;
  for (int f : features) {
    by_value.clear();
    for (std::size_t r : rows) {
      const auto v = static_cast<std::size_t>(d.at(r, f));
      if (v >= by_value.size()) by_value.resize(v + 1, std::vector<double>(static_cast<std::size_t>(d.n_classes), 0.0));
      by_value[v][static_cast<std::size_t>(d.y[r])] += weight[r];
    }
    for (std::size_t v = 0; v < by_value.size(); ++v) {
      const double nl = std::accumulate(by_value[v].begin(), by_value[v].end(), 0.0);
      if (nl <= 0.0 || nl >= total) continue;
      std::vector<double> rest(all);
      for (std::size_t c = 0; c < rest.size(); ++c) rest[c] -= by_value[v][c];
      const double nr = total - nl;
      const double imp = (nl * gini(by_value[v], nl) + nr * gini(rest, nr)) / total;
      if (best.feature < 0 || imp < best.impurity - 1e-12) best = {f, static_cast<int>(v), imp};
    }
  }
  return best;
}

inline bool feature_constant(const CategoricalData& d, const std::vector<std::size_t>& rows, int f) {
  for (std::size_t r : rows)
    if (d.at(r, f) != d.at(rows.front(), f)) return false;
  return true;
}

/// Grows one tree on the weighted rows (weight = bootstrap multiplicity).
inline DecisionTree grow_tree(const CategoricalData& d, const std::vector<double>& weight, const ForestOptions& opt,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int k = opt.features_per_node(d.n_features);
  DecisionTree tree;
  struct Pending {
    int node;
    int depth;
    std::vector<std::size_t> rows;
  };
  std::vector<std::size_t> root;
  for (std::size_t r = 0; r < d.rows(); ++r)
    if (weight[r] > 0.0) root.push_back(r);
  tree.nodes.emplace_back();
  std::vector<Pending> stack{{0, 0, std::move(root)}};
  std::vector<int> perm(static_cast<std::size_t>(d.n_features));
  while (!stack.empty()) {
    Pending p = std::move(stack.back());
    stack.pop_back();
    std::vector<double> counts(static_cast<std::size_t>(d.n_classes), 0.0);
    double n = 0.0;
    for (std::size_t r : p.rows) {
      counts[static_cast<std::size_t>(d.y[r])] += weight[r];
      n += weight[r];
    }
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }) <= 1;
    const bool depth_ok = opt.max_depth <= 0 || p.depth < opt.max_depth;
    SplitChoice split;
    if (!pure && depth_ok && n >= static_cast<double>(opt.min_samples_split)) {
      // draw features until k non-constant ones are found (or all are used)
      std::iota(perm.begin(), perm.end(), 0);
      std::vector<int> chosen;
      for (int i = 0; i < d.n_features && static_cast<int>(chosen.size()) < k; ++i) {
        std::uniform_int_distribution<int> pick(i, d.n_features - 1);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
        const int f = perm[static_cast<std::size_t>(i)];
        if (!feature_constant(d, p.rows, f)) chosen.push_back(f);
      }
      if (!chosen.empty()) split = best_split(d, p.rows, weight, chosen);
    }
    if (split.feature < 0) {
      tree.nodes[static_cast<std::size_t>(p.node)].counts = std::move(counts);
      continue;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t r : p.rows) (d.at(r, split.feature) == split.value ? left : right).push_back(r);
    const int li = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& node = tree.nodes[static_cast<std::size_t>(p.node)];
    node.feature = split.feature;
    node.value = split.value;
    node.match = li;
    node.other = li + 1;
    // push `other` first so `match` is expanded next (stable node numbering)
    stack.push_back({li + 1, p.depth + 1, std::move(right)});
    stack.push_back({li, p.depth + 1, std::move(left)});
  }
  return tree;
}

struct RandomForest {
  ForestOptions options;
  int n_features = 0;
  int n_classes = 0;
  std::vector<DecisionTree> trees;

  /// Plurality of tree votes; ties go to the lowest class.
  int predict(const int* x) const {
    std::vector<double> votes(static_cast<std::size_t>(n_classes), 0.0);
    for (const auto& t : trees) votes[static_cast<std::size_t>(t.predict(x))] += 1.0;
    return argmax_lowest(votes);
  }

  /// Distinct features tested by any split.
  std::set<int> features_used() const {
    std::set<int> s;
    for (const auto& t : trees)
      for (const auto& n : t.nodes)
        if (!n.leaf()) s.insert(n.feature);
    return s;
  }

  friend bool operator==(const RandomForest& a, const RandomForest& b) {
    if (a.n_features != b.n_features || a.n_classes != b.n_classes || a.trees.size() != b.trees.size()) return false;
    for (std::size_t t = 0; t < a.trees.size(); ++t) {
      const auto& x = a.trees[t].nodes;
      const auto& y = b.trees[t].nodes;
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i].feature != y[i].feature || x[i].value != y[i].value || x[i].match != y[i].match ||
            x[i].other != y[i].other || x[i].counts != y[i].counts)
          return false;
    }
    return true;
  }
};

/// Tree t uses seed mix(options.seed, t) for its bootstrap draw and feature
/// sampling, so the forest does not depend on `jobs`.
inline RandomForest train_forest(const CategoricalData& d, const ForestOptions& opt, int jobs = 1) {
  d.validate();
  if (opt.n_trees <= 0) throw InputError("forest: n_trees must be positive");
  if (d.rows() == 0) throw InputError("forest: no training rows");
  if (opt.min_samples_split < 2) throw InputError("forest: min_samples_split must be >= 2");
  RandomForest f;
  f.options = opt;
  f.n_features = d.n_features;
  f.n_classes = d.n_classes;
  f.trees.resize(static_cast<std::size_t>(opt.n_trees));
  parallel_for(f.trees.size(), jobs, [&](std::size_t t) {
    const std::uint64_t seed = mix_seed(opt.seed, t);
    std::vector<double> w(d.rows(), opt.bootstrap ? 0.0 : 1.0);
    if (opt.bootstrap) {
      std::mt19937_64 rng(mix_seed(seed, 0xb007ULL));
      std::uniform_int_distribution<std::size_t> pick(0, d.rows() - 1);
      for (std::size_t i = 0; i < d.rows(); ++i) w[pick(rng)] += 1.0;
    }
    f.trees[t] = grow_tree(d, w, opt, seed);
  });
  return f;
}

// JSON Lines: header, then one record per node in tree order.
//   {"tree":t,"node":i,"feature":f,"value":v,"match":a,"other":b}
//   {"tree":t,"node":i,"counts":[...]}

inline void write_forest(const RandomForest& f, std::ostream& os, const nlohmann::json& extra = {}) {
  nlohmann::json h{{"format", "neglab-probe"}, {"version", 1}, {"kind", "tree"},
                   {"n_features", f.n_features}, {"n_classes", f.n_classes},
                   {"n_trees", f.options.n_trees}, {"max_depth", f.options.max_depth},
                   {"min_samples_split", f.options.min_samples_split}, {"bootstrap", f.options.bootstrap},
                   {"max_features", f.options.max_features}, {"seed", f.options.seed}};
  for (const auto& [k, v] : extra.items()) h[k] = v;
  os << h.dump() << "\n";
  for (std::size_t t = 0; t < f.trees.size(); ++t)
    for (std::size_t i = 0; i < f.trees[t].nodes.size(); ++i) {
      const auto& n = f.trees[t].nodes[i];
      nlohmann::json j{{"tree", t}, {"node", i}};
      if (n.leaf()) j["counts"] = n.counts;
      else {
        j["feature"] = n.feature;
        j["value"] = n.value;
        j["match"] = n.match;
        j["other"] = n.other;
      }
      os << j.dump() << "\n";
    }
}

inline RandomForest read_forest(std::istream& is, nlohmann::json* header_out = nullptr) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("forest file is empty");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError("forest header is not JSON");
  }
  if (h.value("format", "") != "neglab-probe" || h.value("kind", "") != "tree")
    throw FormatError("not a forest probe file");
  RandomForest f;
  try {
    f.n_features = h.at("n_features").get<int>();
    f.n_classes = h.at("n_classes").get<int>();
    f.options.n_trees = h.at("n_trees").get<int>();
    f.options.max_depth = h.at("max_depth").get<int>();
    f.options.min_samples_split = h.at("min_samples_split").get<int>();
    f.options.bootstrap = h.at("bootstrap").get<bool>();
    f.options.max_features = h.at("max_features").get<int>();
    f.options.seed = h.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("forest header: ") + e.what());
  }
  if (f.n_features <= 0 || f.n_classes <= 0 || f.options.n_trees <= 0) throw FormatError("forest header: bad sizes");
  f.trees.resize(static_cast<std::size_t>(f.options.n_trees));
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto t = j.at("tree").get<std::size_t>();
      const auto i = j.at("node").get<std::size_t>();
      if (t >= f.trees.size()) throw FormatError("tree index out of range");
      auto& nodes = f.trees[t].nodes;
      if (i != nodes.size()) throw FormatError("nodes out of order");
      TreeNode n;
      if (j.contains("counts")) n.counts = j.at("counts").get<std::vector<double>>();
      else {
        n.feature = j.at("feature").get<int>();
        n.value = j.at("value").get<int>();
        n.match = j.at("match").get<int>();
        n.other = j.at("other").get<int>();
      }
      nodes.push_back(std::move(n));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("forest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("forest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (const auto& t : f.trees) {
    if (t.nodes.empty()) throw FormatError("forest: tree without nodes");
    for (const auto& n : t.nodes)
      if (!n.leaf() && (n.match <= 0 || n.other <= 0 || static_cast<std::size_t>(std::max(n.match, n.other)) >= t.nodes.size()))
        throw FormatError("forest: child index out of range");
  }
  if (header_out) *header_out = h;
  return f;
}

}  // namespace neglab
