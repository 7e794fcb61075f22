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

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "neglab/forest.hpp"
#include "stump_oracle.hpp"

namespace neglab {
namespace {

CategoricalData separable(int rows, int n_features, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> v(0, 2);
  CategoricalData d;
  d.n_features = n_features;
  d.n_classes = 3;
  for (int r = 0; r < rows; ++r) {
    for (int f = 0; f < n_features; ++f) d.x.push_back(v(rng));
    d.y.push_back(d.x[static_cast<std::size_t>(r * n_features + n_features / 2)]);
  }
  return d;
}

double train_accuracy(const RandomForest& f, const CategoricalData& d) {
  int right = 0;
  for (std::size_t r = 0; r < d.rows(); ++r) right += f.predict(d.row(r)) == d.y[r];
  return static_cast<double>(right) / static_cast<double>(d.rows());
}

TEST(Gini, KnownValues) {
  EXPECT_DOUBLE_EQ(gini({5.0, 5.0}, 10.0), 0.5);
  EXPECT_DOUBLE_EQ(gini({10.0, 0.0}, 10.0), 0.0);
  EXPECT_NEAR(gini({1.0, 1.0, 1.0}, 3.0), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(gini({}, 0.0), 0.0);
}

TEST(Forest, StumpMatchesExhaustiveOracle) {
  EXPECT_EQ(testing::stump_oracle_mismatches(200, 20261016), 0);
}

TEST(Forest, StumpOracleTieRule) {
  // features 0 and 1 are identical: the split must use feature 0
  CategoricalData d{2, 2, {0, 0, 0, 0, 1, 1, 1, 1}, {0, 0, 1, 1}};
  ForestOptions opt{1, 1, 2, false, 2, 0};
  const auto f = train_forest(d, opt);
  EXPECT_EQ(f.trees[0].nodes[0].feature, 0);
  EXPECT_EQ(f.trees[0].nodes[0].value, 0);
  EXPECT_EQ(testing::best_stump(d).feature, 0);
}

TEST(Forest, SeparableSingleFeatureSingleTree) {
  const auto d = separable(60, 1, 3);
  ForestOptions opt;
  opt.n_trees = 1;
  opt.bootstrap = false;
  EXPECT_DOUBLE_EQ(train_accuracy(train_forest(d, opt), d), 1.0);
}

TEST(Forest, SeparableAmongNoiseFeatures) {
  const auto d = separable(200, 9, 4);
  ForestOptions opt;
  opt.n_trees = 25;
  opt.seed = 7;
  EXPECT_DOUBLE_EQ(train_accuracy(train_forest(d, opt), d), 1.0);
}

TEST(Forest, PureRootIsALeaf) {
  CategoricalData d{2, 2, {0, 1, 1, 0, 1, 1}, {1, 1, 1}};
  const auto f = train_forest(d, {3, 0, 2, true, 0, 1});
  for (const auto& t : f.trees) {
    ASSERT_EQ(t.nodes.size(), 1u);
    EXPECT_EQ(t.predict(d.row(0)), 1);
  }
}

TEST(Forest, DepthLimitRespected) {
  const auto d = separable(200, 6, 5);
  for (int depth : {1, 2, 3}) {
    ForestOptions opt;
    opt.n_trees = 10;
    opt.max_depth = depth;
    for (const auto& t : train_forest(d, opt).trees) EXPECT_LE(t.depth(), depth);
  }
}

TEST(Forest, LeavesCarryClassCounts) {
  const auto d = separable(120, 4, 6);
  ForestOptions opt;
  opt.n_trees = 4;
  const auto f = train_forest(d, opt);
  for (const auto& t : f.trees) {
    double total = 0.0;
    for (const auto& n : t.nodes)
      if (n.leaf()) {
        ASSERT_EQ(n.counts.size(), 3u);
        for (double c : n.counts) total += c;
      }
    EXPECT_DOUBLE_EQ(total, 120.0);  // bootstrap multiplicities sum to n
  }
}

TEST(Forest, DeterministicAndIndependentOfJobs) {
  const auto d = separable(150, 8, 8);
  ForestOptions opt;
  opt.n_trees = 12;
  opt.seed = 99;
  const auto a = train_forest(d, opt, 1);
  EXPECT_TRUE(a == train_forest(d, opt, 1));
  EXPECT_TRUE(a == train_forest(d, opt, 4));
  opt.seed = 100;
  EXPECT_FALSE(a == train_forest(d, opt, 1));
}

TEST(Forest, VoteTiesGoToLowestClass) {
  RandomForest f;
  f.n_features = 1;
  f.n_classes = 3;
  DecisionTree a, b;
  a.nodes.push_back({-1, 0, -1, -1, {0.0, 0.0, 5.0}});
  b.nodes.push_back({-1, 0, -1, -1, {0.0, 4.0, 4.0}});
  f.trees = {a, b};
  const int x = 0;
  EXPECT_EQ(f.predict(&x), 1);  // votes: class 2 and class 1 (leaf tie -> 1)
}

TEST(Forest, Errors) {
  const auto d = separable(10, 2, 1);
  ForestOptions opt;
  opt.n_trees = 0;
  EXPECT_THROW(train_forest(d, opt), InputError);
  CategoricalData bad{2, 2, {0, 1, 1}, {0, 1}};
  EXPECT_THROW(train_forest(bad, {}), InputError);
  CategoricalData label{1, 2, {0, 1}, {0, 2}};
  EXPECT_THROW(train_forest(label, {}), InputError);
}

TEST(Forest, JsonlRoundTrip) {
  const auto d = separable(80, 5, 2);
  ForestOptions opt;
  opt.n_trees = 6;
  opt.seed = 3;
  const auto f = train_forest(d, opt);
  std::stringstream ss;
  write_forest(f, ss, {{"task", "demo"}});
  nlohmann::json header;
  const auto g = read_forest(ss, &header);
  EXPECT_TRUE(f == g);
  EXPECT_EQ(header["task"], "demo");
  EXPECT_EQ(g.options.seed, 3u);
}

TEST(Forest, ReadRejectsMalformed) {
  std::stringstream empty;
  EXPECT_THROW(read_forest(empty), FormatError);
  std::stringstream wrong(R"({"format":"other"})");
  EXPECT_THROW(read_forest(wrong), FormatError);
  std::stringstream child(
      R"({"format":"neglab-probe","kind":"tree","n_features":1,"n_classes":2,"n_trees":1,"max_depth":0,)"
      R"("min_samples_split":2,"bootstrap":true,"max_features":0,"seed":0})"
      "\n"
      R"({"tree":0,"node":0,"feature":0,"value":0,"match":5,"other":6})");
  EXPECT_THROW(read_forest(child), FormatError);
}

}  // namespace
}  // namespace neglab
