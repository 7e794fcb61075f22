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

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "neglab/estimators.hpp"
#include "neglab/intervene.hpp"
#include "test_util.hpp"

namespace neglab {
namespace {

using testing::random_params;
using testing::small_config;
using testing::trained_binary;

// ---- stats ------------------------------------------------------------------

TEST(Pearson, ExactLines) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  std::vector<double> up, down;
  for (double x : xs) {
    up.push_back(3 * x);
    down.push_back(-x + 5);
  }
  EXPECT_DOUBLE_EQ(stats::pearson(xs, up), 1.0);
  EXPECT_DOUBLE_EQ(stats::pearson(xs, down), -1.0);
}

TEST(Pearson, MatchesRawSumFormula) {
  const std::vector<double> xs{1, 2, 3, 4}, ys{1, 2, 3, 100};
  // raw-sum form in extended precision, independent of the centered form
  long double n = 4, sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxy += static_cast<long double>(xs[i]) * ys[i];
    sxx += static_cast<long double>(xs[i]) * xs[i];
    syy += static_cast<long double>(ys[i]) * ys[i];
  }
  const long double oracle = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  EXPECT_NEAR(stats::pearson(xs, ys), static_cast<double>(oracle), 1e-15);
  EXPECT_NEAR(stats::pearson(xs, ys), 0.78502642096301004713, 1e-15);
}

TEST(Pearson, Errors) {
  const std::vector<double> a{1, 2, 3}, flat{2, 2, 2}, one{1}, two{1, 2};
  EXPECT_THROW(stats::pearson(a, flat), DegenerateError);
  EXPECT_THROW(stats::pearson(flat, a), DegenerateError);
  EXPECT_THROW(stats::pearson(one, one), InputError);
  EXPECT_THROW(stats::pearson(a, two), InputError);
}

TEST(Stats, MedianVarianceSignTest) {
  EXPECT_DOUBLE_EQ(stats::median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(stats::median({4, 1, 2, 3}), 2.5);
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(stats::variance(v), 1.25);
  // P(X >= 9 | n = 10) = 11 / 1024
  EXPECT_NEAR(stats::sign_test_p(9, 1), 11.0 / 1024.0, 1e-15);
  EXPECT_DOUBLE_EQ(stats::sign_test_p(0, 5), 1.0);
}

TEST(Csv, QuotesAndRoundTrips) {
  const auto path = std::filesystem::temp_directory_path() / "neglab_csv_test.csv";
  {
    csv::Writer w(path.string(), {"name", "x", "n"});
    w.row({std::string("plain"), 0.1, 3LL});
    w.row({std::string("a,\"b\"\nc"), -1e-300, -7LL});
  }
  const auto t = csv::read(path.string());
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.header, (std::vector<std::string>{"name", "x", "n"}));
  EXPECT_EQ(t.rows[1][0], "a,\"b\"\nc");
  EXPECT_EQ(std::stod(t.rows[0][1]), 0.1);
  EXPECT_EQ(std::stod(t.rows[1][1]), -1e-300);
  std::filesystem::remove(path);
}

// ---- sweep specs ---------------------------------------------------------------

TEST(SweepSpec, GridArithmetic) {
  const SweepSpec s{-2.0, 2.0, 0.2};
  const auto g = s.grid();
  ASSERT_EQ(g.size(), 21u);
  EXPECT_DOUBLE_EQ(g.front(), -2.0);
  EXPECT_EQ(g[10], 0.0);
  EXPECT_NEAR(g.back(), 2.0, 1e-12);
  EXPECT_EQ(SweepSpec({-10, 10, 0.2, 2.0}).grid().size(), 101u);
}

TEST(SweepSpec, Validation) {
  EXPECT_THROW(SweepSpec({2, -2, 0.2}).validate(), InputError);
  EXPECT_THROW(SweepSpec({-2, 2, 0.0}).validate(), InputError);
  EXPECT_THROW(SweepSpec({-2, 2, 0.3}).validate(), InputError);
  EXPECT_THROW(SweepSpec({-1, 1, 0.2, 2.0}).validate(), InputError);
  EXPECT_NO_THROW(SweepSpec({-1, 1, 0.25, 1.0}).validate());
}

// ---- fit_neg ----------------------------------------------------------------

SweepCurve synthetic_curve(const std::function<double(double)>& dp, double baseline = 0.4) {
  SweepCurve c;
  c.shifts = SweepSpec{}.grid();
  c.baseline_prob = baseline;
  for (double s : c.shifts) c.probs.push_back(baseline + dp(s));
  return c;
}

TEST(FitNeg, ExactLine) {
  const auto rec = fit_neg(synthetic_curve([](double s) { return 0.05 * s; }));
  EXPECT_NEAR(rec.slope, 0.05, 1e-15);
  EXPECT_NEAR(rec.r, 1.0, 1e-12);
  EXPECT_TRUE(rec.is_linear);
  EXPECT_EQ(rec.polarity, Polarity::positive);
}

TEST(FitNeg, FlatCurveIsNullAndNonlinear) {
  const auto rec = fit_neg(synthetic_curve([](double) { return 0.0; }));
  EXPECT_EQ(rec.slope, 0.0);
  EXPECT_EQ(rec.polarity, Polarity::null);
  EXPECT_FALSE(rec.is_linear);
}

TEST(FitNeg, UsesOnlyTheWindow) {
  // linear inside +-1, wild outside
  const auto c = synthetic_curve([](double s) { return std::abs(s) <= 1.0 + 1e-9 ? -0.1 * s : 0.3; });
  const auto rec = fit_neg(c, 1.0);
  EXPECT_NEAR(rec.slope, -0.1, 1e-12);
  EXPECT_EQ(rec.polarity, Polarity::negative);
  EXPECT_TRUE(rec.is_linear);
  EXPECT_FALSE(fit_neg(c, 2.0).is_linear);
}

TEST(FitNeg, Errors) {
  const auto c = synthetic_curve([](double s) { return s; });
  EXPECT_THROW(fit_neg(c, 0.1), InputError);   // one point in window
  EXPECT_THROW(fit_neg(c, 3.0), InputError);   // window beyond curve
  SweepCurve bad = c;
  bad.probs.pop_back();
  EXPECT_THROW(fit_neg(bad, 2.0), InputError);
}

TEST(FitNeg, Threshold) {
  // r just under 1 with quadratic bend
  const auto c = synthetic_curve([](double s) { return 0.1 * s + 0.04 * s * s; });
  const auto rec = fit_neg(c, 2.0);
  EXPECT_LT(std::abs(rec.r), 0.99);
  EXPECT_EQ(fit_neg(c, 2.0, std::abs(rec.r)).is_linear, true);
  EXPECT_EQ(fit_neg(c, 2.0, std::abs(rec.r) + 1e-6).is_linear, false);
}

// ---- sweeps on a model -----------------------------------------------------------

TEST(Sweep, DisconnectedNeuronIsFlat) {
  auto cfg = small_config();
  Params p = random_params(cfg);
  p.layers[1].w2.row(5).setZero();
  std::mt19937_64 rng(3);
  const Prompt prompt = testing::random_prompt(cfg, rng, 8);
  const auto c = sweep(p, prompt, {1, 5}, SweepSpec{});
  for (double q : c.probs) EXPECT_EQ(q, c.baseline_prob);
  const auto rec = fit_neg(c);
  EXPECT_EQ(rec.polarity, Polarity::null);
  EXPECT_FALSE(rec.is_linear);
}

TEST(Sweep, CurveInvariants) {
  auto cfg = small_config();
  const Params p = random_params(cfg);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 5; ++i) {
    const Prompt prompt = testing::random_prompt(cfg, rng, 6 + i);
    const PromptSession session(p, prompt);
    const auto c = sweep(session, {i % cfg.n_layers, 3 * i}, prompt.target_token, SweepSpec{-3, 3, 0.5, 2.0});
    ASSERT_EQ(c.shifts.size(), c.probs.size());
    EXPECT_TRUE(std::is_sorted(c.shifts.begin(), c.shifts.end()));
    for (double q : c.probs) {
      EXPECT_GE(q, 0.0);
      EXPECT_LE(q, 1.0);
    }
    const auto zero = std::find(c.shifts.begin(), c.shifts.end(), 0.0) - c.shifts.begin();
    EXPECT_NEAR(c.probs[static_cast<std::size_t>(zero)], c.baseline_prob, 1e-9);
    EXPECT_NEAR(c.baseline_prob, forward(p, prompt).output.probs[static_cast<std::size_t>(prompt.target_token)], 1e-9);
  }
}

TEST(Sweep, PolarityFlipsWithNegatedHeadRow) {
  // Only the target logit depends on the network, so p = sigmoid(logit - c)
  // and negating that row reverses the sign of every output shift.
  auto cfg = small_config();
  Params p = random_params(cfg);
  std::mt19937_64 rng(9);
  const Prompt prompt = testing::random_prompt(cfg, rng, 9);
  for (int v = 0; v < cfg.vocab_size; ++v)
    if (v != prompt.target_token) p.w_out.row(v).setZero();
  Params flipped = p;
  flipped.w_out.row(prompt.target_token) *= -1.0;
  int compared = 0;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (int n = 0; n < cfg.d_ff; n += 3) {
      const auto a = fit_neg(sweep(p, prompt, {l, n}, SweepSpec{}));
      const auto b = fit_neg(sweep(flipped, prompt, {l, n}, SweepSpec{}));
      if (a.polarity == Polarity::null) continue;
      EXPECT_EQ(static_cast<int>(b.polarity), -static_cast<int>(a.polarity)) << l << "," << n;
      ++compared;
    }
  EXPECT_GT(compared, 20);
}

/// (prompt, neuron) pairs of the trained fixture with sweep curves.
struct TrainedCurves {
  std::vector<SweepCurve> curves;
  std::vector<NegRecord> records;
  std::vector<double> fd;         // central difference of p at each pair, h = 1e-3
  std::vector<double> neurgrad;   // from the estimator
  std::vector<double> cg;
};

const TrainedCurves& trained_curves() {
  static const TrainedCurves tc = [] {
    const auto& t = trained_binary();
    TrainedCurves out;
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> pick(0, t.params.config.total_neurons() - 1);
    for (int q = 0; q < 10; ++q) {
      const Prompt prompt = render_prompt(t.tasks.test[static_cast<std::size_t>(q)], {});
      const PromptSession s(t.params, prompt);
      const auto est = estimate_all(s, prompt.target_token, q);
      for (int k = 0; k < 12; ++k) {
        const std::size_t f = static_cast<std::size_t>(pick(rng));
        const NeuronId id = est[f].neuron;
        out.curves.push_back(sweep(s, id, prompt.target_token, SweepSpec{}, q));
        out.records.push_back(fit_neg(out.curves.back()));
        out.fd.push_back(testing::central_difference(s, id, prompt.target_token, 1e-3));
        out.neurgrad.push_back(est[f].neurgrad);
        out.cg.push_back(est[f].cg);
      }
    }
    return out;
  }();
  return tc;
}

TEST(TrainedSweep, SlopeMatchesFiniteDifferenceWhenHighlyLinear) {
  const auto& tc = trained_curves();
  int checked = 0;
  for (std::size_t i = 0; i < tc.records.size(); ++i) {
    const auto& r = tc.records[i];
    if (std::abs(r.r) < 0.99) continue;
    // sign-relative shift: slope estimates dp/da times sign(a)
    const double oracle = tc.fd[i] * sign_of(r.activation_at_baseline);
    EXPECT_LE(std::abs(r.slope - oracle), 0.05 * std::abs(oracle)) << i;
    ++checked;
  }
  EXPECT_GT(checked, 60);
}

TEST(TrainedSweep, SlopeStableUnderGridSubsampling) {
  const auto& tc = trained_curves();
  for (std::size_t i = 0; i < tc.curves.size(); ++i) {
    if (std::abs(tc.records[i].r) < 0.99) continue;
    SweepCurve half = tc.curves[i];
    half.shifts.clear();
    half.probs.clear();
    for (std::size_t j = 0; j < tc.curves[i].shifts.size(); j += 2) {
      half.shifts.push_back(tc.curves[i].shifts[j]);
      half.probs.push_back(tc.curves[i].probs[j]);
    }
    EXPECT_LE(std::abs(fit_neg(half).slope - tc.records[i].slope), 0.02 * std::abs(tc.records[i].slope)) << i;
  }
}

TEST(TrainedSweep, ShiftConventionsMatchTheirGradients) {
  const auto& t = trained_binary();
  const auto& tc = trained_curves();
  int checked = 0;
  for (std::size_t i = 0; i < tc.records.size(); ++i) {
    if (std::abs(tc.records[i].r) < 0.99) continue;
    EXPECT_LE(std::abs(tc.records[i].slope - tc.neurgrad[i]), 0.05 * std::abs(tc.neurgrad[i]));
    const auto& c = tc.curves[i];
    const Prompt prompt = render_prompt(t.tasks.test[static_cast<std::size_t>(c.prompt_id)], {});
    SweepSpec abs_spec;
    abs_spec.mode = PatchMode::absolute_delta;
    const auto rec = fit_neg(sweep(t.params, prompt, c.neuron, abs_spec, c.prompt_id));
    if (std::abs(rec.r) < 0.99) continue;
    EXPECT_LE(std::abs(rec.slope - tc.cg[i]), 0.05 * std::abs(tc.cg[i]));
    ++checked;
  }
  EXPECT_GT(checked, 40);
}

TEST(TrainedSweep, TopCgNeuronMonotoneNearZero) {
  const auto& t = trained_binary();
  for (int q = 0; q < 5; ++q) {
    const Prompt prompt = render_prompt(t.tasks.test[static_cast<std::size_t>(q)], {});
    const PromptSession s(t.params, prompt);
    const auto est = estimate_all(s, prompt.target_token);
    const auto top = std::max_element(est.begin(), est.end(), [](const auto& a, const auto& b) {
      return std::abs(a.cg) < std::abs(b.cg);
    });
    SweepSpec spec{-0.5, 0.5, 0.05, 0.5, PatchMode::absolute_delta};
    const auto c = sweep(s, top->neuron, prompt.target_token, spec);
    for (std::size_t i = 1; i < c.probs.size(); ++i) {
      const double d = c.probs[i] - c.probs[i - 1];
      EXPECT_TRUE(d * top->cg >= 0.0) << "prompt " << q << " step " << i;
    }
  }
}

TEST(TrainedSweep, SmallerWindowNeverLowersMeanAbsR) {
  const auto& tc = trained_curves();
  ASSERT_GE(tc.curves.size(), 100u);
  const auto prof = window_correlation_profile(tc.curves, {2.0, 1.0, 0.4});
  EXPECT_GE(prof[1], prof[0]);
  EXPECT_GE(prof[2], prof[1]);
}

// ---- aggregation -------------------------------------------------------------

NegRecord rec(int prompt, int layer, bool linear, double slope) {
  NegRecord r;
  r.prompt_id = prompt;
  r.neuron = {layer, 0};
  r.is_linear = linear;
  r.slope = slope;
  r.polarity = polarity_of(slope);
  return r;
}

TEST(Aggregate, PerfectGenerality) {
  std::vector<NegRecord> rs;
  for (int p = 0; p < 3; ++p)
    for (int l = 0; l < 4; ++l) rs.push_back(rec(p, l, true, l % 2 ? 1.0 : -1.0));
  const auto s = aggregate_stats(rs, 4);
  EXPECT_EQ(s.linear_ratio, 1.0);
  EXPECT_EQ(s.generality.coverage_layer, 1.0);
  EXPECT_EQ(s.generality.distribution_layer, 1.0);
  EXPECT_EQ(s.generality.LG, 1.0);
  EXPECT_EQ(s.generality.PG, 1.0);
}

TEST(Aggregate, SingleLayerIsMaximallySkewed) {
  std::vector<NegRecord> rs;
  for (int p = 0; p < 3; ++p) {
    rs.push_back(rec(p, 2, true, 1.0));
    rs.push_back(rec(p, 0, false, 0.5));
  }
  const auto s = aggregate_stats(rs, 4);
  EXPECT_EQ(s.generality.coverage_layer, 0.25);
  EXPECT_EQ(s.generality.distribution_layer, 0.0);
  EXPECT_EQ(s.generality.LG, 0.0);
  EXPECT_EQ(s.generality.PG, 1.0);
}

TEST(Aggregate, DistributionAgainstDirectVarianceRatio) {
  // counts per layer (3, 1, 0, 0): variance 1.5, all-in-one variance 16*3/16 = 3
  std::vector<NegRecord> rs;
  for (int i = 0; i < 3; ++i) rs.push_back(rec(0, 0, true, 1.0));
  rs.push_back(rec(0, 1, true, 1.0));
  const auto s = aggregate_stats(rs, 4);
  EXPECT_DOUBLE_EQ(s.generality.distribution_layer, 1.0 - 1.5 / 3.0);
  EXPECT_DOUBLE_EQ(s.generality.coverage_layer, 0.5);
  EXPECT_DOUBLE_EQ(s.generality.LG, 0.25);
}

TEST(Aggregate, RatiosPartition) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> sgn(-1, 1), lay(0, 3);
  std::vector<NegRecord> rs;
  for (int i = 0; i < 500; ++i) rs.push_back(rec(i % 7, lay(rng), sgn(rng) != 0, sgn(rng) * 0.1));
  const auto s = aggregate_stats(rs, 4);
  EXPECT_NEAR(s.positive_ratio + s.negative_ratio + s.null_ratio, 1.0, 1e-12);
  for (double v : {s.generality.LG, s.generality.PG, s.generality.coverage_layer, s.generality.distribution_prompt}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(aggregate_stats({}, 4), InputError);
}

TEST(Aggregate, NoLinearNeurons) {
  const auto s = aggregate_stats({rec(0, 0, false, 0.0)}, 2);
  EXPECT_EQ(s.generality.LG, 0.0);
  EXPECT_EQ(s.generality.PG, 0.0);
  EXPECT_EQ(s.null_ratio, 1.0);
}

}  // namespace
}  // namespace neglab
