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
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "neglab/csv.hpp"
#include "neglab/estimators.hpp"
#include "neglab/model.hpp"
#include "neglab/stats.hpp"

namespace neglab {

enum class RankMethod { cg, ig, neurgrad, random };

inline std::string to_string(RankMethod m) {
  switch (m) {
    case RankMethod::cg: return "cg";
    case RankMethod::ig: return "ig";
    case RankMethod::neurgrad: return "neurgrad";
    case RankMethod::random: return "random";
  }
  return "?";
}

inline RankMethod rank_method_from_string(const std::string& s) {
  if (s == "cg") return RankMethod::cg;
  if (s == "ig") return RankMethod::ig;
  if (s == "neurgrad") return RankMethod::neurgrad;
  if (s == "random") return RankMethod::random;
  throw InputError("unknown method '" + s + "'");
}

/// Uniform grid lo, lo + step, ..., hi.
inline std::vector<double> shift_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw InputError("grid: need step > 0 and hi >= lo");
  const double n = (hi - lo) / step;
  if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n)) throw InputError("grid: step does not divide the range");
  std::vector<double> g;
  for (long i = 0; i <= std::lround(n); ++i) g.push_back(lo + static_cast<double>(i) * step);
  return g;
}

struct EnhancePlan {
  std::vector<NeuronId> neurons;   // ranked
  std::vector<double> directions;  // +1 or -1
  std::vector<double> grid;        // shift magnitudes
  PatchMode mode = PatchMode::sign_relative_delta;

  void validate() const {
    if (neurons.size() != directions.size()) throw InputError("plan: one direction per neuron");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] < 0.0) throw InputError("plan: grid must be nonnegative");
      if (i && !(grid[i] > grid[i - 1])) throw InputError("plan: grid must be strictly increasing");
    }
    if (mode == PatchMode::set_value) throw InputError("plan: mode must be a delta mode");
  }
};

/// Picks the K neurons with the largest |method value|, ties in (layer,
/// neuron) order, each pushed in the direction of its value's sign (0 counts
/// as +). `random` draws K neurons with a seeded shuffle and takes directions
/// from NeurGrad. `ig` needs one value per neuron in `ig_values`.
inline EnhancePlan plan_topk(const std::vector<GradientEstimate>& est, RankMethod method, int K,
                             std::vector<double> grid, std::uint64_t seed = 0,
                             const std::vector<double>* ig_values = nullptr,
                             PatchMode mode = PatchMode::sign_relative_delta) {
  if (K <= 0) throw InputError("top-K: K must be positive");
  if (static_cast<std::size_t>(K) > est.size()) throw InputError("top-K: K exceeds the number of neurons");
  if (method == RankMethod::ig && (!ig_values || ig_values->size() != est.size()))
    throw InputError("top-K: ig ranking needs one value per neuron");
  auto value = [&](std::size_t i) {
    switch (method) {
      case RankMethod::cg: return est[i].cg;
      case RankMethod::ig: return (*ig_values)[i];
      default: return est[i].neurgrad;
    }
  };
  std::vector<std::size_t> order(est.size());
  std::iota(order.begin(), order.end(), 0);
  if (method == RankMethod::random) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = std::abs(value(a)), vb = std::abs(value(b));
      if (va != vb) return va > vb;
      return est[a].neuron < est[b].neuron;
    });
  }
  EnhancePlan plan;
  plan.grid = std::move(grid);
  plan.mode = mode;
  for (int k = 0; k < K; ++k) {
    const std::size_t i = order[static_cast<std::size_t>(k)];
    plan.neurons.push_back(est[i].neuron);
    plan.directions.push_back(value(i) < 0.0 ? -1.0 : 1.0);
  }
  plan.validate();
  return plan;
}

/// Target-probability change at each grid point with every planned neuron
/// shifted by delta * direction.
inline std::vector<double> topk_enhance(const PromptSession& session, int target, const EnhancePlan& plan) {
  plan.validate();
  const double base = session.baseline().probs.at(static_cast<std::size_t>(target));
  std::vector<double> out;
  out.reserve(plan.grid.size());
  for (double d : plan.grid) {
    if (d == 0.0) {
      out.push_back(0.0);
      continue;
    }
    PatchSpec patch{plan.mode, {}};
    for (std::size_t i = 0; i < plan.neurons.size(); ++i) patch.entries.push_back({plan.neurons[i], d * plan.directions[i]});
    out.push_back(session.target_value(patch, target) - base);
  }
  return out;
}

struct AdditivityResult {
  int n_neurons = 0;
  std::vector<double> grid;
  std::vector<double> predicted;  // sum |g_i| * delta
  std::vector<double> actual;
  double r = 0.0;
  bool r_defined = true;
};

/// N neurons drawn uniformly without replacement (seeded), all shifted
/// together along the grid in the direction of their NeurGrad sign; zero
/// NeurGrad neurons get +delta. The same set serves every grid point.
inline AdditivityResult multi_neuron_run(const PromptSession& session, int target,
                                         const std::vector<GradientEstimate>& est, int N,
                                         const std::vector<double>& grid, std::uint64_t seed,
                                         PatchMode mode = PatchMode::sign_relative_delta) {
  if (grid.size() < 3) throw InputError("multi-neuron: grid needs at least 3 points");
  if (N <= 0 || static_cast<std::size_t>(N) > est.size()) throw InputError("multi-neuron: N out of range");
  std::vector<std::size_t> idx(est.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates: first N entries are a uniform sample
  for (int k = 0; k < N; ++k) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), idx.size() - 1);
    std::swap(idx[static_cast<std::size_t>(k)], idx[pick(rng)]);
  }
  EnhancePlan plan;
  plan.mode = mode;
  plan.grid = grid;
  double slope = 0.0;
  for (int k = 0; k < N; ++k) {
    const auto& e = est[idx[static_cast<std::size_t>(k)]];
    plan.neurons.push_back(e.neuron);
    plan.directions.push_back(e.neurgrad < 0.0 ? -1.0 : 1.0);
    slope += std::abs(e.neurgrad);
  }
  AdditivityResult res;
  res.n_neurons = N;
  res.grid = grid;
  res.actual = topk_enhance(session, target, plan);
  for (double d : grid) res.predicted.push_back(slope * d);
  try {
    res.r = stats::pearson(res.predicted, res.actual);
  } catch (const DegenerateError&) {
    res.r = 0.0;
    res.r_defined = false;
  }
  return res;
}

/// Share of the total |value| held by the smallest q% of neurons, for
/// q = 0, 1, ..., 100 (q% of n rounded up).
inline std::vector<std::pair<double, double>> cumulative_neg_distribution(const std::vector<double>& values) {
  if (values.empty()) throw InputError("distribution: no values");
  std::vector<double> mag;
  mag.reserve(values.size());
  for (double v : values) mag.push_back(std::abs(v));
  std::sort(mag.begin(), mag.end());
  std::vector<double> prefix(mag.size() + 1, 0.0);
  for (std::size_t i = 0; i < mag.size(); ++i) prefix[i + 1] = prefix[i] + mag[i];
  const double total = prefix.back();
  if (total == 0.0) throw DegenerateError("distribution: all magnitudes are zero");
  const auto n = static_cast<long long>(mag.size());
  std::vector<std::pair<double, double>> curve;
  for (int q = 0; q <= 100; ++q) {
    const long long k = (q * n + 99) / 100;
    curve.emplace_back(q, prefix[static_cast<std::size_t>(k)] / total);
  }
  return curve;
}

/// Share of the total |value| held by the largest `fraction` of neurons.
inline double top_share(const std::vector<double>& values, double fraction) {
  std::vector<double> mag;
  for (double v : values) mag.push_back(std::abs(v));
  std::sort(mag.begin(), mag.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(mag.size())));
  const double total = std::accumulate(mag.begin(), mag.end(), 0.0);
  if (total == 0.0) throw DegenerateError("distribution: all magnitudes are zero");
  return std::accumulate(mag.begin(), mag.begin() + static_cast<long>(std::min(k, mag.size())), 0.0) / total;
}

}  // namespace neglab
