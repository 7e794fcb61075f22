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
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "neglab/csv.hpp"
#include "neglab/model.hpp"
#include "neglab/stats.hpp"

namespace neglab {

struct SweepSpec {
  double lo = -2.0;
  double hi = 2.0;
  double step = 0.2;
  double fit_window = 2.0;  // half-width of the regression window
  PatchMode mode = PatchMode::sign_relative_delta;

  void validate() const {
    if (!(lo < hi)) throw InputError("sweep: lo must be below hi");
    if (!(step > 0.0)) throw InputError("sweep: step must be positive");
    const double n = (hi - lo) / step;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n)) throw InputError("sweep: step does not divide the range");
    if (!(fit_window > 0.0) || fit_window > std::max(std::abs(lo), hi) + 1e-12)
      throw InputError("sweep: fit_window outside the swept range");
    if (mode == PatchMode::set_value) throw InputError("sweep: mode must be a delta mode");
  }

  std::vector<double> grid() const {
    validate();
    const auto n = static_cast<int>(std::lround((hi - lo) / step));
    std::vector<double> g;
    g.reserve(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) {
      double s = lo + i * step;
      if (std::abs(s) < step * 1e-9) s = 0.0;
      g.push_back(s);
    }
    return g;
  }
};

struct SweepCurve {
  NeuronId neuron;
  int prompt_id = 0;
  int target = 0;
  std::vector<double> shifts;
  std::vector<double> probs;
  double baseline_prob = 0.0;
  double activation = 0.0;
};

/// One patched evaluation per grid point, shifts ascending.
inline SweepCurve sweep(const PromptSession& session, NeuronId neuron, int target, const SweepSpec& spec,
                        int prompt_id = 0) {
  SweepCurve c;
  c.neuron = neuron;
  c.prompt_id = prompt_id;
  c.target = target;
  c.shifts = spec.grid();
  c.baseline_prob = session.baseline().probs.at(static_cast<std::size_t>(target));
  c.activation = session.activation(neuron);
  c.probs.reserve(c.shifts.size());
  for (double s : c.shifts) {
    if (s == 0.0) {
      c.probs.push_back(c.baseline_prob);
      continue;
    }
    PatchSpec patch{spec.mode, {{neuron, s}}};
    c.probs.push_back(session.target_value(patch, target));
  }
  return c;
}

inline SweepCurve sweep(const Params& params, const Prompt& prompt, NeuronId neuron, const SweepSpec& spec,
                        int prompt_id = 0) {
  const PromptSession session(params, prompt);
  return sweep(session, neuron, prompt.target_token, spec, prompt_id);
}

enum class Polarity { negative = -1, null = 0, positive = 1 };

inline std::string to_string(Polarity p) {
  return p == Polarity::positive ? "positive" : (p == Polarity::negative ? "negative" : "null");
}

inline Polarity polarity_of(double slope) {
  return slope > 0.0 ? Polarity::positive : (slope < 0.0 ? Polarity::negative : Polarity::null);
}

struct NegRecord {
  NeuronId neuron;
  int prompt_id = 0;
  int target = 0;
  double slope = 0.0;  // probability per unit shift
  double r = 0.0;
  bool is_linear = false;
  Polarity polarity = Polarity::null;
  double activation_at_baseline = 0.0;
};

/// Points of the curve with |shift| <= window, as (shift, prob - baseline).
inline void window_points(const SweepCurve& c, double window, std::vector<double>& xs, std::vector<double>& ys) {
  xs.clear();
  ys.clear();
  for (std::size_t i = 0; i < c.shifts.size(); ++i) {
    if (std::abs(c.shifts[i]) <= window + 1e-12) {
      xs.push_back(c.shifts[i]);
      ys.push_back(c.probs[i] - c.baseline_prob);
    }
  }
}

/// Zero-intercept regression of output shift on activation shift.
inline NegRecord fit_neg(const SweepCurve& c, double fit_window = 2.0, double linearity_threshold = 0.95) {
  if (c.shifts.size() != c.probs.size()) throw InputError("fit_neg: curve lists differ in length");
  if (c.shifts.empty() || c.shifts.front() > -fit_window + 1e-9 || c.shifts.back() < fit_window - 1e-9)
    throw InputError("fit_neg: curve does not cover the fit window");
  std::vector<double> xs, ys;
  window_points(c, fit_window, xs, ys);
  if (xs.size() < 3) throw InputError("fit_neg: fewer than 3 points in the fit window");

  NegRecord rec;
  rec.neuron = c.neuron;
  rec.prompt_id = c.prompt_id;
  rec.target = c.target;
  rec.activation_at_baseline = c.activation;
  rec.slope = stats::zero_intercept_slope(xs, ys);
  try {
    rec.r = stats::pearson(xs, ys);
    rec.is_linear = std::abs(rec.r) >= linearity_threshold;
  } catch (const DegenerateError&) {
    rec.r = 0.0;
    rec.is_linear = false;
  }
  rec.polarity = polarity_of(rec.slope);
  return rec;
}

inline NegRecord fit_neg(const SweepCurve& c, const SweepSpec& spec, double linearity_threshold = 0.95) {
  return fit_neg(c, spec.fit_window, linearity_threshold);
}

struct GeneralityStats {
  double coverage_layer = 0.0;
  double coverage_prompt = 0.0;
  double distribution_layer = 0.0;
  double distribution_prompt = 0.0;
  double LG = 0.0;
  double PG = 0.0;
};

struct LinearityStats {
  std::size_t n_records = 0;
  double linear_ratio = 0.0;
  double positive_ratio = 0.0;
  double negative_ratio = 0.0;
  double null_ratio = 0.0;
  GeneralityStats generality;
};

/// Variance of per-bin counts when all `total` items sit in one of `bins`
/// bins: total^2 (bins - 1) / bins^2.
inline double max_bin_variance(double total, std::size_t bins) {
  const double b = static_cast<double>(bins);
  return total * total * (b - 1.0) / (b * b);
}

/// coverage and distribution of linear-neuron counts over bins. With no
/// linear neurons both are 0; with a single bin the distribution is 1.
inline std::pair<double, double> coverage_distribution(const std::vector<double>& counts) {
  if (counts.empty()) throw InputError("generality: no bins");
  double total = 0.0;
  std::size_t occupied = 0;
  for (double c : counts) {
    total += c;
    if (c > 0) ++occupied;
  }
  const double coverage = static_cast<double>(occupied) / static_cast<double>(counts.size());
  if (total == 0.0) return {0.0, 0.0};
  const double max_var = max_bin_variance(total, counts.size());
  const double dist = max_var == 0.0 ? 1.0 : 1.0 - stats::variance(counts) / max_var;
  return {std::clamp(coverage, 0.0, 1.0), std::clamp(dist, 0.0, 1.0)};
}

/// Ratios over all (prompt, neuron) pairs, plus layer- and prompt-wise
/// generality. Layer bins are all n_layers layers; prompt bins are the
/// distinct prompt ids present.
inline LinearityStats aggregate_stats(const std::vector<NegRecord>& records, int n_layers) {
  if (records.empty()) throw InputError("aggregate_stats: no records");
  if (n_layers < 1) throw InputError("aggregate_stats: n_layers must be positive");
  LinearityStats s;
  s.n_records = records.size();
  std::vector<double> per_layer(static_cast<std::size_t>(n_layers), 0.0);
  std::map<int, double> per_prompt;
  std::size_t lin = 0, pos = 0, neg = 0, nul = 0;
  for (const auto& r : records) {
    if (r.neuron.layer < 0 || r.neuron.layer >= n_layers) throw InputError("aggregate_stats: layer out of range");
    per_prompt.try_emplace(r.prompt_id, 0.0);
    if (r.is_linear) {
      ++lin;
      per_layer[static_cast<std::size_t>(r.neuron.layer)] += 1.0;
      per_prompt[r.prompt_id] += 1.0;
    }
    if (r.polarity == Polarity::positive) ++pos;
    else if (r.polarity == Polarity::negative) ++neg;
    else ++nul;
  }
  const double n = static_cast<double>(records.size());
  s.linear_ratio = static_cast<double>(lin) / n;
  s.positive_ratio = static_cast<double>(pos) / n;
  s.negative_ratio = static_cast<double>(neg) / n;
  s.null_ratio = static_cast<double>(nul) / n;

  std::vector<double> prompt_counts;
  for (const auto& [id, c] : per_prompt) prompt_counts.push_back(c);
  auto& g = s.generality;
  std::tie(g.coverage_layer, g.distribution_layer) = coverage_distribution(per_layer);
  std::tie(g.coverage_prompt, g.distribution_prompt) = coverage_distribution(prompt_counts);
  g.LG = g.coverage_layer * g.distribution_layer;
  g.PG = g.coverage_prompt * g.distribution_prompt;
  return s;
}

/// Mean |r| for each fit window: per prompt, the mean over its neurons; then
/// the mean over prompts. Undefined correlations count as 0.
inline std::vector<double> window_correlation_profile(const std::vector<SweepCurve>& curves,
                                                      const std::vector<double>& windows) {
  if (curves.empty()) throw InputError("window profile: no curves");
  std::vector<double> out;
  std::vector<double> xs, ys;
  for (double w : windows) {
    std::map<int, std::pair<double, int>> by_prompt;
    for (const auto& c : curves) {
      window_points(c, w, xs, ys);
      if (xs.size() < 3) throw InputError("window profile: fewer than 3 points in window");
      double r = 0.0;
      try {
        r = std::abs(stats::pearson(xs, ys));
      } catch (const DegenerateError&) {
      }
      auto& acc = by_prompt[c.prompt_id];
      acc.first += r;
      acc.second += 1;
    }
    double total = 0.0;
    for (const auto& [id, acc] : by_prompt) total += acc.first / acc.second;
    out.push_back(total / static_cast<double>(by_prompt.size()));
  }
  return out;
}

inline void write_sweeps_csv(const std::string& path, const std::vector<SweepCurve>& curves) {
  csv::Writer w(path, {"prompt_id", "layer", "neuron", "shift", "prob"});
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.shifts.size(); ++i)
      w.row({static_cast<long long>(c.prompt_id), static_cast<long long>(c.neuron.layer),
             static_cast<long long>(c.neuron.neuron), c.shifts[i], c.probs[i]});
}

/// Header: prompt_id,layer,neuron,target,slope,r,is_linear,polarity,activation
inline void write_neg_records_csv(const std::string& path, const std::vector<NegRecord>& records) {
  csv::Writer w(path, {"prompt_id", "layer", "neuron", "target", "slope", "r", "is_linear", "polarity", "activation"});
  for (const auto& r : records)
    w.row({static_cast<long long>(r.prompt_id), static_cast<long long>(r.neuron.layer),
           static_cast<long long>(r.neuron.neuron), static_cast<long long>(r.target), r.slope, r.r,
           static_cast<long long>(r.is_linear ? 1 : 0), to_string(r.polarity), r.activation_at_baseline});
}

}  // namespace neglab
