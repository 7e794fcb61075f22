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

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "neglab/csv.hpp"
#include "neglab/intervene.hpp"
#include "neglab/model.hpp"
#include "neglab/stats.hpp"

namespace neglab {

struct GradientEstimate {
  NeuronId neuron;
  int prompt_id = 0;
  double cg = 0.0;
  double activation = 0.0;
  double neurgrad = 0.0;
  std::optional<double> ig;
  bool zero_activation = false;  // neurgrad forced to 0
};

inline double neurgrad_of(double cg, double activation) { return cg * sign_of(activation); }

/// CG, activation and NeurGrad for every neuron from one forward and one
/// backward pass. Result is indexed by flat neuron index.
inline std::vector<GradientEstimate> estimate_all(const PromptSession& session, int target, int prompt_id = 0) {
  const auto cg = session.gradient(target);
  const auto& base = session.baseline();
  std::vector<GradientEstimate> out(cg.size());
  for (std::size_t i = 0; i < cg.size(); ++i) {
    GradientEstimate& e = out[i];
    e.neuron = cg.id_of(i);
    e.prompt_id = prompt_id;
    e.cg = cg.at_flat(i);
    e.activation = base.layers[static_cast<std::size_t>(e.neuron.layer)].a(e.neuron.neuron);
    e.neurgrad = neurgrad_of(e.cg, e.activation);
    e.zero_activation = e.activation == 0.0;
  }
  return out;
}

inline std::vector<GradientEstimate> estimate_all(const Params& params, const Prompt& prompt, int prompt_id = 0) {
  const PromptSession session(params, prompt);
  return estimate_all(session, prompt.target_token, prompt_id);
}

/// Integrated gradient along the single-neuron path from activation 0 to a,
/// right Riemann sum with m steps.
inline double estimate_ig(const PromptSession& session, int target, NeuronId neuron, int m) {
  if (m < 1) throw InputError("integrated gradients: steps must be >= 1");
  const double a = session.activation(neuron);
  if (a == 0.0) return 0.0;
  double sum = 0.0;
  for (int k = 1; k <= m; ++k) {
    const PatchSpec patch{PatchMode::set_value, {{neuron, (static_cast<double>(k) / m) * a}}};
    sum += session.gradient(target, patch, neuron.layer)[neuron];
  }
  return a * sum / m;
}

inline std::vector<double> estimate_ig(const PromptSession& session, int target, const std::vector<NeuronId>& neurons,
                                       int m) {
  if (m < 1) throw InputError("integrated gradients: steps must be >= 1");
  std::vector<double> out;
  out.reserve(neurons.size());
  for (const auto& n : neurons) out.push_back(estimate_ig(session, target, n, m));
  return out;
}

/// Median wall-clock seconds of fn over `reps` runs after `warmups` runs.
inline double median_runtime(const std::function<void()>& fn, int warmups = 3, int reps = 20) {
  for (int i = 0; i < warmups; ++i) fn();
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return stats::median(std::move(t));
}

struct MethodScore {
  std::string method;
  std::size_t n_pairs = 0;
  double r = 0.0;
  double mae = 0.0;
  std::optional<double> runtime_s;  // per prompt
};

struct EstimatorReport {
  std::vector<MethodScore> methods;

  const MethodScore& at(const std::string& name) const {
    for (const auto& m : methods)
      if (m.method == name) return m;
    throw InputError("estimator report: no method " + name);
  }
};

/// Scores each estimator against intervention slopes over the overlapping
/// (prompt, neuron) pairs. IG is scored only when every overlapping pair has
/// a value.
inline EstimatorReport evaluate_estimators(const std::vector<NegRecord>& truth,
                                           const std::vector<GradientEstimate>& estimates,
                                           const std::map<std::string, double>& runtimes = {}) {
  std::map<std::pair<int, NeuronId>, const GradientEstimate*> index;
  for (const auto& e : estimates) index[{e.prompt_id, e.neuron}] = &e;
  std::vector<double> slope, cg, ng, ig;
  bool have_ig = true;
  for (const auto& t : truth) {
    const auto it = index.find({t.prompt_id, t.neuron});
    if (it == index.end()) continue;
    slope.push_back(t.slope);
    cg.push_back(it->second->cg);
    ng.push_back(it->second->neurgrad);
    if (it->second->ig) ig.push_back(*it->second->ig);
    else have_ig = false;
  }
  if (slope.size() < 2) throw InputError("evaluate_estimators: fewer than 2 overlapping pairs");

  EstimatorReport rep;
  auto score = [&](const std::string& name, const std::vector<double>& est) {
    MethodScore m;
    m.method = name;
    m.n_pairs = est.size();
    try {
      m.r = stats::pearson(est, slope);
    } catch (const DegenerateError&) {
      m.r = 0.0;
    }
    m.mae = stats::mean_absolute_error(est, slope);
    if (auto it = runtimes.find(name); it != runtimes.end()) m.runtime_s = it->second;
    rep.methods.push_back(m);
  };
  score("cg", cg);
  if (have_ig && !ig.empty()) score("ig", ig);
  score("neurgrad", ng);
  return rep;
}

/// Columns: prompt_id,layer,neuron,cg,activation,neurgrad,ig (ig empty when
/// not computed).
inline void write_estimates_csv(const std::string& path, const std::vector<GradientEstimate>& rows) {
  csv::Writer w(path, {"prompt_id", "layer", "neuron", "cg", "activation", "neurgrad", "ig"});
  for (const auto& e : rows)
    w.row({static_cast<long long>(e.prompt_id), static_cast<long long>(e.neuron.layer),
           static_cast<long long>(e.neuron.neuron), e.cg, e.activation, e.neurgrad,
           e.ig ? csv::Field{*e.ig} : csv::Field{std::string{}}});
}

inline void write_estimator_report_csv(const std::string& path, const EstimatorReport& rep) {
  csv::Writer w(path, {"method", "n_pairs", "r", "mae", "runtime_s"});
  for (const auto& m : rep.methods)
    w.row({m.method, static_cast<long long>(m.n_pairs), m.r, m.mae,
           m.runtime_s ? csv::Field{*m.runtime_s} : csv::Field{std::string{}}});
}

}  // namespace neglab
