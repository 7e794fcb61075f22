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
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neglab/csv.hpp"
#include "neglab/estimators.hpp"
#include "neglab/forest.hpp"
#include "neglab/parallel.hpp"
#include "neglab/stats.hpp"
#include "neglab/tasks.hpp"

namespace neglab {

/// NeurGrad per (query, candidate, neuron), activation per (query, neuron),
/// and the model's candidate probabilities, for one split in one context.
/// Candidates are indexed by option position, so tables from different
/// answer styles line up.
struct FeatureTable {
  int n_queries = 0;
  int n_candidates = 0;
  int n_layers = 0;
  int d_ff = 0;
  std::vector<double> neurgrad;    // [q][c][n]
  std::vector<double> activation;  // [q][n]
  std::vector<double> cand_probs;  // [q][c]
  std::vector<int> correct;        // [q]

  int n_neurons() const { return n_layers * d_ff; }
  std::size_t flat(NeuronId id) const { return static_cast<std::size_t>(id.layer) * d_ff + id.neuron; }
  NeuronId id_of(std::size_t f) const { return {static_cast<int>(f / d_ff), static_cast<int>(f % d_ff)}; }

  double ng(int q, int c, std::size_t n) const {
    return neurgrad[(static_cast<std::size_t>(q) * n_candidates + static_cast<std::size_t>(c)) * n_neurons() + n];
  }
  double& ng(int q, int c, std::size_t n) {
    return neurgrad[(static_cast<std::size_t>(q) * n_candidates + static_cast<std::size_t>(c)) * n_neurons() + n];
  }
  double act(int q, std::size_t n) const { return activation[static_cast<std::size_t>(q) * n_neurons() + n]; }
  int polarity(int q, int c, std::size_t n) const { return static_cast<int>(sign_of(ng(q, c, n))); }

  /// Candidate with the largest (smallest) NeurGrad; ties to the lowest index.
  int argmax(int q, std::size_t n) const {
    int best = 0;
    for (int c = 1; c < n_candidates; ++c)
      if (ng(q, c, n) > ng(q, best, n)) best = c;
    return best;
  }
  int argmin(int q, std::size_t n) const {
    int best = 0;
    for (int c = 1; c < n_candidates; ++c)
      if (ng(q, c, n) < ng(q, best, n)) best = c;
    return best;
  }

  void resize(int queries, int candidates, int layers, int ff) {
    n_queries = queries;
    n_candidates = candidates;
    n_layers = layers;
    d_ff = ff;
    const auto Q = static_cast<std::size_t>(queries), C = static_cast<std::size_t>(candidates),
               N = static_cast<std::size_t>(layers) * static_cast<std::size_t>(ff);
    neurgrad.assign(Q * C * N, 0.0);
    activation.assign(Q * N, 0.0);
    cand_probs.assign(Q * C, 0.0);
    correct.assign(Q, 0);
  }

  /// Rows in the given order (used for permutation checks and subsets).
  FeatureTable select(const std::vector<int>& queries) const {
    FeatureTable t;
    t.resize(static_cast<int>(queries.size()), n_candidates, n_layers, d_ff);
    const auto N = static_cast<std::size_t>(n_neurons()), C = static_cast<std::size_t>(n_candidates);
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto q = static_cast<std::size_t>(queries[i]);
      std::copy_n(neurgrad.begin() + static_cast<long>(q * C * N), C * N, t.neurgrad.begin() + static_cast<long>(i * C * N));
      std::copy_n(activation.begin() + static_cast<long>(q * N), N, t.activation.begin() + static_cast<long>(i * N));
      std::copy_n(cand_probs.begin() + static_cast<long>(q * C), C, t.cand_probs.begin() + static_cast<long>(i * C));
      t.correct[i] = correct[q];
    }
    return t;
  }
};

/// One forward per query and one backward per candidate token.
inline FeatureTable extract_features(const Params& params, const TaskSet& ts, const std::vector<ChoiceTask>& split,
                                     const RenderContext& ctx = {}, int jobs = 1) {
  if (split.empty()) throw InputError("extract_features: empty split");
  const ModelConfig& cfg = params.config;
  FeatureTable t;
  t.resize(static_cast<int>(split.size()), split.front().n_options(), cfg.n_layers, cfg.d_ff);
  for (const auto& task : split)
    if (task.n_options() != t.n_candidates) throw InputError("extract_features: mixed option counts");
  parallel_for(split.size(), jobs, [&](std::size_t i) {
    const int q = static_cast<int>(i);
    const ChoiceTask styled = restyle(split[i], ctx.style);
    const Prompt prompt = render_in_context(ts, split[i], ctx);
    const PromptSession s(params, prompt);
    t.correct[i] = split[i].correct;
    const auto N = static_cast<std::size_t>(t.n_neurons());
    for (int c = 0; c < t.n_candidates; ++c) {
      const int token = styled.candidates[static_cast<std::size_t>(c)];
      t.cand_probs[i * static_cast<std::size_t>(t.n_candidates) + static_cast<std::size_t>(c)] =
          s.baseline().probs[static_cast<std::size_t>(token)];
      const auto est = estimate_all(s, token, q);
      for (std::size_t n = 0; n < N; ++n) {
        t.ng(q, c, n) = est[n].neurgrad;
        if (c == 0) t.activation[i * N + n] = est[n].activation;
      }
    }
  });
  return t;
}

// ---------------------------------------------------------------------------
// Majority-vote probes
// ---------------------------------------------------------------------------

enum class ProbeKind { polar, magn, act };

inline std::string to_string(ProbeKind k) {
  return k == ProbeKind::polar ? "polar" : (k == ProbeKind::magn ? "magn" : "act");
}

inline ProbeKind probe_kind_from_string(const std::string& s) {
  if (s == "polar") return ProbeKind::polar;
  if (s == "magn") return ProbeKind::magn;
  if (s == "act") return ProbeKind::act;
  throw InputError("unknown probe kind '" + s + "'");
}

/// Per-neuron statistic of a vote probe.
///   polar: `polarity` is the neuron's dominant NeurGrad sign for the correct
///          candidate over the train split; votes go to every candidate whose
///          sign matches it.
///   magn:  `highest` says whether the correct candidate tends to hold the
///          largest (or smallest) NeurGrad; the vote goes to that extremum.
///   act:   activation above `threshold` votes `high_class`, else `low_class`.
struct RankedNeuron {
  NeuronId neuron;
  double consistency = 0.0;
  int polarity = 1;
  bool highest = true;
  double threshold = 0.0;
  int high_class = 0;
  int low_class = 0;

  friend bool operator==(const RankedNeuron&, const RankedNeuron&) = default;
};

struct VoteProbe {
  ProbeKind kind = ProbeKind::magn;
  int n_layers = 0;
  int d_ff = 0;
  int n_candidates = 0;
  std::vector<RankedNeuron> ranking;  // consistency non-increasing
  int size = 1;                       // neurons used by predict

  friend bool operator==(const VoteProbe&, const VoteProbe&) = default;
};

using PolarProbe = VoteProbe;
using MagnProbe = VoteProbe;

namespace detail {

inline void check_train_table(const FeatureTable& t) {
  if (t.n_queries == 0) throw InputError("probe: empty training features");
  for (int c : t.correct)
    if (c != t.correct.front()) return;
  throw DegenerateError("probe: training split has a single class");
}

inline void rank(VoteProbe& p) {
  std::stable_sort(p.ranking.begin(), p.ranking.end(), [](const RankedNeuron& a, const RankedNeuron& b) {
    if (a.consistency != b.consistency) return a.consistency > b.consistency;
    return a.neuron < b.neuron;
  });
}

}  // namespace detail

inline VoteProbe train_polar(const FeatureTable& t) {
  detail::check_train_table(t);
  VoteProbe p{ProbeKind::polar, t.n_layers, t.d_ff, t.n_candidates, {}, 1};
  const auto N = static_cast<std::size_t>(t.n_neurons());
  p.ranking.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    int pos = 0, neg = 0;
    for (int q = 0; q < t.n_queries; ++q) {
      const int s = t.polarity(q, t.correct[static_cast<std::size_t>(q)], n);
      pos += s > 0;
      neg += s < 0;
    }
    RankedNeuron r;
    r.neuron = t.id_of(n);
    r.polarity = pos >= neg ? 1 : -1;
    r.consistency = static_cast<double>(std::max(pos, neg)) / t.n_queries;
    p.ranking.push_back(r);
  }
  detail::rank(p);
  return p;
}

inline VoteProbe train_magn(const FeatureTable& t) {
  detail::check_train_table(t);
  VoteProbe p{ProbeKind::magn, t.n_layers, t.d_ff, t.n_candidates, {}, 1};
  const auto N = static_cast<std::size_t>(t.n_neurons());
  p.ranking.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    int hi = 0, lo = 0;
    for (int q = 0; q < t.n_queries; ++q) {
      const int c = t.correct[static_cast<std::size_t>(q)];
      hi += t.argmax(q, n) == c;
      lo += t.argmin(q, n) == c;
    }
    RankedNeuron r;
    r.neuron = t.id_of(n);
    r.highest = hi >= lo;
    r.consistency = static_cast<double>(std::max(hi, lo)) / t.n_queries;
    p.ranking.push_back(r);
  }
  detail::rank(p);
  return p;
}

/// Activation analog: per neuron, split at the mean train activation; the
/// class most often above it is `high_class`, least often `low_class`.
/// Consistency is the single-neuron train accuracy.
inline VoteProbe train_act(const FeatureTable& t) {
  detail::check_train_table(t);
  VoteProbe p{ProbeKind::act, t.n_layers, t.d_ff, t.n_candidates, {}, 1};
  const auto N = static_cast<std::size_t>(t.n_neurons());
  const auto C = static_cast<std::size_t>(t.n_candidates);
  std::vector<int> class_n(C, 0);
  for (int c : t.correct) ++class_n[static_cast<std::size_t>(c)];
  for (std::size_t n = 0; n < N; ++n) {
    double mean = 0.0;
    for (int q = 0; q < t.n_queries; ++q) mean += t.act(q, n);
    mean /= t.n_queries;
    std::vector<double> above(C, 0.0);
    for (int q = 0; q < t.n_queries; ++q)
      if (t.act(q, n) > mean) above[static_cast<std::size_t>(t.correct[static_cast<std::size_t>(q)])] += 1.0;
    std::vector<double> rate(C, 0.0), neg_rate(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      rate[c] = class_n[c] ? above[c] / class_n[c] : 0.0;
      neg_rate[c] = -rate[c];
    }
    RankedNeuron r;
    r.neuron = t.id_of(n);
    r.threshold = mean;
    r.high_class = argmax_lowest(rate);
    r.low_class = argmax_lowest(neg_rate);
    int right = 0;
    for (int q = 0; q < t.n_queries; ++q)
      right += (t.act(q, n) > mean ? r.high_class : r.low_class) == t.correct[static_cast<std::size_t>(q)];
    r.consistency = static_cast<double>(right) / t.n_queries;
    p.ranking.push_back(r);
  }
  detail::rank(p);
  return p;
}

inline VoteProbe train_probe(ProbeKind kind, const FeatureTable& t) {
  switch (kind) {
    case ProbeKind::polar: return train_polar(t);
    case ProbeKind::magn: return train_magn(t);
    case ProbeKind::act: return train_act(t);
  }
  throw InputError("unknown probe kind");
}

namespace detail {

inline void check_compatible(const VoteProbe& p, const FeatureTable& t) {
  if (p.n_candidates != t.n_candidates) throw InputError("probe: candidate count differs from features");
  for (const auto& r : p.ranking)
    if (r.neuron.layer >= t.n_layers || r.neuron.neuron >= t.d_ff) throw InputError("probe: neuron missing from features");
}

inline void add_votes(const VoteProbe& p, const RankedNeuron& r, const FeatureTable& t, int q, std::vector<int>& votes) {
  const std::size_t n = t.flat(r.neuron);
  switch (p.kind) {
    case ProbeKind::polar:
      for (int c = 0; c < t.n_candidates; ++c)
        if (t.polarity(q, c, n) == r.polarity) ++votes[static_cast<std::size_t>(c)];
      break;
    case ProbeKind::magn: ++votes[static_cast<std::size_t>(r.highest ? t.argmax(q, n) : t.argmin(q, n))]; break;
    case ProbeKind::act: ++votes[static_cast<std::size_t>(t.act(q, n) > r.threshold ? r.high_class : r.low_class)]; break;
  }
}

inline int vote_winner(const std::vector<int>& votes) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(votes.size()); ++c)
    if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
  return best;
}

}  // namespace detail

/// Majority vote of the top `size` neurons (probe.size when 0); ties go to
/// the lowest option index.
inline int predict(const VoteProbe& p, const FeatureTable& t, int q, int size = 0) {
  detail::check_compatible(p, t);
  const int k = size > 0 ? size : p.size;
  if (k > static_cast<int>(p.ranking.size())) throw InputError("probe: size exceeds ranking");
  std::vector<int> votes(static_cast<std::size_t>(t.n_candidates), 0);
  for (int i = 0; i < k; ++i) detail::add_votes(p, p.ranking[static_cast<std::size_t>(i)], t, q, votes);
  return detail::vote_winner(votes);
}

inline std::vector<int> predict_all(const VoteProbe& p, const FeatureTable& t, int size = 0) {
  std::vector<int> out(static_cast<std::size_t>(t.n_queries));
  for (int q = 0; q < t.n_queries; ++q) out[static_cast<std::size_t>(q)] = predict(p, t, q, size);
  return out;
}

/// Fraction of predictions equal to the gold option.
inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& gold) {
  if (predictions.size() != gold.size() || gold.empty()) throw InputError("accuracy: need equal nonempty lists");
  std::size_t right = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) right += predictions[i] == gold[i];
  return static_cast<double>(right) / static_cast<double>(gold.size());
}

inline double probe_accuracy(const VoteProbe& p, const FeatureTable& t, int size = 0) {
  return accuracy(predict_all(p, t, size), t.correct);
}

/// Neuron counts tried by the size search: 1, 2, 4, ... up to the ranking size.
inline std::vector<int> candidate_sizes(int total) {
  std::vector<int> s;
  for (long v = 1; v <= total; v *= 2) s.push_back(static_cast<int>(v));
  return s;
}

/// Accuracy at each size in `sizes` (ascending), one pass over the ranking.
inline std::vector<double> accuracy_by_size(const VoteProbe& p, const FeatureTable& t, const std::vector<int>& sizes) {
  detail::check_compatible(p, t);
  if (!std::is_sorted(sizes.begin(), sizes.end())) throw InputError("sizes must be ascending");
  if (!sizes.empty() && sizes.back() > static_cast<int>(p.ranking.size())) throw InputError("size exceeds ranking");
  std::vector<double> right(sizes.size(), 0.0);
  std::vector<int> votes(static_cast<std::size_t>(t.n_candidates));
  for (int q = 0; q < t.n_queries; ++q) {
    std::fill(votes.begin(), votes.end(), 0);
    std::size_t next = 0;
    for (int i = 0; next < sizes.size(); ++i) {
      detail::add_votes(p, p.ranking[static_cast<std::size_t>(i)], t, q, votes);
      while (next < sizes.size() && sizes[next] == i + 1) {
        right[next] += detail::vote_winner(votes) == t.correct[static_cast<std::size_t>(q)];
        ++next;
      }
    }
  }
  for (double& r : right) r /= t.n_queries;
  return right;
}

struct SizeChoice {
  int size = 1;
  double accuracy = 0.0;
  std::vector<int> sizes;
  std::vector<double> accuracies;
};

/// Best top-2^n size on the given (validation) features; ties to the smaller size.
inline SizeChoice select_neuron_size(const VoteProbe& p, const FeatureTable& valid) {
  SizeChoice s;
  s.sizes = candidate_sizes(static_cast<int>(p.ranking.size()));
  s.accuracies = accuracy_by_size(p, valid, s.sizes);
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.sizes.size(); ++i)
    if (s.accuracies[i] > s.accuracies[best]) best = i;
  s.size = s.sizes[best];
  s.accuracy = s.accuracies[best];
  return s;
}

// ---------------------------------------------------------------------------
// Tree probe
// ---------------------------------------------------------------------------

/// Argmax-candidate index per (query, neuron).
inline CategoricalData argmax_features(const FeatureTable& t) {
  CategoricalData d;
  d.n_features = t.n_neurons();
  d.n_classes = t.n_candidates;
  d.x.resize(static_cast<std::size_t>(t.n_queries) * static_cast<std::size_t>(d.n_features));
  d.y = t.correct;
  for (int q = 0; q < t.n_queries; ++q)
    for (int n = 0; n < d.n_features; ++n)
      d.x[static_cast<std::size_t>(q) * static_cast<std::size_t>(d.n_features) + static_cast<std::size_t>(n)] =
          t.argmax(q, static_cast<std::size_t>(n));
  return d;
}

struct TreeProbe {
  RandomForest forest;
  int n_layers = 0;
  int d_ff = 0;

  std::size_t feature_count() const { return forest.features_used().size(); }
};

inline TreeProbe train_tree(const FeatureTable& t, const ForestOptions& opt, int jobs = 1) {
  if (t.n_queries == 0) throw InputError("tree probe: empty training features");
  return {train_forest(argmax_features(t), opt, jobs), t.n_layers, t.d_ff};
}

inline std::vector<int> predict_all(const TreeProbe& p, const FeatureTable& t) {
  if (t.n_layers != p.n_layers || t.d_ff != p.d_ff || t.n_candidates != p.forest.n_classes)
    throw InputError("tree probe: features do not match the probe");
  const CategoricalData d = argmax_features(t);
  std::vector<int> out(d.rows());
  for (std::size_t q = 0; q < d.rows(); ++q) out[q] = p.forest.predict(d.row(q));
  return out;
}

inline double probe_accuracy(const TreeProbe& p, const FeatureTable& t) { return accuracy(predict_all(p, t), t.correct); }

// ---------------------------------------------------------------------------
// Baselines and summaries
// ---------------------------------------------------------------------------

inline double rand_accuracy(int n_options) { return 1.0 / n_options; }

/// Candidate with the highest model probability.
inline double lm_prob_accuracy(const FeatureTable& t) {
  std::vector<int> pred(static_cast<std::size_t>(t.n_queries));
  for (int q = 0; q < t.n_queries; ++q) {
    std::vector<double> p(t.cand_probs.begin() + static_cast<long>(q) * t.n_candidates,
                          t.cand_probs.begin() + static_cast<long>(q + 1) * t.n_candidates);
    pred[static_cast<std::size_t>(q)] = argmax_lowest(p);
  }
  return accuracy(pred, t.correct);
}

struct PolarityOpposition {
  double opposite_fraction = 0.0;   // (query, neuron) pairs with ng0 * ng1 < 0
  double correlation = 0.0;         // pooled over (query, neuron)
  double neuron_correlation = 0.0;  // across neurons, of per-neuron means over queries
};

inline PolarityOpposition polarity_opposition(const FeatureTable& t) {
  if (t.n_candidates != 2) throw InputError("polarity opposition needs a binary task");
  std::vector<double> a, b;
  std::size_t opposite = 0;
  const auto N = static_cast<std::size_t>(t.n_neurons());
  for (int q = 0; q < t.n_queries; ++q)
    for (std::size_t n = 0; n < N; ++n) {
      a.push_back(t.ng(q, 0, n));
      b.push_back(t.ng(q, 1, n));
      opposite += a.back() * b.back() < 0.0;
    }
  std::vector<double> ma(N, 0.0), mb(N, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma[i % N] += a[i] / t.n_queries;
    mb[i % N] += b[i] / t.n_queries;
  }
  PolarityOpposition r;
  r.opposite_fraction = static_cast<double>(opposite) / static_cast<double>(a.size());
  r.correlation = stats::pearson(a, b);
  r.neuron_correlation = stats::pearson(ma, mb);
  return r;
}

inline double mean_abs_neurgrad(const FeatureTable& t) {
  double s = 0.0;
  for (double v : t.neurgrad) s += std::abs(v);
  return s / static_cast<double>(t.neurgrad.size());
}

// ---------------------------------------------------------------------------
// Probe files (JSON Lines): header, then one line per ranked neuron.
// ---------------------------------------------------------------------------

inline void write_probe(const VoteProbe& p, std::ostream& os) {
  os << nlohmann::json{{"format", "neglab-probe"}, {"version", 1}, {"kind", to_string(p.kind)},
                       {"n_layers", p.n_layers}, {"d_ff", p.d_ff}, {"n_candidates", p.n_candidates},
                       {"size", p.size}}.dump()
     << "\n";
  for (std::size_t i = 0; i < p.ranking.size(); ++i) {
    const auto& r = p.ranking[i];
    nlohmann::json j{{"rank", i}, {"layer", r.neuron.layer}, {"neuron", r.neuron.neuron}, {"consistency", r.consistency}};
    switch (p.kind) {
      case ProbeKind::polar: j["polarity"] = r.polarity; break;
      case ProbeKind::magn: j["preference"] = r.highest ? "highest" : "lowest"; break;
      case ProbeKind::act:
        j["threshold"] = r.threshold;
        j["high_class"] = r.high_class;
        j["low_class"] = r.low_class;
        break;
    }
    os << j.dump() << "\n";
  }
}

inline VoteProbe read_probe(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("probe file is empty");
  VoteProbe p;
  int lineno = 1;
  try {
    const auto h = nlohmann::json::parse(line);
    if (h.value("format", "") != "neglab-probe") throw FormatError("not a probe file");
    p.kind = probe_kind_from_string(h.at("kind").get<std::string>());
    p.n_layers = h.at("n_layers").get<int>();
    p.d_ff = h.at("d_ff").get<int>();
    p.n_candidates = h.at("n_candidates").get<int>();
    p.size = h.at("size").get<int>();
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.at("rank").get<std::size_t>() != p.ranking.size()) throw FormatError("ranks out of order");
      RankedNeuron r;
      r.neuron = {j.at("layer").get<int>(), j.at("neuron").get<int>()};
      r.consistency = j.at("consistency").get<double>();
      switch (p.kind) {
        case ProbeKind::polar: r.polarity = j.at("polarity").get<int>(); break;
        case ProbeKind::magn: r.highest = j.at("preference").get<std::string>() == "highest"; break;
        case ProbeKind::act:
          r.threshold = j.at("threshold").get<double>();
          r.high_class = j.at("high_class").get<int>();
          r.low_class = j.at("low_class").get<int>();
          break;
      }
      p.ranking.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("probe line " + std::to_string(lineno) + ": " + e.what());
  } catch (const InputError& e) {
    throw FormatError("probe line " + std::to_string(lineno) + ": " + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Full probe suite on one task
// ---------------------------------------------------------------------------

struct ProbeSuite {
  VoteProbe polar, magn, act;
  SizeChoice polar_size, magn_size, act_size;
  TreeProbe tree;
};

struct ProbeScores {
  std::string task;
  int n_options = 0;
  double rand = 0.0;
  double lm_prob = 0.0;
  double polar = 0.0;
  int polar_size = 0;
  double magn = 0.0;
  int magn_size = 0;
  double act = 0.0;
  int act_size = 0;
  double tree = 0.0;
  int tree_features = 0;
};

/// Vote probes are trained on `train`, sized on `valid`; the forest is
/// trained on `train`. Scores are test accuracies.
inline ProbeSuite train_suite(const FeatureTable& train, const FeatureTable& valid, const ForestOptions& forest,
                              int jobs = 1) {
  ProbeSuite s;
  auto fit = [&](ProbeKind k, VoteProbe& p, SizeChoice& c) {
    p = train_probe(k, train);
    c = select_neuron_size(p, valid);
    p.size = c.size;
  };
  fit(ProbeKind::polar, s.polar, s.polar_size);
  fit(ProbeKind::magn, s.magn, s.magn_size);
  fit(ProbeKind::act, s.act, s.act_size);
  s.tree = train_tree(train, forest, jobs);
  return s;
}

inline ProbeScores score_suite(const ProbeSuite& s, const FeatureTable& test, const std::string& task = "") {
  ProbeScores r;
  r.task = task;
  r.n_options = test.n_candidates;
  r.rand = rand_accuracy(test.n_candidates);
  r.lm_prob = lm_prob_accuracy(test);
  r.polar = probe_accuracy(s.polar, test);
  r.polar_size = s.polar.size;
  r.magn = probe_accuracy(s.magn, test);
  r.magn_size = s.magn.size;
  r.act = probe_accuracy(s.act, test);
  r.act_size = s.act.size;
  r.tree = probe_accuracy(s.tree, test);
  r.tree_features = static_cast<int>(s.tree.feature_count());
  return r;
}

/// Header: task,n_options,rand,lm_prob,polar,polar_size,magn,magn_size,tree,tree_features,act,act_size
inline void write_probe_scores_csv(const std::string& path, const std::vector<ProbeScores>& rows) {
  csv::Writer w(path, {"task", "n_options", "rand", "lm_prob", "polar", "polar_size", "magn", "magn_size", "tree",
                       "tree_features", "act", "act_size"});
  for (const auto& r : rows)
    w.row({r.task, static_cast<long long>(r.n_options), r.rand, r.lm_prob, r.polar,
           static_cast<long long>(r.polar_size), r.magn, static_cast<long long>(r.magn_size), r.tree,
           static_cast<long long>(r.tree_features), r.act, static_cast<long long>(r.act_size)});
}

/// Header: kind,size,accuracy (the size search on the valid split)
inline void write_size_search_csv(const std::string& path, const ProbeSuite& s) {
  csv::Writer w(path, {"kind", "size", "accuracy"});
  const std::pair<const char*, const SizeChoice*> all[] = {
      {"polar", &s.polar_size}, {"magn", &s.magn_size}, {"act", &s.act_size}};
  for (const auto& [name, c] : all)
    for (std::size_t i = 0; i < c->sizes.size(); ++i)
      w.row({std::string(name), static_cast<long long>(c->sizes[i]), c->accuracies[i]});
}

}  // namespace neglab
