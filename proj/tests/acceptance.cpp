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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are the stated ones; nothing here is tuned.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "neglab_cli.hpp"
#include "stump_oracle.hpp"
#include "test_util.hpp"

namespace {

using namespace neglab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& title, const std::function<Verdict()>& body) {
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << n << " (" << title << "): " << v.detail << std::endl;
}

std::string fmt(const char* f, auto... xs) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

const testing::TrainedTask& fixture() { return testing::trained_binary(); }

/// (prompt, neuron) pairs: `n_prompts` test prompts, `per_prompt` distinct
/// neurons each.
struct Pair {
  int prompt = 0;
  NeuronId neuron;
};

std::vector<Pair> sample_pairs(int n_prompts, int per_prompt, std::uint64_t seed) {
  const auto& cfg = fixture().params.config;
  std::vector<Pair> out;
  for (int q = 0; q < n_prompts; ++q)
    for (const NeuronId n : cli::sample_neurons(cfg, per_prompt, mix_seed(seed, static_cast<std::uint64_t>(q))))
      out.push_back({q, n});
  return out;
}

Prompt test_prompt(int q) { return render_prompt(fixture().tasks.test.at(static_cast<std::size_t>(q)), {}); }

// -- 1 ------------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto& p = fixture().params;
  const auto t0 = Clock::now();
  double worst = 0.0;
  int n = 0;
  const auto pairs = sample_pairs(10, 100, 101);
  for (int q = 0; q < 10; ++q) {
    const Prompt prompt = test_prompt(q);
    const PromptSession s(p, prompt);
    const auto cg = s.gradient(prompt.target_token);
    for (const auto& pr : pairs) {
      if (pr.prompt != q) continue;
      const double fd = testing::central_difference(s, pr.neuron, prompt.target_token, 1e-3);
      const double g = cg[pr.neuron];
      const double scale = std::max({std::abs(fd), std::abs(g), 1e-8});
      worst = std::max(worst, std::abs(fd - g) / scale);
      ++n;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-3 && secs < 10.0 && n == 1000,
          fmt("%d pairs, max relative error %.3g (<= 1e-3), %.2f s (< 10 s)", n, worst, secs)};
}

// -- 2, 3 ---------------------------------------------------------------------

struct PairData {
  std::vector<NegRecord> records;
  std::vector<double> fd, neurgrad;
  double seconds = 0.0;
};

const PairData& pair_data() {
  static const PairData d = [] {
    PairData out;
    const auto t0 = Clock::now();
    const auto& p = fixture().params;
    const auto pairs = sample_pairs(50, 20, 202);
    for (int q = 0; q < 50; ++q) {
      const Prompt prompt = test_prompt(q);
      const PromptSession s(p, prompt);
      const auto est = estimate_all(s, prompt.target_token, q);
      for (const auto& pr : pairs) {
        if (pr.prompt != q) continue;
        out.records.push_back(fit_neg(sweep(s, pr.neuron, prompt.target_token, SweepSpec{}, q)));
        out.fd.push_back(testing::central_difference(s, pr.neuron, prompt.target_token, 1e-3));
        out.neurgrad.push_back(
            est[static_cast<std::size_t>(pr.neuron.layer * p.config.d_ff + pr.neuron.neuron)].neurgrad);
      }
    }
    out.seconds = seconds_since(t0);
    return out;
  }();
  return d;
}

Verdict local_linearity() {
  const auto& d = pair_data();
  int linear = 0, within = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    if (!r.is_linear) continue;
    ++linear;
    // sign-relative sweep: the slope estimates dp/da * sign(a)
    const double oracle = d.fd[i] * sign_of(r.activation_at_baseline);
    const double rel = std::abs(r.slope - oracle) / std::max(std::abs(oracle), 1e-300);
    worst = std::max(worst, rel);
    within += rel <= 0.05;
  }
  const double ratio = static_cast<double>(linear) / static_cast<double>(d.records.size());
  return {ratio >= 0.8 && within == linear && d.seconds < 300.0,
          fmt("%zu pairs, linear fraction %.3f (>= 0.80); slope within 5%% of FD for %d/%d linear (worst %.3g); %.1f s",
              d.records.size(), ratio, within, linear, worst, d.seconds)};
}

Verdict neurgrad_fidelity() {
  const auto& d = pair_data();
  std::vector<double> slopes;
  double mean_abs = 0.0;
  for (const auto& r : d.records) {
    slopes.push_back(r.slope);
    mean_abs += std::abs(r.slope) / static_cast<double>(d.records.size());
  }
  const double r = stats::pearson(d.neurgrad, slopes);
  const double mae = stats::mean_absolute_error(d.neurgrad, slopes);

  const auto& p = fixture().params;
  const Prompt prompt = test_prompt(0);
  const double t_cg = median_runtime([&] { (void)PromptSession(p, prompt).gradient(prompt.target_token); });
  const double t_ng = median_runtime([&] { (void)estimate_all(p, prompt); });
  const double ratio = t_ng / t_cg;
  return {d.records.size() >= 1000 && r >= 0.99 && mae <= 0.1 * mean_abs && ratio <= 1.5,
          fmt("%zu pairs, r %.6f (>= 0.99), MAE %.3g vs 10%% of mean |slope| %.3g, runtime ratio %.3f (<= 1.5)",
              d.records.size(), r, mae, 0.1 * mean_abs, ratio)};
}

// -- 4 ------------------------------------------------------------------------

Verdict ig_completeness() {
  const auto& p = fixture().params;
  const Prompt prompt = test_prompt(0);
  const PromptSession s(p, prompt);
  const auto neurons = cli::sample_neurons(p.config, 100, 404);
  const auto ig = estimate_ig(s, prompt.target_token, neurons, 300);
  const double base = s.baseline().probs.at(static_cast<std::size_t>(prompt.target_token));
  double worst = 0.0;
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    const double zeroed = s.target_value({PatchMode::set_value, {{neurons[i], 0.0}}}, prompt.target_token);
    worst = std::max(worst, std::abs(ig[i] - (base - zeroed)));
  }
  return {worst <= 1e-3, fmt("%zu neurons, m = 300, max completeness gap %.3g (<= 1e-3)", neurons.size(), worst)};
}

// -- 5 ------------------------------------------------------------------------

Verdict attribution() {
  const auto& t = fixture();
  const auto t0 = Clock::now();
  const auto prompts = answered_prompts(t.params, t.tasks, t.tasks.test, {}, 200);
  const std::vector<int> ks{1, 4, 16};
  std::vector<int> wins(3, 0), losses(3, 0);
  for (const auto& [id, prompt] : prompts) {
    const PromptSession s(t.params, prompt);
    const auto est = estimate_all(s, prompt.target_token, id);
    for (std::size_t k = 0; k < ks.size(); ++k) {
      const std::uint64_t seed = mix_seed(505, static_cast<std::uint64_t>(id));
      const double ng = topk_enhance(s, prompt.target_token, plan_topk(est, RankMethod::neurgrad, ks[k], {0.5}, seed)).front();
      const double rnd = topk_enhance(s, prompt.target_token, plan_topk(est, RankMethod::random, ks[k], {0.5}, seed)).front();
      wins[k] += ng > rnd;
      losses[k] += ng < rnd;
    }
  }
  const double secs = seconds_since(t0);
  bool pass = prompts.size() == 200 && secs < 600.0;
  std::string detail = fmt("%zu prompts, %.1f s;", prompts.size(), secs);
  for (std::size_t k = 0; k < ks.size(); ++k) {
    const double pv = stats::sign_test_p(wins[k], losses[k]);
    pass = pass && wins[k] > losses[k] && pv < 0.01;
    detail += fmt(" K=%d %d/%d p=%.2g", ks[k], wins[k], losses[k], pv);
  }
  return {pass, detail};
}

// -- 6, 7 ---------------------------------------------------------------------

Verdict additivity() {
  const auto& t = fixture();
  const auto prompts = answered_prompts(t.params, t.tasks, t.tasks.test, {}, 50);
  const auto grid = shift_grid(0.0, 0.5, 0.01);
  std::vector<std::vector<double>> rs(9);
  for (const auto& [id, prompt] : prompts) {
    const PromptSession s(t.params, prompt);
    const auto est = estimate_all(s, prompt.target_token, id);
    for (int e = 0; e <= 8; ++e)
      rs[static_cast<std::size_t>(e)].push_back(
          multi_neuron_run(s, prompt.target_token, est, 1 << e, grid, mix_seed(606, static_cast<std::uint64_t>(id)))
              .r);
  }
  std::vector<double> med;
  for (auto& v : rs) med.push_back(stats::median(v));
  bool monotone = true;
  for (std::size_t i = 1; i < med.size(); ++i) monotone = monotone && med[i] <= med[i - 1];
  std::string series;
  for (double m : med) series += fmt(" %.6f", m);
  return {prompts.size() == 50 && med.front() >= 0.99 && monotone && med.back() >= 0.5,
          fmt("%zu prompts, median r by N = 2^0..2^8:", prompts.size()) + series +
              (monotone ? " (non-increasing)" : " (increases somewhere)")};
}

Verdict neg_distribution() {
  const auto& t = fixture();
  std::vector<double> all;
  for (const auto& [id, prompt] : answered_prompts(t.params, t.tasks, t.tasks.test, {}, 50))
    for (const auto& e : estimate_all(t.params, prompt, id)) all.push_back(e.neurgrad);
  const auto dist = cumulative_neg_distribution(all);
  bool one_only_at_end = true, half_only_past_mid = true;
  for (const auto& [q, v] : dist) {
    if (q < 100.0 && v >= 1.0) one_only_at_end = false;
    if (q <= 50.0 && v > 0.5) half_only_past_mid = false;
  }
  one_only_at_end = one_only_at_end && dist.back().first == 100.0 && std::abs(dist.back().second - 1.0) < 1e-12;
  double at50 = 0.0;
  for (const auto& [q, v] : dist)
    if (q <= 50.0) at50 = v;
  return {one_only_at_end && half_only_past_mid,
          fmt("%zu values; share at 50th pct %.3f, at 99th %.3f; top 1%% holds %.3f, top 10%% holds %.3f", all.size(),
              at50, dist[dist.size() - 2].second, top_share(all, 0.01), top_share(all, 0.10))};
}

// -- 8, 9 ---------------------------------------------------------------------

struct BinaryTables {
  FeatureTable train, valid, test;
};

const BinaryTables& tables() {
  static const BinaryTables b = [] {
    const auto& t = fixture();
    return BinaryTables{extract_features(t.params, t.tasks, t.tasks.train), extract_features(t.params, t.tasks, t.tasks.valid),
                        extract_features(t.params, t.tasks, t.tasks.test)};
  }();
  return b;
}

Verdict probing() {
  const auto& b = tables();
  const auto t0 = Clock::now();
  ForestOptions fo;
  fo.seed = 808;
  const auto suite = train_suite(b.train, b.valid, fo);
  const double secs = seconds_since(t0);
  const auto sc = score_suite(suite, b.test, "copy-match");
  const bool pass = sc.lm_prob >= 0.9 && sc.magn >= sc.rand + 0.15 && sc.polar >= sc.rand + 0.15 &&
                    sc.tree >= std::max(sc.polar, sc.magn) - 0.02 && secs < 900.0;
  return {pass, fmt("LM-Prob %.3f, Rand %.3f, Polar %.3f (size %d), Magn %.3f (size %d), Tree %.3f, Act %.3f; "
                    "training with size search %.1f s",
                    sc.lm_prob, sc.rand, sc.polar, sc.polar_size, sc.magn, sc.magn_size, sc.tree, sc.act, secs)};
}

Verdict polarity() {
  const auto po = polarity_opposition(tables().test);
  return {po.neuron_correlation <= -0.9,
          fmt("corr across neurons %.4f (<= -0.9); pooled %.4f; opposite-sign fraction %.3f", po.neuron_correlation,
              po.correlation, po.opposite_fraction)};
}

// -- 10, 11, 12 ---------------------------------------------------------------

Verdict forest_oracle() {
  const int bad = testing::stump_oracle_mismatches(200, 1010);
  return {bad == 0, fmt("%d/200 cases differ from the exhaustive best-Gini stump", bad)};
}

Verdict balance_and_splits() {
  std::mt19937_64 rng(1111);
  const TaskKind kinds[] = {TaskKind::parity, TaskKind::lexicon_lookup, TaskKind::copy_match};
  int ok = 0;
  for (int i = 0; i < 50; ++i) {
    TaskGenSpec spec;
    spec.kind = kinds[rng() % 3];
    spec.n_options = 2 + static_cast<int>(rng() % 4);
    spec.n_examples = 8 * spec.n_options * (1 + static_cast<int>(rng() % 20));
    spec.seed = rng();
    const TaskSet ts = generate_synthetic(spec);
    // counted here, independently of the library's own checks
    bool good = static_cast<int>(ts.size()) == spec.n_examples &&
                ts.train.size() == 6 * ts.valid.size() && ts.valid.size() == ts.test.size();
    for (const auto* split : {&ts.train, &ts.valid, &ts.test}) {
      std::vector<std::size_t> counts(static_cast<std::size_t>(spec.n_options), 0);
      for (const auto& task : *split) ++counts.at(static_cast<std::size_t>(task.correct));
      for (std::size_t c : counts) good = good && c * static_cast<std::size_t>(spec.n_options) == split->size();
    }
    ok += good;
  }
  return {ok == 50, fmt("%d/50 random specs balanced with a 6:1:1 split", ok)};
}

Verdict algebra() {
  int bad = 0;
  // uniform over 4 layers
  auto [c1, d1] = coverage_distribution({5, 5, 5, 5});
  bad += c1 != 1.0 || d1 != 1.0;
  // everything in one of 4 layers
  auto [c2, d2] = coverage_distribution({0, 0, 12, 0});
  bad += c2 != 0.25 || d2 != 0.0;
  bad += robustness_value(0.83, 0.83, 0.5).value_or(-1) != 1.0;
  bad += robustness_value(0.5, 0.9, 0.5).value_or(-1) != 0.0;
  bad += robustness_value(0.2, 0.9, 0.25).value_or(-1) != 0.0;
  return {bad == 0, fmt("%d of 5 exact cases wrong (uniform, single bin, X = Y, chance, below chance)", bad)};
}

// -- 13 -----------------------------------------------------------------------

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / ("neglab_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root / "inputs");
  const auto& t = fixture();
  const std::string model = (root / "inputs" / "model.bin").string();
  const std::string tasks = (root / "inputs" / "tasks.jsonl").string();
  save_params(t.params, model);
  export_tasks(t.tasks, tasks);
  const std::vector<std::string> in{"--model", model, "--tasks", tasks};
  auto with = [&](std::vector<std::string> a, bool inputs = true) {
    if (inputs) a.insert(a.end(), in.begin(), in.end());
    return a;
  };
  const std::vector<std::vector<std::string>> commands{
      {"gen-tasks", "--kind", "parity", "--options", "3", "--examples", "240"},
      {"train", "--steps", "15", "--examples", "160", "--d-ff", "64"},
      with({"sweep", "--prompts", "4", "--neurons", "10"}),
      with({"estimate", "--prompts", "2", "--ig-steps", "4"}),
      with({"eval-estimators", "--prompts", "4", "--neurons", "10", "--ig-steps", "4"}),
      with({"attribute", "--prompts", "6", "--methods", "cg,ig,neurgrad,random", "--ig-steps", "4"}),
      with({"multi", "--prompts", "3", "--max-exp", "5"}),
      with({"probe", "--n-trees", "10"}),
      with({"metrics", "--which", "robustness,substitutability,trees", "--cap", "4", "--max-train", "48"}),
  };
  std::ostringstream sink;
  int compared = 0;
  std::vector<std::string> differing;
  std::vector<std::string> run_dirs;
  auto run_twice = [&](const std::vector<std::string>& args) {
    std::vector<std::string> full{"--seed", "13", "--out", (root / "runs").string()};
    full.insert(full.end(), args.begin(), args.end());
    const auto a = cli::run(full, sink, sink);
    const auto b = cli::run(full, sink, sink);
    if (a.exit_code != 0 || b.exit_code != 0) {
      differing.push_back(args.front() + " (exit " + std::to_string(a.exit_code) + "/" + std::to_string(b.exit_code) + ")");
      return;
    }
    run_dirs.push_back(a.run_dir);
    for (const auto& e : fs::directory_iterator(a.run_dir)) {
      if (e.path().extension() != ".csv") continue;
      const fs::path other = fs::path(b.run_dir) / e.path().filename();
      ++compared;
      if (!fs::exists(other) || cli::sha256_file(e.path()) != cli::sha256_file(other))
        differing.push_back(args.front() + "/" + e.path().filename().string());
    }
  };
  for (const auto& c : commands) run_twice(c);
  // report reads the runs above; a fresh directory per call keeps both
  // report runs seeing the same inputs
  fs::create_directories(root / "collected");
  for (const auto& d : run_dirs) fs::copy(d, root / "collected" / fs::path(d).filename(), fs::copy_options::recursive);
  run_twice({"report", "--from", (root / "collected").string()});
  fs::remove_all(root);
  std::string detail = fmt("%zu subcommands run twice, %d CSVs compared", commands.size() + 1, compared);
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty() && compared > 0, detail};
}

}  // namespace

int main() {
  std::cout << "neglab acceptance (fixture model: copy-match, 2 options)" << std::endl;
  report(1, "gradient correctness", gradient_correctness);
  report(2, "local linearity", local_linearity);
  report(3, "NeurGrad fidelity", neurgrad_fidelity);
  report(4, "IG completeness", ig_completeness);
  report(5, "attribution vs random", attribution);
  report(6, "multi-neuron additivity", additivity);
  report(7, "NEG distribution", neg_distribution);
  report(8, "probing", probing);
  report(9, "polarity opposition", polarity);
  report(10, "random-forest oracle", forest_oracle);
  report(11, "balance and splits", balance_and_splits);
  report(12, "generality and robustness algebra", algebra);
  report(13, "determinism", determinism);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
