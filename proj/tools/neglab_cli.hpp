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

// neglab command-line front end. Every invocation creates a fresh run
// directory under the output root, writes its results there, and writes
// manifest.json last.

#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "neglab/control.hpp"
#include "neglab/csv.hpp"
#include "neglab/estimators.hpp"
#include "neglab/intervene.hpp"
#include "neglab/metrics.hpp"
#include "neglab/model_io.hpp"
#include "neglab/parallel.hpp"
#include "neglab/probes.hpp"
#include "neglab/tasks.hpp"
#include "neglab/train.hpp"

namespace neglab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kManifestVersion = 1;

inline std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string utc_stamp(std::chrono::system_clock::time_point t, const char* fmt) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

/// Module-level failure with a structured report.
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One run directory: outputs, inputs and checks, then the manifest.
class Run {
 public:
  Run(const std::string& root, const std::string& command) : command_(command), start_(std::chrono::system_clock::now()) {
    fs::create_directories(root);
    const std::string stem = utc_stamp(start_, "%Y%m%dT%H%M%SZ") + "-" + command;
    for (int k = 1;; ++k) {
      fs::path p = fs::path(root) / (k == 1 ? stem : stem + "-" + std::to_string(k));
      if (fs::create_directory(p)) {
        dir_ = p;
        break;
      }
    }
  }

  const fs::path& dir() const { return dir_; }
  std::string path(const std::string& file) {
    outputs_.push_back(file);
    return (dir_ / file).string();
  }
  void input(const std::string& p) { inputs_.push_back(p); }
  void check(const std::string& name, bool passed, const std::string& detail = "") {
    checks_.push_back({{"name", name}, {"passed", passed}, {"detail", detail}});
    if (!passed) failed_.push_back(name);
  }
  void warn(const std::string& w) { warnings_.push_back(w); }
  const std::vector<std::string>& failed() const { return failed_; }

  void write_manifest(const json& config, std::uint64_t seed, const std::string& status, const json& error = nullptr) {
    json m{{"format", "neglab-manifest"},
           {"version", kManifestVersion},
           {"command", command_},
           {"seed", seed},
           {"config", config},
           {"started_utc", utc_stamp(start_, "%Y-%m-%dT%H:%M:%SZ")},
           {"wall_clock_s",
            std::chrono::duration<double>(std::chrono::system_clock::now() - start_).count()},
           {"formats", {{"tasks", kTaskFormatVersion}, {"model", kModelFormatVersion}, {"probe", 1}}},
           {"status", status},
           {"checks", checks_},
           {"warnings", warnings_}};
    json ins = json::array();
    for (const auto& p : inputs_) ins.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    m["inputs"] = ins;
    json outs = json::array();
    for (const auto& f : outputs_) {
      const fs::path p = dir_ / f;
      if (!fs::exists(p)) continue;
      outs.push_back({{"file", f}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}});
    }
    m["outputs"] = outs;
    if (!error.is_null()) m["error"] = error;
    std::ofstream(dir_ / "manifest.json") << m.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::chrono::system_clock::time_point start_;
  fs::path dir_;
  std::vector<std::string> outputs_, inputs_;
  json checks_ = json::array();
  std::vector<std::string> failed_, warnings_;
};

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
};

struct ContextFlags {
  int instruction = 0;
  int shots = 0;  // 0 or the option count
  int demo_set = 0;
  int style = 0;
  std::string split = "test";

  RenderContext context(int n_options) const {
    if (shots != 0 && shots != n_options)
      throw InputError("--shots must be 0 or the option count (" + std::to_string(n_options) + ")");
    return {instruction, shots ? demo_set : -1, style};
  }
};

struct ModelInputs {
  std::string model;
  std::string tasks;
};

inline void add_context(CLI::App* c, ContextFlags& f) {
  c->add_option("--instruction", f.instruction, "instruction variant")->check(CLI::Range(0, vocab::kInstructionVariants - 1));
  c->add_option("--shots", f.shots, "demonstrations: 0 or the option count");
  c->add_option("--demo-set", f.demo_set, "demonstration set id")->check(CLI::NonNegativeNumber);
  c->add_option("--style", f.style, "answer-token style")->check(CLI::Range(0, vocab::kStyles - 1));
  c->add_option("--split", f.split, "task split")->check(CLI::IsMember({"train", "valid", "test"}));
}

inline void add_inputs(CLI::App* c, ModelInputs& in) {
  c->add_option("--model", in.model, "model file")->required()->check(CLI::ExistingFile);
  c->add_option("--tasks", in.tasks, "task file (JSON Lines)")->required()->check(CLI::ExistingFile);
}

inline const std::vector<ChoiceTask>& split_of(const TaskSet& ts, const std::string& name) {
  if (name == "train") return ts.train;
  if (name == "valid") return ts.valid;
  return ts.test;
}

inline PatchMode mode_from_string(const std::string& s) {
  if (s == "absolute") return PatchMode::absolute_delta;
  if (s == "sign_relative") return PatchMode::sign_relative_delta;
  throw InputError("unknown mode " + s);
}

/// `n` distinct neurons drawn with a seeded partial shuffle, in (layer, neuron) order.
inline std::vector<NeuronId> sample_neurons(const ModelConfig& cfg, int n, std::uint64_t seed) {
  const int total = cfg.total_neurons();
  std::vector<int> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), 0);
  const int k = n <= 0 ? total : std::min(n, total);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, total - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  std::vector<NeuronId> out;
  for (int f : idx) out.push_back({f / cfg.d_ff, f % cfg.d_ff});
  return out;
}

struct Loaded {
  Params params;
  TaskSet tasks;
  std::string task_name;
};

inline Loaded load_inputs(const ModelInputs& in, Run& run) {
  auto ingested = ingest_tasks(in.tasks);
  for (const auto& w : ingested.warnings) run.warn(in.tasks + ": " + w);
  Loaded l{load_params(in.model), std::move(ingested.tasks), fs::path(in.tasks).stem().string()};
  run.input(in.model);
  run.input(in.tasks);
  if (l.tasks.n_options < 2) throw InputError("task file has no usable tasks");
  return l;
}

inline std::vector<std::pair<int, Prompt>> pick_prompts(const Loaded& l, const ContextFlags& cf, int limit) {
  const auto ctx = cf.context(l.tasks.n_options);
  auto p = answered_prompts(l.params, l.tasks, split_of(l.tasks, cf.split), ctx, static_cast<std::size_t>(std::max(limit, 0)));
  if (p.empty()) throw InputError("the model answers none of the selected tasks correctly");
  return p;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string tasks;
  std::string kind = "copy-match";
  int options = 2;
  int examples = 1600;
  int layers = 4, d_model = 64, d_ff = 256, heads = 4, max_seq = 64;
  std::string nonlinearity = "gelu";
  std::int64_t steps = 300;
  double lr = 3e-3;
  int batch = 16;
  int warmup = 50;
  double smoothing = 0.1;
  std::string smoothing_support = "candidates";
  double few_shot_rate = 0.5;
};

inline void cmd_train(const TrainFlags& f, const Common& c, Run& run) {
  TaskSet ts;
  if (!f.tasks.empty()) {
    auto ingested = ingest_tasks(f.tasks);
    for (const auto& w : ingested.warnings) run.warn(f.tasks + ": " + w);
    ts = std::move(ingested.tasks);
    run.input(f.tasks);
  } else {
    TaskGenSpec spec;
    spec.kind = task_kind_from_string(f.kind);
    spec.n_options = f.options;
    spec.n_examples = f.examples;
    spec.seed = c.seed;
    ts = generate_synthetic(spec);
  }
  ModelConfig cfg;
  cfg.n_layers = f.layers;
  cfg.d_model = f.d_model;
  cfg.d_ff = f.d_ff;
  cfg.n_heads = f.heads;
  cfg.max_seq = f.max_seq;
  cfg.nonlinearity = f.nonlinearity == "relu" ? Nonlinearity::relu : Nonlinearity::gelu;
  cfg.seed = c.seed;
  TrainOptions opt;
  opt.steps = f.steps;
  opt.learning_rate = f.lr;
  opt.batch_size = f.batch;
  opt.warmup_steps = f.warmup;
  opt.label_smoothing = f.smoothing;
  opt.smoothing_support = f.smoothing_support == "vocabulary" ? SmoothingSupport::vocabulary : SmoothingSupport::candidates;
  opt.seed = c.seed;
  auto [params, rep] = train_on_tasks(ts, cfg, opt, f.few_shot_rate);

  const std::string model_path = run.path("model.bin");
  save_params(params, model_path);
  run.path("model.bin.cfg");
  export_tasks(ts, run.path("tasks.jsonl"));
  {
    csv::Writer w(run.path("train_loss.csv"), {"step", "loss"});
    for (std::size_t i = 0; i < rep.losses.size(); ++i) w.row({static_cast<long long>(i + 1), rep.losses[i]});
  }
  {
    csv::Writer w(run.path("train_summary.csv"), {"steps", "final_loss", "heldout_accuracy"});
    w.row({static_cast<long long>(f.steps), rep.final_loss, rep.heldout_accuracy});
  }
  bool finite = true;
  for (double l : rep.losses) finite = finite && std::isfinite(l);
  run.check("finite_loss", finite);
  const Params back = load_params(model_path);
  run.check("model_reloads", back.config == params.config);
}

struct GenFlags {
  std::string kind = "copy-match";
  int options = 2;
  int examples = 1600;
  int query_length = 6;
};

inline void cmd_gen_tasks(const GenFlags& f, const Common& c, Run& run) {
  TaskGenSpec spec;
  spec.kind = task_kind_from_string(f.kind);
  spec.n_options = f.options;
  spec.n_examples = f.examples;
  spec.query_length = f.query_length;
  spec.seed = c.seed;
  const TaskSet ts = generate_synthetic(spec);
  export_tasks(ts, run.path("tasks.jsonl"));
  csv::Writer w(run.path("balance.csv"), {"split", "option", "count"});
  const std::pair<const char*, const std::vector<ChoiceTask>*> splits[] = {
      {"train", &ts.train}, {"valid", &ts.valid}, {"test", &ts.test}};
  bool balanced = true;
  for (const auto& [name, s] : splits) {
    const auto counts = class_counts(*s, ts.n_options);
    for (std::size_t j = 0; j < counts.size(); ++j)
      w.row({std::string(name), static_cast<long long>(j), static_cast<long long>(counts[j])});
    balanced = balanced && is_balanced(*s, ts.n_options);
  }
  run.check("balanced", balanced);
  run.check("split_6_1_1", has_611_split(ts));
}

struct SweepFlags {
  ModelInputs in;
  ContextFlags ctx;
  int prompts = 20;
  int neurons = 50;
  double lo = -2.0, hi = 2.0, step = 0.2, window = 2.0, threshold = 0.95;
  std::string mode = "sign_relative";
};

struct SweepOutput {
  std::vector<SweepCurve> curves;
  std::vector<NegRecord> records;
};

inline SweepOutput run_sweeps(const Loaded& l, const std::vector<std::pair<int, Prompt>>& prompts, int neurons,
                              const SweepSpec& spec, double threshold, std::uint64_t seed, int jobs) {
  std::vector<SweepOutput> per(prompts.size());
  parallel_for(prompts.size(), jobs, [&](std::size_t i) {
    const auto& [id, prompt] = prompts[i];
    const PromptSession s(l.params, prompt);
    for (const NeuronId n : sample_neurons(l.params.config, neurons, mix_seed(seed, static_cast<std::uint64_t>(id)))) {
      per[i].curves.push_back(sweep(s, n, prompt.target_token, spec, id));
      per[i].records.push_back(fit_neg(per[i].curves.back(), spec.fit_window, threshold));
    }
  });
  SweepOutput out;
  for (auto& p : per) {
    out.curves.insert(out.curves.end(), p.curves.begin(), p.curves.end());
    out.records.insert(out.records.end(), p.records.begin(), p.records.end());
  }
  return out;
}

inline void cmd_sweep(const SweepFlags& f, const Common& c, Run& run) {
  const Loaded l = load_inputs(f.in, run);
  const SweepSpec spec{f.lo, f.hi, f.step, f.window, mode_from_string(f.mode)};
  spec.validate();
  const auto prompts = pick_prompts(l, f.ctx, f.prompts);
  const auto out = run_sweeps(l, prompts, f.neurons, spec, f.threshold, c.seed, c.jobs);
  write_sweeps_csv(run.path("sweeps.csv"), out.curves);
  write_neg_records_csv(run.path("neg_records.csv"), out.records);
  const auto st = aggregate_stats(out.records, l.params.config.n_layers);
  {
    csv::Writer w(run.path("linearity_summary.csv"),
                  {"n_records", "linear_ratio", "positive_ratio", "negative_ratio", "null_ratio", "coverage_layer",
                   "distribution_layer", "LG", "coverage_prompt", "distribution_prompt", "PG"});
    const auto& g = st.generality;
    w.row({static_cast<long long>(st.n_records), st.linear_ratio, st.positive_ratio, st.negative_ratio, st.null_ratio,
           g.coverage_layer, g.distribution_layer, g.LG, g.coverage_prompt, g.distribution_prompt, g.PG});
  }
  {
    std::vector<double> windows;
    for (double w : {0.5, 1.0, 2.0, 5.0, 10.0})
      if (w <= std::min(-f.lo, f.hi) + 1e-12 && w / f.step >= 1.0 - 1e-9) windows.push_back(w);
    csv::Writer w(run.path("window_profile.csv"), {"window", "mean_abs_r"});
    if (!windows.empty()) {
      const auto prof = window_correlation_profile(out.curves, windows);
      for (std::size_t i = 0; i < windows.size(); ++i) w.row({windows[i], prof[i]});
    }
  }
  run.check("polarity_ratios_sum_to_one",
            std::abs(st.positive_ratio + st.negative_ratio + st.null_ratio - 1.0) < 1e-12);
  const auto& g = st.generality;
  run.check("generality_in_unit_interval", g.LG >= 0 && g.LG <= 1 && g.PG >= 0 && g.PG <= 1);
}

struct EstimateFlags {
  ModelInputs in;
  ContextFlags ctx;
  int prompts = 20;
  int ig_steps = 0;
};

inline void cmd_estimate(const EstimateFlags& f, const Common& c, Run& run) {
  const Loaded l = load_inputs(f.in, run);
  const auto prompts = pick_prompts(l, f.ctx, f.prompts);
  std::vector<std::vector<GradientEstimate>> per(prompts.size());
  parallel_for(prompts.size(), c.jobs, [&](std::size_t i) {
    const auto& [id, prompt] = prompts[i];
    const PromptSession s(l.params, prompt);
    per[i] = estimate_all(s, prompt.target_token, id);
    if (f.ig_steps > 0)
      for (auto& e : per[i]) e.ig = estimate_ig(s, prompt.target_token, e.neuron, f.ig_steps);
  });
  std::vector<GradientEstimate> all;
  for (auto& p : per) all.insert(all.end(), p.begin(), p.end());
  write_estimates_csv(run.path("estimates.csv"), all);
  bool ok = true;
  for (const auto& e : all) ok = ok && e.neurgrad == neurgrad_of(e.cg, e.activation) && std::isfinite(e.cg);
  run.check("neurgrad_is_signed_cg", ok);
}

struct EvalFlags {
  ModelInputs in;
  ContextFlags ctx;
  int prompts = 20;
  int neurons = 50;
  int ig_steps = 0;
  double lo = -2.0, hi = 2.0, step = 0.2, window = 2.0;
  std::string mode = "sign_relative";
  bool timing = false;
};

inline void cmd_eval_estimators(const EvalFlags& f, const Common& c, Run& run) {
  const Loaded l = load_inputs(f.in, run);
  const SweepSpec spec{f.lo, f.hi, f.step, f.window, mode_from_string(f.mode)};
  spec.validate();
  const auto prompts = pick_prompts(l, f.ctx, f.prompts);
  const auto sw = run_sweeps(l, prompts, f.neurons, spec, 0.95, c.seed, c.jobs);
  std::vector<std::vector<GradientEstimate>> per(prompts.size());
  parallel_for(prompts.size(), c.jobs, [&](std::size_t i) {
    const auto& [id, prompt] = prompts[i];
    const PromptSession s(l.params, prompt);
    const auto all = estimate_all(s, prompt.target_token, id);
    for (const NeuronId n : sample_neurons(l.params.config, f.neurons, mix_seed(c.seed, static_cast<std::uint64_t>(id)))) {
      GradientEstimate e = all[static_cast<std::size_t>(n.layer) * static_cast<std::size_t>(l.params.config.d_ff) +
                               static_cast<std::size_t>(n.neuron)];
      if (f.ig_steps > 0) e.ig = estimate_ig(s, prompt.target_token, n, f.ig_steps);
      per[i].push_back(e);
    }
  });
  std::vector<GradientEstimate> est;
  for (auto& p : per) est.insert(est.end(), p.begin(), p.end());

  std::map<std::string, double> runtimes;
  if (f.timing) {
    const Prompt& p = prompts.front().second;
    runtimes["cg"] = median_runtime([&] { PromptSession(l.params, p).gradient(p.target_token); });
    runtimes["neurgrad"] = median_runtime([&] { estimate_all(l.params, p); });
    if (f.ig_steps > 0) {
      const auto ns = sample_neurons(l.params.config, f.neurons, c.seed);
      runtimes["ig"] = median_runtime([&] { estimate_ig(PromptSession(l.params, p), p.target_token, ns, f.ig_steps); }, 1, 3);
    }
  }
  const auto rep = evaluate_estimators(sw.records, est, runtimes);
  write_estimator_report_csv(run.path("estimator_report.csv"), rep);
  {
    csv::Writer w(run.path("estimator_pairs.csv"), {"prompt_id", "layer", "neuron", "slope", "r", "cg", "neurgrad", "ig"});
    for (std::size_t i = 0; i < est.size(); ++i) {
      const auto& t = sw.records[i];
      const auto& e = est[i];
      w.row({static_cast<long long>(t.prompt_id), static_cast<long long>(t.neuron.layer),
             static_cast<long long>(t.neuron.neuron), t.slope, t.r, e.cg, e.neurgrad,
             e.ig ? csv::Field{*e.ig} : csv::Field{std::string{}}});
    }
  }
  bool aligned = sw.records.size() == est.size();
  for (std::size_t i = 0; aligned && i < est.size(); ++i)
    aligned = sw.records[i].prompt_id == est[i].prompt_id && sw.records[i].neuron == est[i].neuron;
  run.check("pairs_aligned", aligned);
}

struct AttributeFlags {
  ModelInputs in;
  ContextFlags ctx;
  int prompts = 200;
  std::vector<int> k{1, 4, 16};
  double delta = 0.5;
  std::vector<std::string> methods{"cg", "neurgrad", "random"};
  int ig_steps = 50;
  std::string mode = "sign_relative";
};

inline void cmd_attribute(const AttributeFlags& f, const Common& c, Run& run) {
  const Loaded l = load_inputs(f.in, run);
  const auto prompts = pick_prompts(l, f.ctx, f.prompts);
  std::vector<RankMethod> methods;
  for (const auto& m : f.methods) methods.push_back(rank_method_from_string(m));
  const PatchMode mode = mode_from_string(f.mode);
  const bool need_ig = std::find(methods.begin(), methods.end(), RankMethod::ig) != methods.end();
  if (need_ig && f.ig_steps < 1) throw InputError("--ig-steps must be >= 1 for the ig ranking");
  // per prompt: value[method][k]
  std::vector<std::vector<std::vector<double>>> per(prompts.size());
  parallel_for(prompts.size(), c.jobs, [&](std::size_t i) {
    const auto& [id, prompt] = prompts[i];
    const PromptSession s(l.params, prompt);
    const auto est = estimate_all(s, prompt.target_token, id);
    std::vector<double> ig;
    if (need_ig) {
      std::vector<NeuronId> ids;
      for (const auto& e : est) ids.push_back(e.neuron);
      ig = estimate_ig(s, prompt.target_token, ids, f.ig_steps);
    }
    for (const RankMethod m : methods) {
      per[i].emplace_back();
      for (int k : f.k) {
        const auto plan = plan_topk(est, m, k, {f.delta}, mix_seed(c.seed, static_cast<std::uint64_t>(id)),
                                    need_ig ? &ig : nullptr, mode);
        per[i].back().push_back(topk_enhance(s, prompt.target_token, plan).front());
      }
    }
  });
  {
    csv::Writer w(run.path("attribution.csv"), {"prompt_id", "method", "k", "delta", "delta_prob"});
    for (std::size_t i = 0; i < prompts.size(); ++i)
      for (std::size_t m = 0; m < methods.size(); ++m)
        for (std::size_t k = 0; k < f.k.size(); ++k)
          w.row({static_cast<long long>(prompts[i].first), to_string(methods[m]), static_cast<long long>(f.k[k]), f.delta,
                 per[i][m][k]});
  }
  const auto rnd = std::find(methods.begin(), methods.end(), RankMethod::random);
  csv::Writer w(run.path("attribution_summary.csv"),
                {"method", "k", "mean_delta_prob", "wins_vs_random", "losses_vs_random", "sign_test_p"});
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (std::size_t k = 0; k < f.k.size(); ++k) {
      double mean = 0.0;
      int wins = 0, losses = 0;
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        mean += per[i][m][k] / static_cast<double>(prompts.size());
        if (rnd != methods.end()) {
          const double r = per[i][static_cast<std::size_t>(rnd - methods.begin())][k];
          wins += per[i][m][k] > r;
          losses += per[i][m][k] < r;
        }
      }
      if (rnd == methods.end() || methods[m] == RankMethod::random)
        w.row({to_string(methods[m]), static_cast<long long>(f.k[k]), mean, std::string{}, std::string{}, std::string{}});
      else
        w.row({to_string(methods[m]), static_cast<long long>(f.k[k]), mean, static_cast<long long>(wins),
               static_cast<long long>(losses), stats::sign_test_p(wins, losses)});
    }
  bool finite = true;
  for (const auto& p : per)
    for (const auto& m : p)
      for (double v : m) finite = finite && std::isfinite(v);
  run.check("finite_shifts", finite);
}

struct MultiFlags {
  ModelInputs in;
  ContextFlags ctx;
  int prompts = 50;
  int max_exp = 8;
  double lo = 0.0, hi = 0.5, step = 0.01;
  std::string mode = "sign_relative";
};

inline void cmd_multi(const MultiFlags& f, const Common& c, Run& run) {
  const Loaded l = load_inputs(f.in, run);
  const auto prompts = pick_prompts(l, f.ctx, f.prompts);
  const auto grid = shift_grid(f.lo, f.hi, f.step);
  const PatchMode mode = mode_from_string(f.mode);
  std::vector<int> sizes;
  for (int e = 0; e <= f.max_exp && (1 << e) <= l.params.config.total_neurons(); ++e) sizes.push_back(1 << e);
  std::vector<std::vector<AdditivityResult>> per(prompts.size());
  std::vector<std::vector<double>> values(prompts.size());
  parallel_for(prompts.size(), c.jobs, [&](std::size_t i) {
    const auto& [id, prompt] = prompts[i];
    const PromptSession s(l.params, prompt);
    const auto est = estimate_all(s, prompt.target_token, id);
    for (const auto& e : est) values[i].push_back(e.neurgrad);
    for (int n : sizes)
      per[i].push_back(multi_neuron_run(s, prompt.target_token, est, n, grid,
                                        mix_seed(mix_seed(c.seed, static_cast<std::uint64_t>(id)), static_cast<std::uint64_t>(n)),
                                        mode));
  });
  {
    csv::Writer w(run.path("multi_neuron.csv"), {"prompt_id", "n_neurons", "r", "r_defined", "predicted_at_max", "actual_at_max"});
    for (std::size_t i = 0; i < prompts.size(); ++i)
      for (const auto& r : per[i])
        w.row({static_cast<long long>(prompts[i].first), static_cast<long long>(r.n_neurons), r.r,
               static_cast<long long>(r.r_defined), r.predicted.back(), r.actual.back()});
  }
  std::vector<double> medians;
  {
    csv::Writer w(run.path("multi_summary.csv"), {"n_neurons", "median_r"});
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      std::vector<double> rs;
      for (const auto& p : per) rs.push_back(p[k].r);
      medians.push_back(stats::median(rs));
      w.row({static_cast<long long>(sizes[k]), medians.back()});
    }
  }
  std::vector<double> all;
  for (const auto& v : values) all.insert(all.end(), v.begin(), v.end());
  const auto dist = cumulative_neg_distribution(all);
  {
    csv::Writer w(run.path("neg_distribution.csv"), {"percentile", "cumulative_share"});
    for (const auto& [q, v] : dist) w.row({q, v});
  }
  {
    csv::Writer w(run.path("neg_concentration.csv"), {"top_fraction", "share"});
    for (double frac : {0.01, 0.1, 0.5}) w.row({frac, top_share(all, frac)});
  }
  bool zero_start = true;
  for (const auto& p : per)
    for (const auto& r : p)
      if (r.grid.front() == 0.0) zero_start = zero_start && r.predicted.front() == 0.0;
  run.check("zero_shift_predicts_zero", zero_start);
  run.check("distribution_ends_at_one", std::abs(dist.back().second - 1.0) < 1e-12);
}

struct ProbeFlags {
  ModelInputs in;
  ContextFlags ctx;
  std::string task_name;
  int n_trees = 100;
  int max_depth = 0;
};

inline void cmd_probe(const ProbeFlags& f, const Common& c, Run& run) {
  const Loaded l = load_inputs(f.in, run);
  const auto ctx = f.ctx.context(l.tasks.n_options);
  const auto train = extract_features(l.params, l.tasks, l.tasks.train, ctx, c.jobs);
  const auto valid = extract_features(l.params, l.tasks, l.tasks.valid, ctx, c.jobs);
  const auto test = extract_features(l.params, l.tasks, l.tasks.test, ctx, c.jobs);
  ForestOptions fo;
  fo.n_trees = f.n_trees;
  fo.max_depth = f.max_depth;
  fo.seed = c.seed;
  const auto suite = train_suite(train, valid, fo, c.jobs);
  const auto scores = score_suite(suite, test, f.task_name.empty() ? l.task_name : f.task_name);
  write_probe_scores_csv(run.path("probe_scores.csv"), {scores});
  write_size_search_csv(run.path("size_search.csv"), suite);
  for (const auto* p : {&suite.polar, &suite.magn, &suite.act}) {
    std::ofstream os(run.path(to_string(p->kind) + ".jsonl"));
    write_probe(*p, os);
  }
  {
    std::ofstream os(run.path("tree.jsonl"));
    write_forest(suite.tree.forest, os, {{"n_layers", suite.tree.n_layers}, {"d_ff", suite.tree.d_ff}});
  }
  if (test.n_candidates == 2) {
    const auto po = polarity_opposition(test);
    csv::Writer w(run.path("opposition.csv"), {"opposite_fraction", "pooled_correlation", "neuron_correlation"});
    w.row({po.opposite_fraction, po.correlation, po.neuron_correlation});
  }
  {
    RenderContext zero = ctx, few = ctx;
    zero.demo_set = -1;
    few.demo_set = std::max(f.ctx.demo_set, 0);
    const double mz = ctx == zero ? mean_abs_neurgrad(test) : mean_abs_neurgrad(extract_features(l.params, l.tasks, l.tasks.test, zero, c.jobs));
    const double mf = ctx == few ? mean_abs_neurgrad(test) : mean_abs_neurgrad(extract_features(l.params, l.tasks, l.tasks.test, few, c.jobs));
    csv::Writer w(run.path("magnitude.csv"), {"zero_shot_mean_abs", "few_shot_mean_abs", "ratio"});
    w.row({mz, mf, mz > 0.0 ? csv::Field{mf / mz} : csv::Field{std::string{}}});
  }
  auto in_unit = [](double a) { return a >= 0.0 && a <= 1.0; };
  run.check("accuracies_in_unit_interval",
            in_unit(scores.polar) && in_unit(scores.magn) && in_unit(scores.act) && in_unit(scores.tree) && in_unit(scores.lm_prob));
  const auto pred = predict_all(suite.magn, test);
  double right = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) right += pred[i] == test.correct[i];
  run.check("accuracy_rescored", right / static_cast<double>(pred.size()) == scores.magn);
}

struct MetricsFlags {
  ModelInputs in;
  std::vector<std::string> which{"robustness", "substitutability", "trees"};
  int neurons = 32;
  int window = 64;
  int cap = 10;
  int max_train = 0;
  std::string family = "magn";
};

inline void cmd_metrics(const MetricsFlags& f, const Common& c, Run& run) {
  const Loaded l = load_inputs(f.in, run);
  auto wants = [&](const char* w) { return std::find(f.which.begin(), f.which.end(), w) != f.which.end(); };
  if (wants("robustness")) {
    RobustnessOptions ro;
    ro.family = probe_kind_from_string(f.family);
    ro.n_neurons = f.neurons;
    ro.max_train = f.max_train;
    ro.jobs = c.jobs;
    const auto r = robustness_matrix(l.params, l.tasks, default_contexts(), ro);
    write_robustness_csv(run.path("robustness.csv"), r);
    csv::Writer w(run.path("robustness_axes.csv"), {"axis", "median"});
    for (const char* axis : {"instruction", "demonstration", "style"}) {
      const auto m = axis_median(r, axis);
      w.row({std::string(axis), m ? csv::Field{*m} : csv::Field{std::string{}}});
    }
    bool diag = true;
    for (std::size_t y = 0; y < r.contexts.size(); ++y) {
      const auto& cell = r.at(static_cast<int>(y), static_cast<int>(y));
      diag = diag && (!cell.defined || cell.value == 1.0) && cell.defined == (cell.acc > r.alpha);
    }
    run.check("robustness_diagonal", diag);
  }
  if (wants("substitutability") || wants("trees")) {
    const auto train = extract_features(l.params, l.tasks, l.tasks.train, {}, c.jobs);
    const auto test = extract_features(l.params, l.tasks, l.tasks.test, {}, c.jobs);
    if (wants("substitutability")) {
      const auto s = substitutability_sweep(train_magn(train), test, f.window);
      write_substitutability_csv(run.path("substitutability.csv"), s);
      int covered = 0;
      bool contiguous = true;
      for (const auto& w : s.windows) {
        contiguous = contiguous && w.first_rank == covered;
        covered = w.last_rank;
      }
      run.check("windows_partition_ranking", contiguous && covered == train.n_neurons());
    }
    if (wants("trees")) {
      ForestOptions base;
      base.seed = c.seed;
      const auto grid = tree_grid(f.cap);
      const auto cells = tree_hyperparam_sweep(train, test, grid, base, c.jobs);
      write_tree_surface_csv(run.path("tree_surface.csv"), cells);
      run.check("grid_respects_cap", cells.size() == static_cast<std::size_t>(f.cap * (f.cap + 1) / 2));
    }
  }
}

// -- report ------------------------------------------------------------------

struct ReportFlags {
  std::string from;
};

inline std::vector<std::string> column_values(const csv::Table& t, const std::string& name) {
  const int c = t.column(name);
  if (c < 0) throw FormatError("report: table lacks column " + name);
  std::vector<std::string> out;
  for (const auto& row : t.rows) out.push_back(static_cast<std::size_t>(c) < row.size() ? row[static_cast<std::size_t>(c)] : "");
  return out;
}

/// Wide table from long rows: first column = row label, one column per
/// distinct col label (first-seen order).
inline void write_wide(const std::string& path, const std::string& corner,
                       const std::vector<std::tuple<std::string, std::string, std::string>>& cells) {
  std::vector<std::string> rows, cols;
  std::map<std::pair<std::string, std::string>, std::string> v;
  for (const auto& [r, c, x] : cells) {
    if (std::find(rows.begin(), rows.end(), r) == rows.end()) rows.push_back(r);
    if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    v[{r, c}] = x;
  }
  std::vector<std::string> header{corner};
  header.insert(header.end(), cols.begin(), cols.end());
  csv::Writer w(path, header);
  for (const auto& r : rows) {
    std::vector<csv::Field> line{r};
    for (const auto& c : cols) {
      auto it = v.find({r, c});
      line.emplace_back(it == v.end() ? std::string{} : it->second);
    }
    w.row(line);
  }
}

inline void cmd_report(const ReportFlags& f, Run& run) {
  const fs::path from = f.from;
  if (!fs::is_directory(from)) throw InputError("no results found: " + f.from + " is not a directory");
  std::vector<fs::path> manifests;
  for (const auto& e : fs::recursive_directory_iterator(from))
    if (e.is_regular_file() && e.path().filename() == "manifest.json" && e.path().parent_path() != run.dir())
      manifests.push_back(e.path());
  std::sort(manifests.begin(), manifests.end());

  static const std::vector<std::string> known{"linearity_summary.csv", "estimator_report.csv", "attribution_summary.csv",
                                              "multi_summary.csv",     "probe_scores.csv",     "robustness.csv",
                                              "substitutability.csv",  "tree_surface.csv"};
  // file name -> (run label, table)
  std::map<std::string, std::vector<std::pair<std::string, csv::Table>>> found;
  bool hashes_ok = true;
  for (const auto& mpath : manifests) {
    json m;
    try {
      m = json::parse(std::ifstream(mpath));
    } catch (const json::exception&) {
      continue;
    }
    if (m.value("format", "") != "neglab-manifest" || m.value("status", "") != "ok") continue;
    const fs::path dir = mpath.parent_path();
    const std::string label = fs::relative(dir, from).generic_string();
    for (const auto& o : m.at("outputs")) {
      const std::string file = o.at("file").get<std::string>();
      if (std::find(known.begin(), known.end(), file) == known.end()) continue;
      const fs::path p = dir / file;
      run.input(p.string());
      if (sha256_file(p) != o.at("sha256").get<std::string>()) {
        hashes_ok = false;
        continue;
      }
      found[file].emplace_back(label == "." ? std::string("run") : label, csv::read(p.string()));
    }
  }
  if (found.empty()) throw InputError("no results found under " + f.from);

  // concatenated tables with a leading run column
  for (const auto& [file, tables] : found) {
    const std::string stem = fs::path(file).stem().string();
    std::vector<std::string> header{"run"};
    header.insert(header.end(), tables.front().second.header.begin(), tables.front().second.header.end());
    csv::Writer w(run.path(stem + "_table.csv"), header);
    for (const auto& [label, t] : tables)
      for (const auto& row : t.rows) {
        std::vector<csv::Field> line{label};
        for (const auto& cell : row) line.emplace_back(cell);
        w.row(line);
      }
  }
  // heatmap-ready matrices
  if (auto it = found.find("robustness.csv"); it != found.end())
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const auto& t = it->second[i].second;
      std::vector<std::tuple<std::string, std::string, std::string>> cells;
      const auto rows = column_values(t, "row"), cols = column_values(t, "col"), vals = column_values(t, "value"),
                 flags = column_values(t, "flag");
      for (std::size_t k = 0; k < rows.size(); ++k) cells.emplace_back(rows[k], cols[k], flags[k].empty() ? vals[k] : "");
      write_wide(run.path("robustness_heatmap_" + std::to_string(i + 1) + ".csv"), "train\\eval", cells);
    }
  if (auto it = found.find("tree_surface.csv"); it != found.end())
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const auto& t = it->second[i].second;
      std::vector<std::tuple<std::string, std::string, std::string>> cells;
      const auto n = column_values(t, "trees_exp"), m = column_values(t, "depth_exp"), acc = column_values(t, "accuracy");
      for (std::size_t k = 0; k < n.size(); ++k) cells.emplace_back("M=" + m[k], "N=" + n[k], acc[k]);
      write_wide(run.path("tree_heatmap_" + std::to_string(i + 1) + ".csv"), "depth\\trees", cells);
    }
  {
    csv::Writer w(run.path("report_index.csv"), {"table", "run"});
    for (const auto& [file, tables] : found)
      for (const auto& [label, t] : tables) w.row({file, label});
  }
  run.check("input_hashes_match", hashes_ok);
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Global settings plus the chosen subcommand's, one `key=value` per line;
/// unset string options are left out.
inline std::string effective_config(const CLI::App& app, const std::string& command) {
  std::istringstream all(app.config_to_str(true, false));
  std::string line, out;
  while (std::getline(all, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    if (key == "config" || line.substr(eq + 1) == "\"\"") continue;
    if (key.find('.') == std::string::npos || key.rfind(command + ".", 0) == 0) out += line + "\n";
  }
  return out;
}

inline json config_json(const std::string& effective) {
  json j = json::object();
  std::istringstream is(effective);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    std::string v = line.substr(eq + 1);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    j[line.substr(0, eq)] = v;
  }
  return j;
}

struct Outcome {
  int exit_code = 0;
  std::string run_dir;
};

inline std::string default_out_root() {
  const char* env = std::getenv("NEGLAB_OUT");
  return env && *env ? env : "runs";
}

inline json error_json(const std::string& command, const std::string& kind, const std::string& message) {
  return {{"command", command}, {"kind", kind}, {"message", message}};
}

inline Outcome run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"neglab: neuron empirical gradient laboratory", "neglab"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML/INI configuration file (flags override it)");
  app.require_subcommand(1, 1);
  app.fallthrough();
  Common common;
  common.out = default_out_root();
  app.add_option("--seed", common.seed, "master seed")->capture_default_str();
  app.add_option("--jobs", common.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--out", common.out, "output root (default: $NEGLAB_OUT or ./runs)")->capture_default_str();

  TrainFlags train_f;
  auto* train = app.add_subcommand("train", "train a toy model on a task set");
  train->add_option("--tasks", train_f.tasks, "task file; generated from --kind when absent")->check(CLI::ExistingFile);
  train->add_option("--kind", train_f.kind)->check(CLI::IsMember({"parity", "lexicon-lookup", "copy-match"}));
  train->add_option("--options", train_f.options)->check(CLI::Range(2, vocab::kMaxOptions));
  train->add_option("--examples", train_f.examples);
  train->add_option("--layers", train_f.layers);
  train->add_option("--d-model", train_f.d_model);
  train->add_option("--d-ff", train_f.d_ff);
  train->add_option("--heads", train_f.heads);
  train->add_option("--max-seq", train_f.max_seq);
  train->add_option("--nonlinearity", train_f.nonlinearity)->check(CLI::IsMember({"gelu", "relu"}));
  train->add_option("--steps", train_f.steps);
  train->add_option("--lr", train_f.lr);
  train->add_option("--batch", train_f.batch);
  train->add_option("--warmup", train_f.warmup);
  train->add_option("--smoothing", train_f.smoothing);
  train->add_option("--smoothing-support", train_f.smoothing_support)->check(CLI::IsMember({"candidates", "vocabulary"}));
  train->add_option("--few-shot-rate", train_f.few_shot_rate);

  GenFlags gen_f;
  auto* gen = app.add_subcommand("gen-tasks", "generate a balanced synthetic task set");
  gen->add_option("--kind", gen_f.kind)->check(CLI::IsMember({"parity", "lexicon-lookup", "copy-match"}));
  gen->add_option("--options", gen_f.options)->check(CLI::Range(2, vocab::kMaxOptions));
  gen->add_option("--examples", gen_f.examples);
  gen->add_option("--query-length", gen_f.query_length);

  SweepFlags sweep_f;
  auto* sweep_c = app.add_subcommand("sweep", "intervention sweeps and NEG fits");
  add_inputs(sweep_c, sweep_f.in);
  add_context(sweep_c, sweep_f.ctx);
  sweep_c->add_option("--prompts", sweep_f.prompts);
  sweep_c->add_option("--neurons", sweep_f.neurons, "neurons per prompt (0: all)");
  sweep_c->add_option("--lo", sweep_f.lo);
  sweep_c->add_option("--hi", sweep_f.hi);
  sweep_c->add_option("--step", sweep_f.step);
  sweep_c->add_option("--window", sweep_f.window);
  sweep_c->add_option("--threshold", sweep_f.threshold);
  sweep_c->add_option("--mode", sweep_f.mode)->check(CLI::IsMember({"sign_relative", "absolute"}));

  EstimateFlags est_f;
  auto* est = app.add_subcommand("estimate", "CG, NeurGrad and optional IG for every neuron");
  add_inputs(est, est_f.in);
  add_context(est, est_f.ctx);
  est->add_option("--prompts", est_f.prompts);
  est->add_option("--ig-steps", est_f.ig_steps, "0: no IG");

  EvalFlags eval_f;
  auto* eval = app.add_subcommand("eval-estimators", "score estimators against intervention slopes");
  add_inputs(eval, eval_f.in);
  add_context(eval, eval_f.ctx);
  eval->add_option("--prompts", eval_f.prompts);
  eval->add_option("--neurons", eval_f.neurons);
  eval->add_option("--ig-steps", eval_f.ig_steps);
  eval->add_option("--lo", eval_f.lo);
  eval->add_option("--hi", eval_f.hi);
  eval->add_option("--step", eval_f.step);
  eval->add_option("--window", eval_f.window);
  eval->add_option("--mode", eval_f.mode)->check(CLI::IsMember({"sign_relative", "absolute"}));
  eval->add_flag("--timing", eval_f.timing, "fill runtime_s (not reproducible)");

  AttributeFlags attr_f;
  auto* attr = app.add_subcommand("attribute", "top-K enhancement by ranking method");
  add_inputs(attr, attr_f.in);
  add_context(attr, attr_f.ctx);
  attr->add_option("--prompts", attr_f.prompts);
  attr->add_option("--k", attr_f.k)->delimiter(',');
  attr->add_option("--delta", attr_f.delta);
  attr->add_option("--methods", attr_f.methods)->delimiter(',')->check(CLI::IsMember({"cg", "ig", "neurgrad", "random"}));
  attr->add_option("--ig-steps", attr_f.ig_steps);
  attr->add_option("--mode", attr_f.mode)->check(CLI::IsMember({"sign_relative", "absolute"}));

  MultiFlags multi_f;
  auto* multi = app.add_subcommand("multi", "multi-neuron additivity and NEG distribution");
  add_inputs(multi, multi_f.in);
  add_context(multi, multi_f.ctx);
  multi->add_option("--prompts", multi_f.prompts);
  multi->add_option("--max-exp", multi_f.max_exp, "largest N is 2^max-exp");
  multi->add_option("--lo", multi_f.lo);
  multi->add_option("--hi", multi_f.hi);
  multi->add_option("--step", multi_f.step);
  multi->add_option("--mode", multi_f.mode)->check(CLI::IsMember({"sign_relative", "absolute"}));

  ProbeFlags probe_f;
  auto* probe = app.add_subcommand("probe", "train and score Polar/Magn/Act/Tree probes");
  add_inputs(probe, probe_f.in);
  add_context(probe, probe_f.ctx);
  probe->add_option("--task-name", probe_f.task_name, "task column label (default: task file stem)");
  probe->add_option("--n-trees", probe_f.n_trees);
  probe->add_option("--max-depth", probe_f.max_depth, "0: unlimited");

  MetricsFlags met_f;
  auto* met = app.add_subcommand("metrics", "robustness, substitutability and tree surfaces");
  add_inputs(met, met_f.in);
  met->add_option("--which", met_f.which)->delimiter(',')->check(CLI::IsMember({"robustness", "substitutability", "trees"}));
  met->add_option("--neurons", met_f.neurons, "probe size for robustness");
  met->add_option("--window", met_f.window);
  met->add_option("--cap", met_f.cap, "tree grid keeps N + M < cap");
  met->add_option("--max-train", met_f.max_train, "0: whole train split");
  met->add_option("--family", met_f.family)->check(CLI::IsMember({"polar", "magn", "act"}));

  ReportFlags rep_f;
  auto* rep = app.add_subcommand("report", "collect result tables from earlier runs");
  rep->add_option("--from", rep_f.from, "directory holding run directories")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return {0, ""};
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return {0, ""};
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return {2, ""};
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  const std::string effective = effective_config(app, command);
  const json config = config_json(effective);
  std::optional<Run> run_dir;
  try {
    run_dir.emplace(common.out, command);
    Run& r = *run_dir;
    std::ofstream(r.path("config.toml")) << effective;
    if (command == "train") cmd_train(train_f, common, r);
    else if (command == "gen-tasks") cmd_gen_tasks(gen_f, common, r);
    else if (command == "sweep") cmd_sweep(sweep_f, common, r);
    else if (command == "estimate") cmd_estimate(est_f, common, r);
    else if (command == "eval-estimators") cmd_eval_estimators(eval_f, common, r);
    else if (command == "attribute") cmd_attribute(attr_f, common, r);
    else if (command == "multi") cmd_multi(multi_f, common, r);
    else if (command == "probe") cmd_probe(probe_f, common, r);
    else if (command == "metrics") cmd_metrics(met_f, common, r);
    else if (command == "report") cmd_report(rep_f, r);
    if (!r.failed().empty()) {
      std::string names;
      for (const auto& n : r.failed()) names += (names.empty() ? "" : ",") + n;
      const json e = error_json(command, "check_failed", "invariant checks failed: " + names);
      r.write_manifest(config, common.seed, "failed", e);
      err << json{{"error", e}}.dump() << "\n";
      return {1, r.dir().string()};
    }
    r.write_manifest(config, common.seed, "ok");
    out << "run_dir: " << r.dir().string() << "\n";
    return {0, r.dir().string()};
  } catch (const std::exception& ex) {
    std::string kind = "error";
    if (dynamic_cast<const InputError*>(&ex)) kind = "input_error";
    else if (dynamic_cast<const FormatError*>(&ex)) kind = "format_error";
    else if (dynamic_cast<const TrainingError*>(&ex)) kind = "training_error";
    else if (dynamic_cast<const DegenerateError*>(&ex)) kind = "degenerate_error";
    const json e = error_json(command, kind, ex.what());
    err << json{{"error", e}}.dump() << "\n";
    if (run_dir) {
      try {
        run_dir->write_manifest(config, common.seed, "error", e);
      } catch (const std::exception&) {
      }
    }
    return {1, run_dir ? run_dir->dir().string() : ""};
  }
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args).exit_code;
}

}  // namespace neglab::cli
