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
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neglab/core.hpp"
#include "neglab/model.hpp"
#include "neglab/train.hpp"

namespace neglab {

// ---------------------------------------------------------------------------
// Toy vocabulary (128 ids)
// ---------------------------------------------------------------------------
namespace vocab {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kSep = 2;
inline constexpr int kCue = 3;
inline constexpr int kOpt = 4;
inline constexpr int kInstructionBase = 6;  // variant i: 6 + 3i .. 8 + 3i
inline constexpr int kInstructionVariants = 3;
inline constexpr int kInstructionLength = 3;
inline constexpr int kStyleBase = 16;       // style s, option j: 16 + 5s + j
inline constexpr int kStyles = 2;
inline constexpr int kMaxOptions = 5;
inline constexpr int kZero = 26;
inline constexpr int kOne = 27;
inline constexpr int kKeyBase = 28;         // K0..K4
inline constexpr int kWordBase = 33;        // W0..W63
inline constexpr int kWords = 64;
inline constexpr int kNoiseBase = 97;       // N0..N30
inline constexpr int kNoise = 31;
inline constexpr int kSize = 128;

inline int answer_token(int style, int option) { return kStyleBase + kMaxOptions * style + option; }
inline int key_token(int option) { return kKeyBase + option; }

inline std::string token_name(int id) {
  static const std::array<const char*, 6> specials{"<pad>", "<bos>", "<sep>", "<cue>", "<opt>", "<res>"};
  if (id >= 0 && id < 6) return specials[static_cast<std::size_t>(id)];
  if (id >= kInstructionBase && id < kInstructionBase + kInstructionVariants * kInstructionLength)
    return "I" + std::to_string(id - kInstructionBase);
  if (id >= 15 && id < kStyleBase) return "<res2>";
  if (id >= kStyleBase && id < kZero) {
    const int s = (id - kStyleBase) / kMaxOptions, j = (id - kStyleBase) % kMaxOptions;
    return std::string(s == 0 ? "L" : "Y") + std::string(1, static_cast<char>('A' + j));
  }
  if (id == kZero) return "B0";
  if (id == kOne) return "B1";
  if (id >= kKeyBase && id < kWordBase) return "K" + std::to_string(id - kKeyBase);
  if (id >= kWordBase && id < kNoiseBase) return "W" + std::to_string(id - kWordBase);
  if (id >= kNoiseBase && id < kSize) return "N" + std::to_string(id - kNoiseBase);
  throw InputError("token id " + std::to_string(id) + " outside toy vocabulary");
}

inline int token_from_name(const std::string& name) {
  static const std::map<std::string, int> table = [] {
    std::map<std::string, int> t;
    for (int i = 0; i < kSize; ++i) t.emplace(token_name(i), i);
    return t;
  }();
  const auto it = table.find(name);
  if (it == table.end()) throw FormatError("unknown token name '" + name + "'");
  return it->second;
}

}  // namespace vocab

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct ChoiceTask {
  std::vector<int> query;
  std::vector<std::vector<int>> options;
  std::vector<int> candidates;  // one answer token per option
  int correct = 0;

  int n_options() const { return static_cast<int>(candidates.size()); }
  int answer() const { return candidates[static_cast<std::size_t>(correct)]; }
  friend bool operator==(const ChoiceTask&, const ChoiceTask&) = default;
};

struct TaskSet {
  std::vector<ChoiceTask> train, valid, test;
  int n_options = 0;

  std::size_t size() const { return train.size() + valid.size() + test.size(); }
  friend bool operator==(const TaskSet&, const TaskSet&) = default;
};

enum class TaskKind { parity, lexicon_lookup, copy_match };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::parity: return "parity";
    case TaskKind::lexicon_lookup: return "lexicon-lookup";
    case TaskKind::copy_match: return "copy-match";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "parity") return TaskKind::parity;
  if (s == "lexicon-lookup") return TaskKind::lexicon_lookup;
  if (s == "copy-match") return TaskKind::copy_match;
  throw InputError("unknown task kind '" + s + "'");
}

struct TaskGenSpec {
  TaskKind kind = TaskKind::copy_match;
  int n_options = 2;
  int n_examples = 1600;
  std::uint64_t seed = 0;
  int query_length = 6;

  void validate() const {
    if (n_options < 2 || n_options > vocab::kMaxOptions) throw InputError("n_options must be in [2, 5]");
    if (n_examples <= 0 || n_examples % (n_options * 8) != 0)
      throw InputError("n_examples must be a positive multiple of n_options * 8");
    if (query_length < 2) throw InputError("query_length must be >= 2");
  }
};

/// Correct-index counts for one split.
inline std::vector<int> class_counts(const std::vector<ChoiceTask>& split, int n_options) {
  std::vector<int> counts(static_cast<std::size_t>(n_options), 0);
  for (const auto& t : split) ++counts[static_cast<std::size_t>(t.correct)];
  return counts;
}

/// Each option index is correct an equal number of times, +/- 1.
inline bool is_balanced(const std::vector<ChoiceTask>& split, int n_options) {
  if (split.empty()) return true;
  const auto c = class_counts(split, n_options);
  const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
  return *hi - *lo <= 1;
}

/// 6:1:1 within one example per split of rounding.
inline bool has_611_split(const TaskSet& ts) {
  const double n = static_cast<double>(ts.size());
  return std::abs(static_cast<double>(ts.train.size()) - n * 6 / 8) <= 1.0 &&
         std::abs(static_cast<double>(ts.valid.size()) - n / 8) <= 1.0 &&
         std::abs(static_cast<double>(ts.test.size()) - n / 8) <= 1.0;
}

namespace detail {

inline std::vector<int> noise_query(std::mt19937_64& rng, int length) {
  std::uniform_int_distribution<int> noise(0, vocab::kNoise - 1);
  std::vector<int> q(static_cast<std::size_t>(length));
  for (int& t : q) t = vocab::kNoiseBase + noise(rng);
  return q;
}

/// Word -> class assignment for lexicon-lookup, fixed by the seed.
inline std::vector<int> lexicon(std::uint64_t seed, int n_options) {
  std::vector<int> words(vocab::kWords);
  std::iota(words.begin(), words.end(), 0);
  std::mt19937_64 rng(seed ^ 0x1e8c0ULL);
  std::shuffle(words.begin(), words.end(), rng);
  std::vector<int> cls(vocab::kWords);
  for (int i = 0; i < vocab::kWords; ++i) cls[static_cast<std::size_t>(words[static_cast<std::size_t>(i)])] = i % n_options;
  return cls;
}

inline std::vector<int> make_query(const TaskGenSpec& spec, int cls, std::mt19937_64& rng,
                                   const std::vector<int>& lex) {
  const int L = spec.query_length;
  std::uniform_int_distribution<int> pos(0, L - 1);
  switch (spec.kind) {
    case TaskKind::copy_match: {
      auto q = noise_query(rng, L);
      q[static_cast<std::size_t>(pos(rng))] = vocab::key_token(cls);
      return q;
    }
    case TaskKind::lexicon_lookup: {
      std::vector<int> words;
      for (int w = 0; w < vocab::kWords; ++w)
        if (lex[static_cast<std::size_t>(w)] == cls) words.push_back(w);
      std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
      auto q = noise_query(rng, L);
      q[static_cast<std::size_t>(pos(rng))] = vocab::kWordBase + words[pick(rng)];
      return q;
    }
    case TaskKind::parity: {
      std::bernoulli_distribution bit(0.5);
      for (;;) {
        std::vector<int> q(static_cast<std::size_t>(L));
        int ones = 0;
        for (int& t : q) {
          const bool b = bit(rng);
          ones += b ? 1 : 0;
          t = b ? vocab::kOne : vocab::kZero;
        }
        if (ones % spec.n_options == cls) return q;
      }
    }
  }
  return {};
}

}  // namespace detail

/// Balanced synthetic multiple-choice tasks. Rules:
///   copy-match      query = noise tokens with one key K_c; answer c.
///   lexicon-lookup  query = noise tokens with one lexicon word; answer is
///                   the word's class under a seed-fixed lexicon.
///   parity          query = bits; answer = (#ones) mod n_options.
/// Option j is the single token K_j; the candidate answer tokens are the
/// style-0 answer letters. Every split holds exactly n/n_options examples of
/// each class in 6:1:1 proportion.
inline TaskSet generate_synthetic(const TaskGenSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto lex = detail::lexicon(spec.seed, spec.n_options);
  const int per_class = spec.n_examples / spec.n_options;
  const int train_n = per_class * 6 / 8, valid_n = per_class / 8;
  TaskSet ts;
  ts.n_options = spec.n_options;
  std::vector<int> cands;
  std::vector<std::vector<int>> options;
  for (int j = 0; j < spec.n_options; ++j) {
    cands.push_back(vocab::answer_token(0, j));
    options.push_back({vocab::key_token(j)});
  }
  for (int c = 0; c < spec.n_options; ++c) {
    for (int i = 0; i < per_class; ++i) {
      ChoiceTask t{detail::make_query(spec, c, rng, lex), options, cands, c};
      if (i < train_n) ts.train.push_back(std::move(t));
      else if (i < train_n + valid_n) ts.valid.push_back(std::move(t));
      else ts.test.push_back(std::move(t));
    }
  }
  std::shuffle(ts.train.begin(), ts.train.end(), rng);
  std::shuffle(ts.valid.begin(), ts.valid.end(), rng);
  std::shuffle(ts.test.begin(), ts.test.end(), rng);
  return ts;
}

/// Balanced downsampling: each split keeps the first min-count examples of
/// every class, order preserved.
inline TaskSet balance(const TaskSet& ts) {
  auto one = [&](const std::vector<ChoiceTask>& split) {
    const auto counts = class_counts(split, ts.n_options);
    const int keep = split.empty() ? 0 : *std::min_element(counts.begin(), counts.end());
    std::vector<int> taken(static_cast<std::size_t>(ts.n_options), 0);
    std::vector<ChoiceTask> out;
    for (const auto& t : split)
      if (taken[static_cast<std::size_t>(t.correct)]++ < keep) out.push_back(t);
    return out;
  };
  return {one(ts.train), one(ts.valid), one(ts.test), ts.n_options};
}

/// Same task with the answer tokens of another style.
inline ChoiceTask restyle(ChoiceTask task, int style) {
  for (int j = 0; j < task.n_options(); ++j) task.candidates[static_cast<std::size_t>(j)] = vocab::answer_token(style, j);
  return task;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Layout: <bos> I I I {demo: query <cue> answer <sep>}* query <opt> c_0..c_k <cue>.
/// The answer position is the final <cue>.
inline Prompt render_prompt(const ChoiceTask& task, const std::vector<ChoiceTask>& shots, int instruction = 0) {
  if (instruction < 0 || instruction >= vocab::kInstructionVariants) throw InputError("unknown instruction variant");
  if (!shots.empty()) {
    if (static_cast<int>(shots.size()) != task.n_options())
      throw InputError("few-shot prompts need exactly one demonstration per option");
    std::vector<bool> seen(static_cast<std::size_t>(task.n_options()), false);
    for (const auto& s : shots) {
      if (s.correct < 0 || s.correct >= task.n_options() || seen[static_cast<std::size_t>(s.correct)])
        throw InputError("duplicate demonstration option");
      seen[static_cast<std::size_t>(s.correct)] = true;
    }
  }
  Prompt p;
  p.tokens.push_back(vocab::kBos);
  for (int i = 0; i < vocab::kInstructionLength; ++i)
    p.tokens.push_back(vocab::kInstructionBase + vocab::kInstructionLength * instruction + i);
  for (const auto& s : shots) {
    p.tokens.insert(p.tokens.end(), s.query.begin(), s.query.end());
    p.tokens.push_back(vocab::kCue);
    p.tokens.push_back(task.candidates[static_cast<std::size_t>(s.correct)]);
    p.tokens.push_back(vocab::kSep);
  }
  p.tokens.insert(p.tokens.end(), task.query.begin(), task.query.end());
  p.tokens.push_back(vocab::kOpt);
  p.tokens.insert(p.tokens.end(), task.candidates.begin(), task.candidates.end());
  p.tokens.push_back(vocab::kCue);
  p.answer_position = static_cast<int>(p.tokens.size()) - 1;
  p.target_token = task.answer();
  return p;
}

/// Prompt context: instruction template, demonstration sampling, answer style.
struct RenderContext {
  int instruction = 0;
  int demo_set = -1;  // -1: zero-shot
  int style = 0;

  friend bool operator==(const RenderContext&, const RenderContext&) = default;
};

/// Fixed demonstration set `k`: one train example per option, order
/// permuted, determined by k alone.
inline std::vector<ChoiceTask> demonstration_set(const TaskSet& ts, int k) {
  std::mt19937_64 rng(0xdeadbeefULL + static_cast<std::uint64_t>(k) * 7919ULL);
  std::vector<int> order(static_cast<std::size_t>(ts.n_options));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<ChoiceTask> shots;
  for (int c : order) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ts.train.size(); ++i)
      if (ts.train[i].correct == c) idx.push_back(i);
    if (idx.empty()) throw InputError("train split lacks an example of every option");
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    shots.push_back(ts.train[idx[pick(rng)]]);
  }
  return shots;
}

inline Prompt render_in_context(const TaskSet& ts, const ChoiceTask& task, const RenderContext& ctx) {
  const ChoiceTask styled = restyle(task, ctx.style);
  std::vector<ChoiceTask> shots;
  if (ctx.demo_set >= 0) shots = demonstration_set(ts, ctx.demo_set);
  return render_prompt(styled, shots, ctx.instruction);
}

/// Training sequences for the toy model: every task of the split rendered
/// under a random context (instruction, style, zero- or few-shot with
/// random demonstrations). Targets sit at every <cue> (demonstration answers
/// and the final answer).
inline std::vector<TrainingExample> training_examples(const TaskSet& ts, const std::vector<ChoiceTask>& split,
                                                      std::uint64_t seed, double few_shot_rate = 0.5,
                                                      bool vary_context = true) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> instr(0, vocab::kInstructionVariants - 1), style(0, vocab::kStyles - 1);
  std::bernoulli_distribution few(few_shot_rate);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ts.n_options));
  for (std::size_t i = 0; i < ts.train.size(); ++i) by_class[static_cast<std::size_t>(ts.train[i].correct)].push_back(i);
  std::vector<TrainingExample> out;
  out.reserve(split.size());
  for (const auto& task : split) {
    const int s = vary_context ? style(rng) : 0;
    const int ins = vary_context ? instr(rng) : 0;
    std::vector<ChoiceTask> shots;
    if (few(rng)) {
      std::vector<int> order(static_cast<std::size_t>(ts.n_options));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (int c : order) {
        const auto& idx = by_class[static_cast<std::size_t>(c)];
        if (idx.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
        shots.push_back(ts.train[idx[pick(rng)]]);
      }
      if (static_cast<int>(shots.size()) != ts.n_options) shots.clear();
    }
    const ChoiceTask styled = restyle(task, s);
    const Prompt p = render_prompt(styled, shots, ins);
    TrainingExample ex;
    ex.tokens = p.tokens;
    for (int i = 0; i + 1 < static_cast<int>(p.tokens.size()); ++i)
      if (p.tokens[static_cast<std::size_t>(i)] == vocab::kCue)
        ex.targets.emplace_back(i, p.tokens[static_cast<std::size_t>(i + 1)]);
    ex.targets.emplace_back(p.answer_position, p.target_token);
    ex.candidates = styled.candidates;
    out.push_back(std::move(ex));
  }
  return out;
}

/// Trains a toy model on the train split (varied contexts) and reports
/// held-out accuracy on the zero-shot valid split.
inline std::pair<Params, TrainReport> train_on_tasks(const TaskSet& ts, const ModelConfig& config,
                                                     const TrainOptions& opt, double few_shot_rate = 0.5) {
  const auto data = training_examples(ts, ts.train, opt.seed * 2 + 1, few_shot_rate, true);
  const auto heldout = training_examples(ts, ts.valid, opt.seed * 2 + 2, 0.0, false);
  return train_toy(data, config, opt, heldout);
}

/// Index and prompt of every task in `split` whose answer the model ranks
/// first among the candidates, up to `limit` (0: no limit).
inline std::vector<std::pair<int, Prompt>> answered_prompts(const Params& params, const TaskSet& ts,
                                                            const std::vector<ChoiceTask>& split,
                                                            const RenderContext& ctx = {}, std::size_t limit = 0) {
  std::vector<std::pair<int, Prompt>> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const ChoiceTask styled = restyle(split[i], ctx.style);
    const Prompt p = render_in_context(ts, split[i], ctx);
    const auto dist = forward(params, p).output;
    int best = 0;
    for (int c = 1; c < static_cast<int>(styled.candidates.size()); ++c)
      if (dist.probs[static_cast<std::size_t>(styled.candidates[static_cast<std::size_t>(c)])] >
          dist.probs[static_cast<std::size_t>(styled.candidates[static_cast<std::size_t>(best)])])
        best = c;
    if (best == styled.correct) out.emplace_back(static_cast<int>(i), p);
    if (limit && out.size() >= limit) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON Lines wire format
// ---------------------------------------------------------------------------
//
// Line 1: {"format": "neglab-tasks", "version": 1}
// Then one record per task:
//   {"split": "train"|"valid"|"test", "query": [ids] | "NAME NAME ...",
//    "options": [[ids] | "NAMES", ...], "candidates": [id, ...] , "correct": i}
// A candidate may be written as an id, a one-element list, or a token name;
// anything longer than one token is rejected. "split" defaults to "train".

inline constexpr int kTaskFormatVersion = 1;

struct IngestResult {
  TaskSet tasks;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<int> tokens_from_json(const nlohmann::json& j, const std::string& where) {
  if (j.is_string()) {
    std::vector<int> out;
    std::istringstream is(j.get<std::string>());
    std::string name;
    while (is >> name) out.push_back(vocab::token_from_name(name));
    return out;
  }
  if (!j.is_array()) throw FormatError(where + ": expected token list or text");
  std::vector<int> out;
  for (const auto& t : j) {
    if (!t.is_number_integer()) throw FormatError(where + ": token ids must be integers");
    out.push_back(t.get<int>());
  }
  return out;
}

}  // namespace detail

inline IngestResult ingest_tasks(std::istream& is) {
  std::string line;
  int lineno = 0;
  bool header = false;
  IngestResult res;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": invalid JSON");
    }
    if (!header) {
      if (!j.is_object() || j.value("format", "") != "neglab-tasks")
        throw FormatError(where + ": missing format header");
      if (j.value("version", 0) != kTaskFormatVersion) throw FormatError(where + ": unsupported format version");
      header = true;
      continue;
    }
    if (!j.is_object()) throw FormatError(where + ": record must be an object");
    for (const auto& [key, _] : j.items())
      if (key != "split" && key != "query" && key != "options" && key != "candidates" && key != "correct")
        throw FormatError(where + ": unknown field '" + key + "'");
    for (const char* key : {"query", "options", "candidates", "correct"})
      if (!j.contains(key)) throw FormatError(where + ": missing field '" + std::string(key) + "'");
    ChoiceTask t;
    t.query = detail::tokens_from_json(j["query"], where);
    if (!j["options"].is_array()) throw FormatError(where + ": options must be a list");
    for (const auto& o : j["options"]) t.options.push_back(detail::tokens_from_json(o, where));
    if (!j["candidates"].is_array()) throw FormatError(where + ": candidates must be a list");
    for (const auto& c : j["candidates"]) {
      std::vector<int> toks = c.is_number_integer() ? std::vector<int>{c.get<int>()} : detail::tokens_from_json(c, where);
      if (toks.size() != 1) throw FormatError(where + ": candidate must be exactly one token");
      t.candidates.push_back(toks[0]);
    }
    if (t.candidates.size() != t.options.size()) throw FormatError(where + ": candidates and options differ in length");
    auto sorted = t.candidates;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw FormatError(where + ": candidate tokens must be distinct");
    if (!j["correct"].is_number_integer()) throw FormatError(where + ": correct must be an integer");
    t.correct = j["correct"].get<int>();
    if (t.correct < 0 || t.correct >= t.n_options())
      throw FormatError(where + ": correct index " + std::to_string(t.correct) + " out of bounds");
    if (res.tasks.n_options == 0) res.tasks.n_options = t.n_options();
    else if (res.tasks.n_options != t.n_options()) throw FormatError(where + ": inconsistent option count");
    const std::string split = j.value("split", "train");
    if (split == "train") res.tasks.train.push_back(std::move(t));
    else if (split == "valid") res.tasks.valid.push_back(std::move(t));
    else if (split == "test") res.tasks.test.push_back(std::move(t));
    else throw FormatError(where + ": unknown split '" + split + "'");
  }
  if (res.tasks.size() == 0) throw FormatError("empty taskset");
  for (auto [name, split] : {std::pair{"train", &res.tasks.train}, std::pair{"valid", &res.tasks.valid},
                             std::pair{"test", &res.tasks.test}})
    if (!is_balanced(*split, res.tasks.n_options))
      res.warnings.push_back(std::string(name) + " split is not balanced across options");
  return res;
}

inline IngestResult ingest_tasks(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  return ingest_tasks(is);
}

inline void export_tasks(const TaskSet& ts, std::ostream& os) {
  os << nlohmann::json{{"format", "neglab-tasks"}, {"version", kTaskFormatVersion}}.dump() << "\n";
  for (auto [name, split] : {std::pair{"train", &ts.train}, std::pair{"valid", &ts.valid}, std::pair{"test", &ts.test}})
    for (const auto& t : *split) {
      nlohmann::json j;
      j["split"] = name;
      j["query"] = t.query;
      j["options"] = t.options;
      j["candidates"] = t.candidates;
      j["correct"] = t.correct;
      os << j.dump() << "\n";
    }
}

inline void export_tasks(const TaskSet& ts, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  export_tasks(ts, os);
}

}  // namespace neglab
