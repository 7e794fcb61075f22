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

#include <random>
#include <vector>

#include "neglab/model.hpp"

namespace neglab::testing {

inline ModelConfig small_config(Nonlinearity nl = Nonlinearity::gelu) {
  ModelConfig c;
  c.n_layers = 3;
  c.d_model = 16;
  c.d_ff = 32;
  c.n_heads = 2;
  c.vocab_size = 24;
  c.max_seq = 16;
  c.nonlinearity = nl;
  c.seed = 7;
  return c;
}

/// Dense random weights large enough that every nonlinearity matters.
inline Params random_params(const ModelConfig& cfg, double std = 0.3, std::uint64_t seed = 11) {
  Params p = Params::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, std);
  for (Mat* m : p.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
  for (auto& l : p.layers) {
    l.ln1_g.array() += 1.0;
    l.ln2_g.array() += 1.0;
  }
  p.lnf_g.array() += 1.0;
  p.round_to_float();
  return p;
}

inline Prompt random_prompt(const ModelConfig& cfg, std::mt19937_64& rng, int len) {
  std::uniform_int_distribution<int> tok(0, cfg.vocab_size - 1);
  Prompt p;
  for (int i = 0; i < len; ++i) p.tokens.push_back(tok(rng));
  p.answer_position = len - 1;
  p.target_token = tok(rng);
  return p;
}

inline double central_difference(const PromptSession& s, NeuronId id, int token, double h) {
  const PatchSpec up{PatchMode::absolute_delta, {{id, h}}};
  const PatchSpec dn{PatchMode::absolute_delta, {{id, -h}}};
  return (s.target_value(up, token) - s.target_value(dn, token)) / (2.0 * h);
}

}  // namespace neglab::testing
