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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "neglab/core.hpp"

namespace neglab {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::RowVectorXd;

enum class Nonlinearity : std::int64_t { gelu = 0, relu = 1 };

struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int d_ff = 256;
  int n_heads = 4;
  int vocab_size = 128;
  int max_seq = 64;
  Nonlinearity nonlinearity = Nonlinearity::gelu;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  int total_neurons() const { return n_layers * d_ff; }

  void validate() const {
    if (n_layers < 1 || d_model < 1 || d_ff < 1 || n_heads < 1 || vocab_size < 1 || max_seq < 1)
      throw InputError("model config: all counts must be >= 1");
    if (d_model % n_heads != 0) throw InputError("model config: d_model must be divisible by n_heads");
    if (d_ff < d_model) throw InputError("model config: d_ff must be >= d_model");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Token sequence plus the position whose next-token distribution is read.
struct Prompt {
  std::vector<int> tokens;
  int answer_position = 0;
  int target_token = 0;
};

struct TokenDistribution {
  std::vector<double> probs;
  double operator[](int token) const { return probs[static_cast<std::size_t>(token)]; }
};

/// Post-nonlinearity activations at the answer position, plus the output.
struct ForwardTrace {
  NeuronMap<double> activations;
  TokenDistribution output;
};

enum class PatchMode { absolute_delta, sign_relative_delta, set_value };

struct PatchEntry {
  NeuronId neuron;
  double value = 0.0;
};

/// Activation overrides at the answer position. One mode per spec.
struct PatchSpec {
  PatchMode mode = PatchMode::absolute_delta;
  std::vector<PatchEntry> entries;

  bool empty() const { return entries.empty(); }
  int first_layer() const {
    int l = INT32_MAX;
    for (const auto& e : entries) l = std::min(l, e.neuron.layer);
    return l;
  }
};

inline double apply_patch_value(double activation, PatchMode mode, double value) {
  switch (mode) {
    case PatchMode::absolute_delta: return activation + value;
    case PatchMode::sign_relative_delta: return activation + value * sign_of(activation);
    case PatchMode::set_value: return value;
  }
  return activation;
}

/// Quantity read at the answer position.
enum class TargetQuantity { probability, log_probability };

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct LayerParams {
  Mat ln1_g, ln1_b;          // 1 x D
  Mat wq, wk, wv, wo;        // D x D, applied as x * W
  Mat ln2_g, ln2_b;          // 1 x D
  Mat w1, b1;                // D x F, 1 x F
  Mat w2, b2;                // F x D (row n is neuron n's down-projection), 1 x D
};

/// All weights. Tensor order (tensors()) is the on-disk order:
/// tok_emb, pos_emb, per layer {ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b,
/// w1, b1, w2, b2}, lnf_g, lnf_b, w_out.
struct Params {
  ModelConfig config;
  Mat tok_emb;  // V x D
  Mat pos_emb;  // S x D
  std::vector<LayerParams> layers;
  Mat lnf_g, lnf_b;  // 1 x D
  Mat w_out;         // V x D, logits = y * w_out^T

  std::vector<Mat*> tensors() {
    std::vector<Mat*> out{&tok_emb, &pos_emb};
    for (auto& l : layers) {
      for (Mat* m : {&l.ln1_g, &l.ln1_b, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_g, &l.ln2_b, &l.w1,
                     &l.b1, &l.w2, &l.b2})
        out.push_back(m);
    }
    out.push_back(&lnf_g);
    out.push_back(&lnf_b);
    out.push_back(&w_out);
    return out;
  }
  std::vector<const Mat*> tensors() const {
    auto mut = const_cast<Params*>(this)->tensors();
    return {mut.begin(), mut.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Mat* m : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  /// Every tensor zero, layer-norm gains included.
  static Params zeros(const ModelConfig& cfg) {
    cfg.validate();
    Params p;
    p.config = cfg;
    const int d = cfg.d_model, f = cfg.d_ff;
    p.tok_emb = Mat::Zero(cfg.vocab_size, d);
    p.pos_emb = Mat::Zero(cfg.max_seq, d);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
      l.ln1_g = Mat::Zero(1, d);
      l.ln1_b = Mat::Zero(1, d);
      l.wq = Mat::Zero(d, d);
      l.wk = Mat::Zero(d, d);
      l.wv = Mat::Zero(d, d);
      l.wo = Mat::Zero(d, d);
      l.ln2_g = Mat::Zero(1, d);
      l.ln2_b = Mat::Zero(1, d);
      l.w1 = Mat::Zero(d, f);
      l.b1 = Mat::Zero(1, f);
      l.w2 = Mat::Zero(f, d);
      l.b2 = Mat::Zero(1, d);
    }
    p.lnf_g = Mat::Zero(1, d);
    p.lnf_b = Mat::Zero(1, d);
    p.w_out = Mat::Zero(cfg.vocab_size, d);
    return p;
  }

  /// Scaled-normal initialization from config.seed: std 0.02 for embeddings
  /// and input projections, 0.02/sqrt(2 n_layers) for the residual
  /// projections (wo, w2); unit layer-norm gains; zero biases. Values are
  /// rounded to float32 so that save/load is lossless.
  static Params initialize(const ModelConfig& cfg) {
    Params p = zeros(cfg);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double base = 0.02;
    const double resid = base / std::sqrt(2.0 * cfg.n_layers);
    auto fill = [&](Mat& m, double std) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * normal(rng);
    };
    fill(p.tok_emb, base);
    fill(p.pos_emb, base);
    for (auto& l : p.layers) {
      l.ln1_g.setOnes();
      l.ln2_g.setOnes();
      fill(l.wq, base);
      fill(l.wk, base);
      fill(l.wv, base);
      fill(l.wo, resid);
      fill(l.w1, base);
      fill(l.w2, resid);
    }
    p.lnf_g.setOnes();
    fill(p.w_out, base);
    p.round_to_float();
    return p;
  }

  void round_to_float() {
    for (Mat* m : tensors())
      for (Eigen::Index i = 0; i < m->size(); ++i)
        m->data()[i] = static_cast<double>(static_cast<float>(m->data()[i]));
  }
};

// ---------------------------------------------------------------------------
// Elementwise pieces
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kLayerNormEps = 1e-5;

inline double activate(Nonlinearity nl, double x) {
  if (nl == Nonlinearity::relu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double activate_grad(Nonlinearity nl, double x) {
  if (nl == Nonlinearity::relu) return x > 0.0 ? 1.0 : 0.0;
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

/// Row-wise layer norm. Writes the normalized (pre-gain) rows and 1/std.
inline Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, Mat& xhat, Eigen::VectorXd& rstd) {
  const auto n = x.rows();
  const double d = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  rstd.resize(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double mean = x.row(t).sum() / d;
    const double var = (x.row(t).array() - mean).square().sum() / d;
    rstd(t) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(t) = (x.row(t).array() - mean) * rstd(t);
  }
  Mat out = xhat;
  out.array().rowwise() *= g.row(0).array();
  out.array().rowwise() += b.row(0).array();
  return out;
}

/// Gradient of layer norm w.r.t. its input for one row, given dL/d(out).
inline Vec layer_norm_backward(const Vec& dout, const Vec& xhat, double rstd, const Mat& g) {
  const double d = static_cast<double>(xhat.size());
  const Vec dxhat = (dout.array() * g.row(0).array()).matrix();
  const double mean_dxhat = dxhat.sum() / d;
  const double mean_dxhat_xhat = dxhat.dot(xhat) / d;
  return (rstd * (dxhat.array() - mean_dxhat - xhat.array() * mean_dxhat_xhat)).matrix();
}

inline void softmax_inplace(std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline void check_patch(const ModelConfig& cfg, const PatchSpec& patch) {
  std::vector<NeuronId> seen;
  seen.reserve(patch.entries.size());
  for (const auto& e : patch.entries) {
    if (e.neuron.layer < 0 || e.neuron.layer >= cfg.n_layers || e.neuron.neuron < 0 ||
        e.neuron.neuron >= cfg.d_ff)
      throw InputError("patch neuron out of bounds");
    seen.push_back(e.neuron);
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
    throw InputError("duplicate neuron in patch");
}

}  // namespace detail

inline void validate_prompt(const ModelConfig& cfg, const Prompt& prompt) {
  if (prompt.tokens.empty()) throw InputError("prompt has no tokens");
  if (static_cast<int>(prompt.tokens.size()) > cfg.max_seq)
    throw InputError("prompt length " + std::to_string(prompt.tokens.size()) + " exceeds max_seq " +
                     std::to_string(cfg.max_seq));
  for (int t : prompt.tokens)
    if (t < 0 || t >= cfg.vocab_size) throw InputError("token id " + std::to_string(t) + " out of vocab");
  if (prompt.answer_position < 0 || prompt.answer_position >= static_cast<int>(prompt.tokens.size()))
    throw InputError("answer_position out of range");
  if (prompt.target_token < 0 || prompt.target_token >= cfg.vocab_size)
    throw InputError("target token out of vocab");
}

// ---------------------------------------------------------------------------
// Full-sequence forward (reference path, shared with training)
// ---------------------------------------------------------------------------

struct LayerCache {
  Mat x_in;
  Mat xhat1;
  Eigen::VectorXd rstd1;
  Mat u;
  Mat q, k, v;
  std::vector<Mat> att;  // per head, T x T, zero above the diagonal
  Mat o;
  Mat x_mid;
  Mat xhat2;
  Eigen::VectorXd rstd2;
  Mat w;
  Mat z, a;  // a is post-patch
};

struct SequenceCache {
  std::vector<int> tokens;
  std::vector<LayerCache> layers;
  Mat x_final;
  Mat xhatf;
  Eigen::VectorXd rstdf;
  Mat y;  // final layer-norm output, T x D

  int length() const { return static_cast<int>(tokens.size()); }
};

/// Causal forward over the whole sequence. The optional patch applies to the
/// last position only.
inline SequenceCache forward_sequence(const Params& params, const std::vector<int>& tokens,
                                      const PatchSpec* patch = nullptr) {
  const ModelConfig& cfg = params.config;
  const int T = static_cast<int>(tokens.size());
  const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  SequenceCache c;
  c.tokens = tokens;
  c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  Mat x(T, D);
  for (int t = 0; t < T; ++t) x.row(t) = params.tok_emb.row(tokens[t]) + params.pos_emb.row(t);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
    LayerCache& lc = c.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;
    lc.u = detail::layer_norm(x, lp.ln1_g, lp.ln1_b, lc.xhat1, lc.rstd1);
    lc.q = lc.u * lp.wq;
    lc.k = lc.u * lp.wk;
    lc.v = lc.u * lp.wv;
    lc.o = Mat::Zero(T, D);
    lc.att.assign(static_cast<std::size_t>(H), Mat::Zero(T, T));
    for (int h = 0; h < H; ++h) {
      Mat& att = lc.att[static_cast<std::size_t>(h)];
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      for (int t = 0; t < T; ++t) {
        std::vector<double> s(static_cast<std::size_t>(t + 1));
        for (int j = 0; j <= t; ++j) s[static_cast<std::size_t>(j)] = qh.row(t).dot(kh.row(j)) * scale;
        detail::softmax_inplace(s);
        for (int j = 0; j <= t; ++j) att(t, j) = s[static_cast<std::size_t>(j)];
      }
      lc.o.middleCols(h * dh, dh) = att * lc.v.middleCols(h * dh, dh);
    }
    lc.x_mid = lc.x_in + lc.o * lp.wo;
    lc.w = detail::layer_norm(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.xhat2, lc.rstd2);
    lc.z = lc.w * lp.w1;
    lc.z.rowwise() += lp.b1.row(0);
    lc.a = lc.z.unaryExpr([nl = cfg.nonlinearity](double v) { return detail::activate(nl, v); });
    if (patch != nullptr) {
      for (const auto& e : patch->entries) {
        if (e.neuron.layer != l) continue;
        double& a = lc.a(T - 1, e.neuron.neuron);
        a = apply_patch_value(a, patch->mode, e.value);
      }
    }
    x = lc.x_mid + lc.a * lp.w2;
    x.rowwise() += lp.b2.row(0);
  }
  c.x_final = x;
  c.y = detail::layer_norm(x, params.lnf_g, params.lnf_b, c.xhatf, c.rstdf);
  return c;
}

inline std::vector<double> logits_at(const Params& params, const Vec& y) {
  Vec logits = y * params.w_out.transpose();
  return {logits.data(), logits.data() + logits.size()};
}

inline TokenDistribution distribution_at(const Params& params, const Vec& y) {
  TokenDistribution out{logits_at(params, y)};
  detail::softmax_inplace(out.probs);
  return out;
}

namespace detail {
inline std::vector<int> truncated_tokens(const Prompt& prompt) {
  return {prompt.tokens.begin(), prompt.tokens.begin() + prompt.answer_position + 1};
}
}  // namespace detail

inline ForwardTrace forward(const Params& params, const Prompt& prompt) {
  validate_prompt(params.config, prompt);
  const SequenceCache c = forward_sequence(params, detail::truncated_tokens(prompt));
  const int last = c.length() - 1;
  ForwardTrace tr{NeuronMap<double>(params.config.n_layers, params.config.d_ff), {}};
  for (int l = 0; l < params.config.n_layers; ++l)
    for (int n = 0; n < params.config.d_ff; ++n)
      tr.activations[{l, n}] = c.layers[static_cast<std::size_t>(l)].a(last, n);
  tr.output = distribution_at(params, c.y.row(last));
  return tr;
}

/// Forward with activation overrides at the answer position; the trace holds
/// the post-patch activations.
inline ForwardTrace forward_trace_with_patch(const Params& params, const Prompt& prompt,
                                             const PatchSpec& patch) {
  validate_prompt(params.config, prompt);
  detail::check_patch(params.config, patch);
  const SequenceCache c = forward_sequence(params, detail::truncated_tokens(prompt), &patch);
  const int last = c.length() - 1;
  ForwardTrace tr{NeuronMap<double>(params.config.n_layers, params.config.d_ff), {}};
  for (int l = 0; l < params.config.n_layers; ++l)
    for (int n = 0; n < params.config.d_ff; ++n)
      tr.activations[{l, n}] = c.layers[static_cast<std::size_t>(l)].a(last, n);
  tr.output = distribution_at(params, c.y.row(last));
  return tr;
}

inline TokenDistribution forward_with_patch(const Params& params, const Prompt& prompt,
                                            const PatchSpec& patch) {
  return forward_trace_with_patch(params, prompt, patch).output;
}

// ---------------------------------------------------------------------------
// Answer-position session: cached keys/values, last-position recompute
// ---------------------------------------------------------------------------

/// State of the answer position through every layer.
struct LastLayerState {
  Vec x_in, xhat1;
  double rstd1 = 0.0;
  Vec u, q, k, v;
  std::vector<std::vector<double>> att;  // per head, length T
  Vec o, x_mid, xhat2;
  double rstd2 = 0.0;
  Vec w, z, a;
};

struct LastState {
  std::vector<LastLayerState> layers;
  Vec x_final, xhatf;
  double rstdf = 0.0;
  Vec y;
  std::vector<double> probs;
};

/// One prompt's forward pass, cached so that patched evaluations and
/// gradients only recompute the answer position. Keys and values of earlier
/// positions do not depend on activations at the answer position (causal
/// attention), so they are reused verbatim. The params must outlive the
/// session.
class PromptSession {
 public:
  PromptSession(const Params& params, const Prompt& prompt) : params_(&params), prompt_(prompt) {
    validate_prompt(params.config, prompt);
    const SequenceCache c = forward_sequence(params, detail::truncated_tokens(prompt));
    T_ = c.length();
    const int last = T_ - 1;
    const int H = params.config.n_heads;
    keys_.reserve(c.layers.size());
    values_.reserve(c.layers.size());
    base_.layers.resize(c.layers.size());
    for (std::size_t l = 0; l < c.layers.size(); ++l) {
      const LayerCache& lc = c.layers[l];
      keys_.push_back(lc.k);
      values_.push_back(lc.v);
      LastLayerState& s = base_.layers[l];
      s.x_in = lc.x_in.row(last);
      s.xhat1 = lc.xhat1.row(last);
      s.rstd1 = lc.rstd1(last);
      s.u = lc.u.row(last);
      s.q = lc.q.row(last);
      s.k = lc.k.row(last);
      s.v = lc.v.row(last);
      s.att.assign(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(T_)));
      for (int h = 0; h < H; ++h)
        for (int j = 0; j < T_; ++j) s.att[static_cast<std::size_t>(h)][static_cast<std::size_t>(j)] =
            lc.att[static_cast<std::size_t>(h)](last, j);
      s.o = lc.o.row(last);
      s.x_mid = lc.x_mid.row(last);
      s.xhat2 = lc.xhat2.row(last);
      s.rstd2 = lc.rstd2(last);
      s.w = lc.w.row(last);
      s.z = lc.z.row(last);
      s.a = lc.a.row(last);
    }
    base_.x_final = c.x_final.row(last);
    base_.xhatf = c.xhatf.row(last);
    base_.rstdf = c.rstdf(last);
    base_.y = c.y.row(last);
    base_.probs = distribution_at(params, base_.y).probs;
  }

  const Params& params() const { return *params_; }
  const Prompt& prompt() const { return prompt_; }
  const LastState& baseline() const { return base_; }

  double activation(NeuronId id) const {
    return base_.layers[static_cast<std::size_t>(id.layer)].a(id.neuron);
  }
  NeuronMap<double> activations() const {
    const ModelConfig& cfg = params_->config;
    NeuronMap<double> out(cfg.n_layers, cfg.d_ff);
    for (int l = 0; l < cfg.n_layers; ++l)
      for (int n = 0; n < cfg.d_ff; ++n) out[{l, n}] = base_.layers[static_cast<std::size_t>(l)].a(n);
    return out;
  }

  /// Answer-position state with the patch applied.
  LastState evaluate(const PatchSpec& patch) const {
    if (patch.empty()) return base_;
    detail::check_patch(params_->config, patch);
    LastState s = base_;
    recompute(s, patch);
    return s;
  }

  double target_value(const PatchSpec& patch, int token,
                      TargetQuantity q = TargetQuantity::probability) const {
    const LastState s = evaluate(patch);
    const double p = s.probs[static_cast<std::size_t>(token)];
    return q == TargetQuantity::probability ? p : std::log(p);
  }

  /// d(target quantity)/d(post-nonlinearity activation) at the answer position
  /// for every neuron in layers >= stop_layer (others left zero), evaluated at
  /// the patched state. Neurons pinned by a set_value patch do not pass
  /// gradient to their pre-activation.
  NeuronMap<double> gradient(int token, const PatchSpec& patch = {}, int stop_layer = 0,
                             TargetQuantity q = TargetQuantity::probability) const {
    const LastState s = evaluate(patch);
    const auto& probs = s.probs;
    const double pt = probs[static_cast<std::size_t>(token)];
    const auto V = static_cast<Eigen::Index>(probs.size());
    Vec dlogits(V);
    for (Eigen::Index j = 0; j < V; ++j) {
      const double delta = (j == token) ? 1.0 : 0.0;
      dlogits(j) = q == TargetQuantity::probability ? pt * (delta - probs[static_cast<std::size_t>(j)])
                                                    : delta - probs[static_cast<std::size_t>(j)];
    }
    return backward(s, dlogits, patch, stop_layer);
  }

  /// Backward from an arbitrary upstream gradient on the logits.
  NeuronMap<double> backward(const LastState& s, const Vec& dlogits, const PatchSpec& patch,
                             int stop_layer) const {
    const Params& P = *params_;
    const ModelConfig& cfg = P.config;
    const int H = cfg.n_heads, dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    NeuronMap<double> grads(cfg.n_layers, cfg.d_ff);

    const Vec dy = dlogits * P.w_out;
    Vec dx = detail::layer_norm_backward(dy, s.xhatf, s.rstdf, P.lnf_g);

    for (int l = cfg.n_layers - 1; l >= stop_layer; --l) {
      const LayerParams& lp = P.layers[static_cast<std::size_t>(l)];
      const LastLayerState& st = s.layers[static_cast<std::size_t>(l)];
      const Vec da = dx * lp.w2.transpose();
      for (int n = 0; n < cfg.d_ff; ++n) grads[{l, n}] = da(n);
      if (l == stop_layer) break;

      Vec dz(cfg.d_ff);
      for (int n = 0; n < cfg.d_ff; ++n) dz(n) = da(n) * detail::activate_grad(cfg.nonlinearity, st.z(n));
      if (patch.mode == PatchMode::set_value)
        for (const auto& e : patch.entries)
          if (e.neuron.layer == l) dz(e.neuron.neuron) = 0.0;
      const Vec dw = dz * lp.w1.transpose();
      Vec dx_mid = dx + detail::layer_norm_backward(dw, st.xhat2, st.rstd2, lp.ln2_g);

      // attention, last row only; earlier keys/values are constants
      const Vec d_o = dx_mid * lp.wo.transpose();
      Vec dq = Vec::Zero(cfg.d_model), dk = Vec::Zero(cfg.d_model), dv = Vec::Zero(cfg.d_model);
      const Mat& K = keys_[static_cast<std::size_t>(l)];
      const Mat& Vv = values_[static_cast<std::size_t>(l)];
      for (int h = 0; h < H; ++h) {
        const auto& att = st.att[static_cast<std::size_t>(h)];
        const auto doh = d_o.segment(h * dh, dh);
        std::vector<double> datt(static_cast<std::size_t>(T_));
        const auto last = static_cast<std::size_t>(T_ - 1);
        for (int j = 0; j < T_ - 1; ++j) datt[static_cast<std::size_t>(j)] = doh.dot(Vv.row(j).segment(h * dh, dh));
        datt[last] = doh.dot(st.v.segment(h * dh, dh));
        double weighted = 0.0;
        for (int j = 0; j < T_; ++j) weighted += att[static_cast<std::size_t>(j)] * datt[static_cast<std::size_t>(j)];
        for (int j = 0; j < T_ - 1; ++j) {
          const double ds = att[static_cast<std::size_t>(j)] * (datt[static_cast<std::size_t>(j)] - weighted) * scale;
          dq.segment(h * dh, dh) += ds * K.row(j).segment(h * dh, dh);
        }
        const double ds_last = att[last] * (datt[last] - weighted) * scale;
        dq.segment(h * dh, dh) += ds_last * st.k.segment(h * dh, dh);
        dk.segment(h * dh, dh) += ds_last * st.q.segment(h * dh, dh);
        dv.segment(h * dh, dh) += att[static_cast<std::size_t>(T_ - 1)] * doh;
      }
      const Vec du = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
      dx = dx_mid + detail::layer_norm_backward(du, st.xhat1, st.rstd1, lp.ln1_g);
    }
    return grads;
  }

 private:
  void recompute(LastState& s, const PatchSpec& patch) const {
    const Params& P = *params_;
    const ModelConfig& cfg = P.config;
    const int H = cfg.n_heads, dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int start = patch.first_layer();

    auto apply = [&](int l, Vec& a) {
      for (const auto& e : patch.entries)
        if (e.neuron.layer == l) a(e.neuron.neuron) = apply_patch_value(a(e.neuron.neuron), patch.mode, e.value);
    };

    Vec x;
    for (int l = start; l < cfg.n_layers; ++l) {
      const LayerParams& lp = P.layers[static_cast<std::size_t>(l)];
      LastLayerState& st = s.layers[static_cast<std::size_t>(l)];
      if (l > start) {
        st.x_in = x;
        Mat xin = x, xhat;
        Eigen::VectorXd rstd;
        st.u = detail::layer_norm(xin, lp.ln1_g, lp.ln1_b, xhat, rstd);
        st.xhat1 = xhat.row(0);
        st.rstd1 = rstd(0);
        st.q = st.u * lp.wq;
        st.k = st.u * lp.wk;
        st.v = st.u * lp.wv;
        const Mat& K = keys_[static_cast<std::size_t>(l)];
        const Mat& Vv = values_[static_cast<std::size_t>(l)];
        st.o = Vec::Zero(cfg.d_model);
        for (int h = 0; h < H; ++h) {
          const auto qh = st.q.segment(h * dh, dh);
          std::vector<double> sc(static_cast<std::size_t>(T_));
          for (int j = 0; j < T_ - 1; ++j) sc[static_cast<std::size_t>(j)] = qh.dot(K.row(j).segment(h * dh, dh)) * scale;
          sc[static_cast<std::size_t>(T_ - 1)] = qh.dot(st.k.segment(h * dh, dh)) * scale;
          detail::softmax_inplace(sc);
          auto oh = st.o.segment(h * dh, dh);
          for (int j = 0; j < T_ - 1; ++j) oh += sc[static_cast<std::size_t>(j)] * Vv.row(j).segment(h * dh, dh);
          oh += sc[static_cast<std::size_t>(T_ - 1)] * st.v.segment(h * dh, dh);
          st.att[static_cast<std::size_t>(h)] = std::move(sc);
        }
        st.x_mid = st.x_in + st.o * lp.wo;
        Mat xm = st.x_mid;
        st.w = detail::layer_norm(xm, lp.ln2_g, lp.ln2_b, xhat, rstd);
        st.xhat2 = xhat.row(0);
        st.rstd2 = rstd(0);
        st.z = st.w * lp.w1 + lp.b1;
        st.a = st.z.unaryExpr([nl = cfg.nonlinearity](double v) { return detail::activate(nl, v); });
      }
      apply(l, st.a);
      x = st.x_mid + st.a * lp.w2 + lp.b2;
    }
    s.x_final = x;
    Mat xf = x, xhat;
    Eigen::VectorXd rstd;
    s.y = detail::layer_norm(xf, P.lnf_g, P.lnf_b, xhat, rstd);
    s.xhatf = xhat.row(0);
    s.rstdf = rstd(0);
    s.probs = distribution_at(P, s.y).probs;
  }

  const Params* params_;
  Prompt prompt_;
  int T_ = 0;
  std::vector<Mat> keys_, values_;
  LastState base_;
};

/// d p(target) / d a for every neuron at the answer position (exact backprop).
inline NeuronMap<double> grad_wrt_activations(const Params& params, const Prompt& prompt, int target_token,
                                              TargetQuantity q = TargetQuantity::probability) {
  const PromptSession session(params, prompt);
  if (target_token < 0 || target_token >= params.config.vocab_size) throw InputError("target token out of vocab");
  return session.gradient(target_token, {}, 0, q);
}

}  // namespace neglab
