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

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "neglab/model.hpp"

namespace neglab {

/// One training sequence with next-token targets at chosen positions.
struct TrainingExample {
  std::vector<int> tokens;
  std::vector<std::pair<int, int>> targets;  // (position, token)
  std::vector<int> candidates;               // optional: restricts held-out argmax
};

/// Where label smoothing puts its mass: uniformly over the vocabulary, or
/// over the example's candidate tokens (vocabulary when it has none).
enum class SmoothingSupport { vocabulary, candidates };

struct TrainOptions {
  std::int64_t steps = 1000;
  double learning_rate = 3e-3;
  int batch_size = 16;
  int warmup_steps = 50;
  double grad_clip = 1.0;
  double label_smoothing = 0.1;
  SmoothingSupport smoothing_support = SmoothingSupport::candidates;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct TrainReport {
  double final_loss = 0.0;       // mean loss over the last min(50, steps) steps
  double heldout_accuracy = 0.0; // argmax (over candidates when given) == target
  std::vector<double> losses;
};

namespace detail {

/// Cross-entropy on the targets of one example; accumulates parameter
/// gradients (scaled by `weight`) into `grad`. Returns the summed loss.
inline double example_loss_and_grad(const Params& P, const TrainingExample& ex, double weight,
                                    double smoothing, SmoothingSupport support, Params& grad) {
  const ModelConfig& cfg = P.config;
  const int T = static_cast<int>(ex.tokens.size());
  const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const SequenceCache c = forward_sequence(P, ex.tokens);

  Mat dy = Mat::Zero(T, D);
  double loss = 0.0;
  const bool on_candidates = support == SmoothingSupport::candidates && !ex.candidates.empty();
  const double V = on_candidates ? static_cast<double>(ex.candidates.size()) : cfg.vocab_size;
  for (const auto& [pos, tok] : ex.targets) {
    Vec logits = c.y.row(pos) * P.w_out.transpose();
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    Vec probs = (logits.array() - lse).exp().matrix();
    Vec dlogits = probs;
    loss += -(1.0 - smoothing) * (logits(tok) - lse);
    if (on_candidates) {
      for (int k : ex.candidates) {
        loss -= smoothing * (logits(k) - lse) / V;
        dlogits(k) -= smoothing / V;
      }
    } else {
      loss -= smoothing * (logits.array() - lse).sum() / V;
      dlogits.array() -= smoothing / V;
    }
    dlogits(tok) -= 1.0 - smoothing;
    dlogits *= weight;
    grad.w_out.noalias() += dlogits.transpose() * c.y.row(pos);
    dy.row(pos) += dlogits * P.w_out;
  }

  Mat dx(T, D);
  for (int t = 0; t < T; ++t) {
    grad.lnf_g.row(0).array() += dy.row(t).array() * c.xhatf.row(t).array();
    grad.lnf_b.row(0) += dy.row(t);
    dx.row(t) = layer_norm_backward(dy.row(t), c.xhatf.row(t), c.rstdf(t), P.lnf_g);
  }

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = P.layers[static_cast<std::size_t>(l)];
    LayerParams& lg = grad.layers[static_cast<std::size_t>(l)];
    const LayerCache& lc = c.layers[static_cast<std::size_t>(l)];

    lg.b2.row(0) += dx.colwise().sum();
    lg.w2.noalias() += lc.a.transpose() * dx;
    Mat dz = dx * lp.w2.transpose();
    for (Eigen::Index i = 0; i < dz.size(); ++i) dz.data()[i] *= activate_grad(cfg.nonlinearity, lc.z.data()[i]);
    lg.b1.row(0) += dz.colwise().sum();
    lg.w1.noalias() += lc.w.transpose() * dz;
    const Mat dw = dz * lp.w1.transpose();
    Mat dx_mid = dx;
    for (int t = 0; t < T; ++t) {
      lg.ln2_g.row(0).array() += dw.row(t).array() * lc.xhat2.row(t).array();
      lg.ln2_b.row(0) += dw.row(t);
      dx_mid.row(t) += layer_norm_backward(dw.row(t), lc.xhat2.row(t), lc.rstd2(t), lp.ln2_g);
    }

    lg.wo.noalias() += lc.o.transpose() * dx_mid;
    const Mat d_o = dx_mid * lp.wo.transpose();
    Mat dq(T, D), dk(T, D), dv(T, D);
    for (int h = 0; h < H; ++h) {
      const Mat& A = lc.att[static_cast<std::size_t>(h)];
      const auto doh = d_o.middleCols(h * dh, dh);
      const Mat dA = doh * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = A.transpose() * doh;
      Mat dS = A.cwiseProduct(dA);
      const Eigen::VectorXd rows = dS.rowwise().sum();
      dS = A.cwiseProduct(dA.colwise() - rows) * scale;
      dq.middleCols(h * dh, dh) = dS * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dS.transpose() * lc.q.middleCols(h * dh, dh);
    }
    lg.wq.noalias() += lc.u.transpose() * dq;
    lg.wk.noalias() += lc.u.transpose() * dk;
    lg.wv.noalias() += lc.u.transpose() * dv;
    const Mat du = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
    for (int t = 0; t < T; ++t) {
      lg.ln1_g.row(0).array() += du.row(t).array() * lc.xhat1.row(t).array();
      lg.ln1_b.row(0) += du.row(t);
      dx.row(t) = dx_mid.row(t) + layer_norm_backward(du.row(t), lc.xhat1.row(t), lc.rstd1(t), lp.ln1_g);
    }
  }
  for (int t = 0; t < T; ++t) {
    grad.tok_emb.row(ex.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    grad.pos_emb.row(t) += dx.row(t);
  }
  return loss;
}

inline void zero_like(Params& g) {
  for (Mat* m : g.tensors()) m->setZero();
}

}  // namespace detail

/// Mean cross-entropy and full parameter gradient over `batch` (exposed for
/// gradient checks).
inline std::pair<double, Params> loss_and_gradient(const Params& params, const std::vector<TrainingExample>& batch,
                                                   double smoothing = 0.0,
                                                   SmoothingSupport support = SmoothingSupport::vocabulary) {
  Params grad = Params::zeros(params.config);
  std::size_t n_targets = 0;
  for (const auto& ex : batch) n_targets += ex.targets.size();
  if (n_targets == 0) throw InputError("batch has no targets");
  const double w = 1.0 / static_cast<double>(n_targets);
  double loss = 0.0;
  for (const auto& ex : batch) loss += detail::example_loss_and_grad(params, ex, w, smoothing, support, grad);
  return {loss * w, std::move(grad)};
}

inline bool predicts_targets(const Params& params, const TrainingExample& ex, std::size_t target_index) {
  const auto& [pos, tok] = ex.targets[target_index];
  Prompt prompt{ex.tokens, pos, tok};
  const TokenDistribution dist = forward(params, prompt).output;
  int best = -1;
  double best_p = -1.0;
  if (ex.candidates.empty()) {
    for (int j = 0; j < static_cast<int>(dist.probs.size()); ++j)
      if (dist[j] > best_p) best_p = dist[j], best = j;
  } else {
    for (int j : ex.candidates)
      if (dist[j] > best_p) best_p = dist[j], best = j;
  }
  return best == tok;
}

/// Fraction of examples whose final target is the argmax prediction.
inline double heldout_accuracy(const Params& params, const std::vector<TrainingExample>& heldout) {
  if (heldout.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : heldout)
    if (!ex.targets.empty() && predicts_targets(params, ex, ex.targets.size() - 1)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(heldout.size());
}

/// Adam with linear warmup, global-norm clipping, optional decoupled weight
/// decay on matrices. Deterministic for fixed (config.seed, options.seed).
inline std::pair<Params, TrainReport> train_toy(const std::vector<TrainingExample>& data, const ModelConfig& config,
                                                const TrainOptions& opt,
                                                const std::vector<TrainingExample>& heldout = {}) {
  if (data.empty()) throw InputError("training data is empty");
  if (opt.batch_size < 1) throw InputError("batch_size must be >= 1");
  Params params = Params::initialize(config);
  for (const auto& ex : data) {
    if (static_cast<int>(ex.tokens.size()) > config.max_seq) throw InputError("training sequence exceeds max_seq");
    for (int t : ex.tokens)
      if (t < 0 || t >= config.vocab_size) throw InputError("training token out of vocab");
  }
  TrainReport report;
  if (opt.steps <= 0) {
    report.heldout_accuracy = heldout_accuracy(params, heldout);
    return {std::move(params), report};
  }

  Params m = Params::zeros(config), v = Params::zeros(config);
  auto pm = params.tensors();
  auto mm = m.tensors();
  auto vm = v.tensors();
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<TrainingExample> batch;

  for (std::int64_t step = 1; step <= opt.steps; ++step) {
    batch.clear();
    for (int i = 0; i < opt.batch_size; ++i) batch.push_back(data[pick(rng)]);
    auto [loss, grad] = loss_and_gradient(params, batch, opt.label_smoothing, opt.smoothing_support);
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss", step);
    report.losses.push_back(loss);

    auto gm = grad.tensors();
    double norm2 = 0.0;
    for (const Mat* g : gm) norm2 += g->squaredNorm();
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw TrainingError("non-finite gradient", step);
    const double clip = (opt.grad_clip > 0.0 && norm > opt.grad_clip) ? opt.grad_clip / norm : 1.0;
    const double warm = opt.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step) / opt.warmup_steps) : 1.0;
    const double lr = opt.learning_rate * warm;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < pm.size(); ++i) {
      Mat& p = *pm[i];
      const Mat g = *gm[i] * clip;
      mm[i]->array() = b1 * mm[i]->array() + (1.0 - b1) * g.array();
      vm[i]->array() = b2 * vm[i]->array() + (1.0 - b2) * g.array().square();
      p.array() -= lr * (mm[i]->array() / c1) / ((vm[i]->array() / c2).sqrt() + eps);
      if (opt.weight_decay > 0.0 && p.rows() > 1) p *= (1.0 - lr * opt.weight_decay);
    }
  }
  params.round_to_float();
  const std::size_t tail = std::min<std::size_t>(50, report.losses.size());
  double sum = 0.0;
  for (std::size_t i = report.losses.size() - tail; i < report.losses.size(); ++i) sum += report.losses[i];
  report.final_loss = sum / static_cast<double>(tail);
  report.heldout_accuracy = heldout_accuracy(params, heldout);
  return {std::move(params), report};
}

}  // namespace neglab
