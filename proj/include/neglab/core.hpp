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
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace neglab {

/// Bad arguments or preconditions violated by the caller.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed external file (task JSONL, model binary, probe file).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss during training.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::int64_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// A statistic is undefined for the given data (zero variance, all-zero mass,
/// single-class training split).
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One intermediate feed-forward unit.
struct NeuronId {
  int layer = 0;
  int neuron = 0;

  friend bool operator==(const NeuronId&, const NeuronId&) = default;
  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

/// Dense per-neuron storage, row-major over (layer, neuron).
template <typename T>
class NeuronMap {
 public:
  NeuronMap() = default;
  NeuronMap(int n_layers, int d_ff, T fill = T{})
      : n_layers_(n_layers), d_ff_(d_ff),
        values_(static_cast<std::size_t>(n_layers) * d_ff, fill) {}

  int n_layers() const noexcept { return n_layers_; }
  int d_ff() const noexcept { return d_ff_; }
  std::size_t size() const noexcept { return values_.size(); }

  T& operator[](NeuronId id) { return values_[flat(id)]; }
  const T& operator[](NeuronId id) const { return values_[flat(id)]; }
  T& at_flat(std::size_t i) { return values_[i]; }
  const T& at_flat(std::size_t i) const { return values_[i]; }

  NeuronId id_of(std::size_t flat_index) const {
    return {static_cast<int>(flat_index / d_ff_), static_cast<int>(flat_index % d_ff_)};
  }
  std::size_t flat(NeuronId id) const {
    return static_cast<std::size_t>(id.layer) * d_ff_ + id.neuron;
  }

  const std::vector<T>& values() const noexcept { return values_; }
  std::vector<T>& values() noexcept { return values_; }

 private:
  int n_layers_ = 0;
  int d_ff_ = 0;
  std::vector<T> values_;
};

/// Derives an independent stream seed from a master seed and a key
/// (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Three-valued sign; sign(0) = 0.
inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace neglab
