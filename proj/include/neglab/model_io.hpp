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

// Model parameter file (little-endian):
//
//   bytes 0..3   magic "NGLB"
//   u32          format version (1)
//   i64 x 8      n_layers, d_model, d_ff, n_heads, vocab_size, max_seq,
//                nonlinearity (0 = gelu, 1 = relu), seed
//   f32 ...      every tensor of Params::tensors(), row-major, in that order
//
// The sidecar "<path>.cfg" holds the same config as `key = value` lines.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "neglab/model.hpp"

namespace neglab {

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw FormatError("model file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline std::string config_to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "n_layers = " << c.n_layers << "\n"
     << "d_model = " << c.d_model << "\n"
     << "d_ff = " << c.d_ff << "\n"
     << "n_heads = " << c.n_heads << "\n"
     << "vocab_size = " << c.vocab_size << "\n"
     << "max_seq = " << c.max_seq << "\n"
     << "nonlinearity = " << (c.nonlinearity == Nonlinearity::gelu ? "gelu" : "relu") << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

/// Parses `key = value` lines; unknown keys are a format error, missing keys
/// keep the defaults of `base`.
inline ModelConfig config_from_text(const std::string& text, ModelConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "n_layers") base.n_layers = std::stoi(val);
      else if (key == "d_model") base.d_model = std::stoi(val);
      else if (key == "d_ff") base.d_ff = std::stoi(val);
      else if (key == "n_heads") base.n_heads = std::stoi(val);
      else if (key == "vocab_size") base.vocab_size = std::stoi(val);
      else if (key == "max_seq") base.max_seq = std::stoi(val);
      else if (key == "seed") base.seed = std::stoull(val);
      else if (key == "nonlinearity") {
        if (val == "gelu") base.nonlinearity = Nonlinearity::gelu;
        else if (val == "relu") base.nonlinearity = Nonlinearity::relu;
        else throw FormatError("config line " + std::to_string(lineno) + ": unknown nonlinearity " + val);
      } else {
        throw FormatError("config line " + std::to_string(lineno) + ": unknown key " + key);
      }
    } catch (const std::logic_error&) {
      throw FormatError("config line " + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  return base;
}

inline void save_params(const Params& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write("NGLB", 4);
  detail::write_le<std::uint32_t>(os, kModelFormatVersion);
  const ModelConfig& c = params.config;
  for (std::int64_t v : {std::int64_t{c.n_layers}, std::int64_t{c.d_model}, std::int64_t{c.d_ff},
                         std::int64_t{c.n_heads}, std::int64_t{c.vocab_size}, std::int64_t{c.max_seq},
                         static_cast<std::int64_t>(c.nonlinearity), static_cast<std::int64_t>(c.seed)})
    detail::write_le<std::int64_t>(os, v);
  for (const Mat* m : params.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) detail::write_le<float>(os, static_cast<float>(m->data()[i]));
  if (!os) throw FormatError("write failed for " + path);
  std::ofstream cfg(path + ".cfg");
  cfg << config_to_text(c);
}

inline Params load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NGLB", 4) != 0) throw FormatError(path + ": bad magic");
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kModelFormatVersion) throw FormatError(path + ": unsupported version " + std::to_string(version));
  ModelConfig c;
  c.n_layers = static_cast<int>(detail::read_le<std::int64_t>(is));
  c.d_model = static_cast<int>(detail::read_le<std::int64_t>(is));
  c.d_ff = static_cast<int>(detail::read_le<std::int64_t>(is));
  c.n_heads = static_cast<int>(detail::read_le<std::int64_t>(is));
  c.vocab_size = static_cast<int>(detail::read_le<std::int64_t>(is));
  c.max_seq = static_cast<int>(detail::read_le<std::int64_t>(is));
  const auto nl = detail::read_le<std::int64_t>(is);
  if (nl != 0 && nl != 1) throw FormatError(path + ": bad nonlinearity code");
  c.nonlinearity = static_cast<Nonlinearity>(nl);
  c.seed = static_cast<std::uint64_t>(detail::read_le<std::int64_t>(is));
  try {
    c.validate();
  } catch (const InputError& e) {
    throw FormatError(path + ": " + e.what());
  }
  Params p = Params::zeros(c);
  for (Mat* m : p.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = detail::read_le<float>(is);
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes");
  return p;
}

}  // namespace neglab
