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

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "neglab/model_io.hpp"
#include "neglab/tasks.hpp"

#ifndef NEGLAB_TEST_CACHE_DIR
#define NEGLAB_TEST_CACHE_DIR "test_cache"
#endif

namespace neglab::testing {

struct TrainedTask {
  TaskSet tasks;
  Params params;
};

inline TaskGenSpec binary_spec() {
  TaskGenSpec spec;
  spec.kind = TaskKind::copy_match;
  spec.n_options = 2;
  spec.n_examples = 1600;
  spec.seed = 1;
  return spec;
}

inline TrainOptions fixture_train_options() {
  TrainOptions opt;
  opt.steps = 300;
  opt.batch_size = 16;
  opt.learning_rate = 3e-3;
  opt.label_smoothing = 0.1;
  opt.seed = 1;
  return opt;
}

/// Loads the model from the cache or trains and stores it (write to a
/// temporary file, then rename, so concurrent test binaries never read a
/// partial file).
inline Params cached_model(const std::string& name, const TaskSet& ts, const ModelConfig& cfg,
                           const TrainOptions& opt) {
  namespace fs = std::filesystem;
  const fs::path dir = NEGLAB_TEST_CACHE_DIR;
  const fs::path path = dir / (name + ".bin");
  if (fs::exists(path)) {
    try {
      return load_params(path.string());
    } catch (const FormatError&) {
    }
  }
  Params p = train_on_tasks(ts, cfg, opt).first;
  fs::create_directories(dir);
  const fs::path tmp = dir / (name + ".bin.tmp" + std::to_string(::getpid()));
  save_params(p, tmp.string());
  fs::rename(tmp, path);
  fs::remove(tmp.string() + ".cfg");
  return p;
}

/// Copy-match, two options, default toy model.
inline const TrainedTask& trained_binary() {
  static const TrainedTask t = [] {
    TrainedTask r;
    r.tasks = generate_synthetic(binary_spec());
    ModelConfig cfg;
    cfg.seed = 1;
    r.params = cached_model("copy_match_2_v3", r.tasks, cfg, fixture_train_options());
    return r;
  }();
  return t;
}

}  // namespace neglab::testing
