/*
 * Copyright 2026 The ddag Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <string>
#include <vector>

#include "ddag/autograd.hpp"
#include "ddag/rng.hpp"

namespace ddag {

struct NamedParam {
  std::string name;
  Var var;
};

// Non-trainable state that still belongs in a checkpoint.
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

struct ParamSet {
  std::vector<NamedParam> params;
  std::vector<NamedBuffer> buffers;

  void add(std::string name, const Var& v) { params.push_back({std::move(name), v}); }
  void add_buffer(std::string name, Tensor* t) { buffers.push_back({std::move(name), t}); }
  const NamedParam* find(const std::string& name) const;
};

// Trainable leaf initialized with N(0, stddev^2).
Var normal_param(Shape shape, double stddev, Rng& rng);
Var constant_param(Shape shape, double value);

}  // namespace ddag
