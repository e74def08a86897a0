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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddag/tensor.hpp"

namespace ddag {

inline constexpr const char* kCheckpointFormat = "ddag-ckpt/1";

// File layout:
//   8 bytes   magic "DDAGCKPT"
//   8 bytes   little-endian u64 header length N
//   N bytes   UTF-8 JSON header {format, config, epoch, rng_state, ...,
//             tensors: [{name, dtype:"f64", shape, offset, nbytes}]}
//   payload   little-endian IEEE-754 doubles; offsets are relative to the
//             payload start
struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

// `header` must not contain "format" or "tensors"; both are filled in here.
void save_checkpoint(const std::filesystem::path& file, nlohmann::json header,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);

// Throws IoError if the file cannot be read and FormatError if it is not a
// well-formed checkpoint.
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace ddag
