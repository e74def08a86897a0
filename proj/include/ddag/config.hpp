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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddag/datagen.hpp"
#include "ddag/evaluation.hpp"
#include "ddag/objectives.hpp"
#include "ddag/trainer.hpp"

namespace ddag {

// Union of generator, sampler, model, trainer, eval and ablation settings.
// The defaults double as the schema: any key they lack is rejected, and a
// value must keep the JSON type of its default.
class ExperimentConfig {
 public:
  ExperimentConfig();

  static const nlohmann::json& defaults();
  static ExperimentConfig load(const std::filesystem::path& file);
  static ExperimentConfig from_json(const nlohmann::json& j);

  // Merges `j` over the current values. Throws ConfigError naming the first
  // unknown key or mistyped value by its dotted path.
  void merge(const nlohmann::json& j);
  // "trainer.epochs=40"; the value is parsed as JSON, else taken as a string.
  void apply_override(const std::string& assignment);
  void set(const std::string& dotted_key, const nlohmann::json& value);

  const nlohmann::json& resolved() const { return data_; }
  void write_resolved(const std::filesystem::path& file) const;

  std::uint64_t seed() const;
  GeneratorConfig generator() const;
  double train_fraction() const;
  TrainConfig trainer() const;
  std::vector<int> ranks() const;
  std::vector<Direction> directions() const;
  std::vector<Mode> ablation_modes() const;
  std::vector<std::uint64_t> ablation_seeds() const;

 private:
  nlohmann::json data_;
};

}  // namespace ddag
