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
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddag/datagen.hpp"
#include "ddag/model.hpp"
#include "ddag/objectives.hpp"
#include "ddag/rng.hpp"
#include "ddag/sampling.hpp"

namespace ddag {

struct LrStep {
  int epoch = 0;      // 1-based epoch from which the factor applies
  double factor = 1;  // multiplier of base_lr
};

struct TrainConfig {
  Mode mode = Mode::BPG;
  int n = 8;
  int m = 4;
  BackboneConfig backbone;
  int parts = 3;
  int heads = 4;
  int head_dim = 256;
  int epochs = 80;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int warmup_epochs = 10;
  std::vector<LrStep> decay{{30, 0.1}, {50, 0.01}};
  double margin = kDefaultMargin;
  int crop_padding = 4;
  double flip_probability = 0.5;
  int checkpoint_every = 10;
  std::uint64_t seed = 1;
  std::filesystem::path dataset;
  std::filesystem::path output_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Linear warmup from 0.1*base_lr (epoch 1) to base_lr (epoch warmup_epochs),
// then step decay. Epochs are 1-based.
double lr_at(int epoch, const TrainConfig& config);

struct TrainState {
  int epoch = 0;  // number of completed epochs
  std::unique_ptr<DdagModel> model;
  std::map<std::string, Tensor> velocity;
  std::optional<double> prev_mean_part_loss;
  Rng rng;
};

struct EpochSummary {
  int epoch = 0;
  std::vector<LossReport> steps;
  double mean_part_loss = 0.0;
  double next_weight = 0.0;

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  // Loads every train image into memory. Train identities are mapped to
  // classes 0..N-1 in ascending id order.
  Trainer(TrainConfig config, DatasetManifest manifest);

  TrainState initial_state() const;
  ModelConfig model_config() const;

  // One pass over epoch_batches(seed, epoch). Writes one JSON line per step
  // and one for the epoch to `log` when given. Throws TrainingAbort on a
  // non-finite loss.
  EpochSummary train_epoch(TrainState& state, std::ostream* log = nullptr) const;

  void save(const TrainState& state, const std::filesystem::path& file) const;
  TrainState load(const std::filesystem::path& file) const;

  const TrainConfig& config() const { return config_; }
  const std::vector<SampleRecord>& train_records() const { return records_; }
  int class_of(int identity) const { return class_of_.at(identity); }

 private:
  Tensor assemble_inputs(const BatchIndices& batch, Rng& rng) const;
  void sgd_step(TrainState& state, double lr) const;

  TrainConfig config_;
  DatasetManifest manifest_;
  std::vector<SampleRecord> records_;
  std::vector<Tensor> images_;
  std::map<int, int> class_of_;
};

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log;
  std::vector<EpochSummary> epochs;
};

// Trains to config.epochs, checkpointing every checkpoint_every epochs and at
// the end. With `resume_from`, continues from that checkpoint; log lines past
// the checkpoint's epoch are dropped before appending.
FitResult fit(const TrainConfig& config, const std::optional<std::filesystem::path>& resume_from = std::nullopt);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch);

}  // namespace ddag
