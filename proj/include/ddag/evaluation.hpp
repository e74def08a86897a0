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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddag/datagen.hpp"
#include "ddag/model.hpp"

namespace ddag {

inline const std::vector<int> kDefaultRanks{1, 5, 10, 20};

enum class Direction { visible_to_infrared, infrared_to_visible };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

struct EvalReport {
  Direction direction = Direction::visible_to_infrared;
  std::vector<int> ks;
  std::vector<double> rank_accuracy;  // parallel to ks
  double mean_ap = 0.0;
  Index num_query = 0;
  Index num_gallery = 0;

  double rank(int k) const;
  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row(const std::string& run) const;
};

// Restores a model from a checkpoint written by the trainer.
std::unique_ptr<DdagModel> load_model(const std::filesystem::path& checkpoint);

// Eval-mode representations (x*, or BN(x^o) without part attention), one row
// per record. Running BN statistics make rows independent of batching.
Tensor extract_features(DdagModel& model, const DatasetManifest& manifest, const std::vector<SampleRecord>& records,
                        Index batch_size = 64);

// (Nq,C) x (Ng,C) -> (Nq,Ng) Euclidean distances.
Tensor distance_matrix(const Tensor& query, const Tensor& gallery);

// Fraction of queries whose first same-label gallery item appears within the
// top k, ranking by ascending distance with ties broken by gallery index.
std::vector<double> cmc(const Tensor& distances, std::span<const int> query_labels,
                        std::span<const int> gallery_labels, std::span<const int> ks);

double mean_average_precision(const Tensor& distances, std::span<const int> query_labels,
                              std::span<const int> gallery_labels);

// All test images of the query modality against all test images of the other.
EvalReport evaluate(DdagModel& model, const DatasetManifest& manifest, Direction direction,
                    std::span<const int> ks = kDefaultRanks);
EvalReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest, Direction direction,
                    std::span<const int> ks = kDefaultRanks);

}  // namespace ddag
