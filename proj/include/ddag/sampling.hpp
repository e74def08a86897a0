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

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ddag/datagen.hpp"
#include "ddag/rng.hpp"

namespace ddag {

// Identity-balanced batch of K = 2mn record indices. For each identity the
// m visible samples come first, followed by its m infrared samples.
struct BatchIndices {
  std::vector<std::size_t> records;  // indices into the train record list
  std::vector<int> labels;           // identity ids
  std::vector<bool> visible;         // modality mask
  // Identities whose visible or infrared side had to be drawn with
  // replacement because fewer than m images exist.
  std::vector<int> resampled_identities;

  std::size_t size() const { return records.size(); }
  bool operator==(const BatchIndices&) const = default;
};

// Throws ContractError describing the first violated batch invariant.
void check_batch_invariants(const BatchIndices& batch, const std::vector<SampleRecord>& records, int n, int m);

// Identities with at least one image in each modality, ascending.
std::vector<int> eligible_identities(const std::vector<SampleRecord>& records);

BatchIndices sample_identity_balanced(const std::vector<SampleRecord>& records, int n, int m, Rng& rng);

// floor(N_id / n) batches over a shuffled identity order; a pure function of
// (records, n, m, seed, epoch). The trailing partial batch is dropped.
std::vector<BatchIndices> epoch_batches(const std::vector<SampleRecord>& records, int n, int m,
                                        std::uint64_t seed, int epoch);

}  // namespace ddag
