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
#include "ddag/sampling.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "ddag/errors.hpp"

namespace ddag {

namespace {

struct IdentityPool {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> infrared;
};

std::map<int, IdentityPool> pools_by_identity(const std::vector<SampleRecord>& records) {
  std::map<int, IdentityPool> pools;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& pool = pools[records[i].identity];
    (records[i].modality == Modality::visible ? pool.visible : pool.infrared).push_back(i);
  }
  return pools;
}

// m draws from `pool`; without replacement when the pool is large enough.
std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, int m, Rng& rng, bool& replaced) {
  std::vector<std::size_t> out;
  if (static_cast<int>(pool.size()) >= m) {
    std::vector<std::size_t> shuffled = pool;
    rng.shuffle(shuffled.begin(), shuffled.end());
    out.assign(shuffled.begin(), shuffled.begin() + m);
  } else {
    replaced = true;
    for (int k = 0; k < m; ++k) out.push_back(pool[rng.below(pool.size())]);
  }
  return out;
}

BatchIndices assemble(const std::map<int, IdentityPool>& pools, const std::vector<int>& ids, int m, Rng& rng) {
  BatchIndices batch;
  for (int id : ids) {
    const auto& pool = pools.at(id);
    bool replaced = false;
    const auto vis = draw(pool.visible, m, rng, replaced);
    const auto ir = draw(pool.infrared, m, rng, replaced);
    for (auto r : vis) {
      batch.records.push_back(r);
      batch.labels.push_back(id);
      batch.visible.push_back(true);
    }
    for (auto r : ir) {
      batch.records.push_back(r);
      batch.labels.push_back(id);
      batch.visible.push_back(false);
    }
    if (replaced) batch.resampled_identities.push_back(id);
  }
  return batch;
}

void check_args(int n, int m) {
  if (n < 1 || m < 1) throw ConfigError("sampler n and m must be >= 1");
}

}  // namespace

std::vector<int> eligible_identities(const std::vector<SampleRecord>& records) {
  std::vector<int> out;
  for (const auto& [id, pool] : pools_by_identity(records))
    if (!pool.visible.empty() && !pool.infrared.empty()) out.push_back(id);
  return out;
}

void check_batch_invariants(const BatchIndices& batch, const std::vector<SampleRecord>& records, int n, int m) {
  const std::size_t k = static_cast<std::size_t>(2 * m * n);
  if (batch.records.size() != k || batch.labels.size() != k || batch.visible.size() != k)
    throw ContractError("batch has " + std::to_string(batch.records.size()) + " samples, expected 2mn = " +
                        std::to_string(k));
  std::map<int, std::pair<int, int>> counts;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& rec = records.at(batch.records[i]);
    if (rec.identity != batch.labels[i]) throw ContractError("batch label disagrees with its record");
    if ((rec.modality == Modality::visible) != batch.visible[i])
      throw ContractError("batch modality mask disagrees with its record");
    auto& c = counts[batch.labels[i]];
    (batch.visible[i] ? c.first : c.second)++;
  }
  if (static_cast<int>(counts.size()) != n)
    throw ContractError("batch has " + std::to_string(counts.size()) + " distinct labels, expected " +
                        std::to_string(n));
  for (const auto& [id, c] : counts)
    if (c.first != m || c.second != m)
      throw ContractError("identity " + std::to_string(id) + " has " + std::to_string(c.first) + "/" +
                          std::to_string(c.second) + " visible/infrared samples, expected " + std::to_string(m));
}

BatchIndices sample_identity_balanced(const std::vector<SampleRecord>& records, int n, int m, Rng& rng) {
  check_args(n, m);
  auto ids = eligible_identities(records);
  if (static_cast<int>(ids.size()) < n)
    throw SamplingError("need " + std::to_string(n) + " identities with both modalities, have " +
                        std::to_string(ids.size()));
  rng.shuffle(ids.begin(), ids.end());
  ids.resize(static_cast<std::size_t>(n));
  return assemble(pools_by_identity(records), ids, m, rng);
}

std::vector<BatchIndices> epoch_batches(const std::vector<SampleRecord>& records, int n, int m,
                                        std::uint64_t seed, int epoch) {
  check_args(n, m);
  auto ids = eligible_identities(records);
  if (static_cast<int>(ids.size()) < n)
    throw SamplingError("need " + std::to_string(n) + " identities with both modalities, have " +
                        std::to_string(ids.size()));
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(epoch), 0xba7cULL}));
  rng.shuffle(ids.begin(), ids.end());
  const auto pools = pools_by_identity(records);
  std::vector<BatchIndices> batches;
  for (std::size_t start = 0; start + static_cast<std::size_t>(n) <= ids.size(); start += static_cast<std::size_t>(n)) {
    std::vector<int> chunk(ids.begin() + static_cast<long>(start), ids.begin() + static_cast<long>(start) + n);
    batches.push_back(assemble(pools, chunk, m, rng));
  }
  return batches;
}

}  // namespace ddag
