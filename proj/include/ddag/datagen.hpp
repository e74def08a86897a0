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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddag/tensor.hpp"

namespace ddag {

inline constexpr const char* kManifestVersion = "ddag-dataset/1";
inline constexpr const char* kManifestFile = "manifest.json";

enum class Modality { visible, infrared };

inline int channel_count(Modality m) { return m == Modality::visible ? 3 : 1; }
std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct GeneratorConfig {
  int num_identities = 40;
  int images_per_identity_per_modality = 10;
  int image_height = 72;
  int image_width = 36;
  int stripes = 6;
  double noise_level = 0.05;
  double clutter_probability = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

// Per-identity rendering offsets layered on top of the shared stripe codes.
struct ModalityGapParams {
  double visible_gain = 1.0;
  double infrared_offset = 0.0;
};

struct IdentitySpec {
  int identity_id = 0;
  std::vector<std::array<double, 3>> part_codes;  // one RGB code per stripe
  ModalityGapParams modality_gap;
};

struct SampleRecord {
  std::string path;  // relative to the manifest directory
  int identity = 0;
  Modality modality = Modality::visible;
  int camera = 0;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetSplit {
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  bool operator==(const DatasetSplit&) const = default;
};

struct DatasetManifest {
  std::string version = kManifestVersion;
  int image_height = 0;
  int image_width = 0;
  std::vector<int> identities;
  std::vector<SampleRecord> records;
  DatasetSplit split;
  // Directory holding manifest.json; not serialized.
  std::filesystem::path root;

  // Checks the structural invariants. `min_per_modality` > 0 additionally
  // requires that many train images per identity and modality.
  void validate(int min_per_modality = 0) const;
  std::vector<SampleRecord> records_for(const std::vector<int>& ids) const;
};

nlohmann::json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
// Accepts either a manifest file or the directory containing manifest.json.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Samples identity appearances. Colliding codes are redrawn so any two
// identities differ by at least `kMinStripeContrast` in some stripe of the
// infrared rendering (and therefore also in the visible one).
std::vector<IdentitySpec> draw_identities(const GeneratorConfig& config);
inline constexpr double kMinStripeContrast = 0.1;

// Dataset-wide monotone luminance remap used for the infrared modality.
struct InfraredCurve {
  std::array<double, 5> knots{};  // values at luminance 0, .25, .5, .75, 1
  double operator()(double luminance) const;
};
InfraredCurve draw_infrared_curve(std::uint64_t seed);

// Renders one image; `index` selects the per-record noise stream.
Tensor render_sample(const GeneratorConfig& config, const IdentitySpec& identity, const InfraredCurve& curve,
                     Modality modality, int index);

// Writes images/ and manifest.json below out_dir. The split is left empty.
DatasetManifest generate_dataset(const GeneratorConfig& config, const std::filesystem::path& out_dir);

// Identity-disjoint split. The train side gets ceil(fraction * N) ids,
// clamped so that both sides are non-empty.
DatasetManifest split_train_test(DatasetManifest manifest, double train_fraction, std::uint64_t seed);

// (channels, H, W) in [0,1].
Tensor load_image(const DatasetManifest& manifest, const SampleRecord& record);

}  // namespace ddag
