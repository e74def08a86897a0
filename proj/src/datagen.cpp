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
#include "ddag/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "ddag/errors.hpp"
#include "ddag/png_io.hpp"
#include "ddag/rng.hpp"

namespace ddag {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Modality m) { return m == Modality::visible ? "visible" : "infrared"; }

Modality modality_from_string(const std::string& s) {
  if (s == "visible") return Modality::visible;
  if (s == "infrared") return Modality::infrared;
  throw FormatError("unknown modality '" + s + "'");
}

void GeneratorConfig::validate() const {
  if (num_identities < 2) throw ConfigError("generator.num_identities must be >= 2");
  if (images_per_identity_per_modality < 1)
    throw ConfigError("generator.images_per_identity_per_modality must be >= 1");
  if (stripes < 2) throw ConfigError("generator.stripes must be >= 2");
  if (image_height < stripes || image_width < 1) throw ConfigError("generator.image_size too small");
  if (image_height % stripes != 0)
    throw ConfigError("generator.image_size height " + std::to_string(image_height) +
                      " is not divisible by stripe count " + std::to_string(stripes));
  if (noise_level < 0.0) throw ConfigError("generator.noise_level must be >= 0");
  if (clutter_probability < 0.0 || clutter_probability > 1.0)
    throw ConfigError("generator.clutter_probability must be in [0,1]");
}

// ---------------------------------------------------------------- manifest

void DatasetManifest::validate(int min_per_modality) const {
  if (version != kManifestVersion) throw FormatError("unsupported manifest version '" + version + "'");
  if (image_height < 1 || image_width < 1) throw FormatError("manifest image_size must be positive");
  const std::set<int> ids(identities.begin(), identities.end());
  if (ids.size() != identities.size()) throw FormatError("manifest identities are not unique");
  for (const auto& r : records)
    if (!ids.count(r.identity))
      throw FormatError("record " + r.path + " references unknown identity " + std::to_string(r.identity));

  const std::set<int> train(split.train_ids.begin(), split.train_ids.end());
  const std::set<int> test(split.test_ids.begin(), split.test_ids.end());
  for (int id : train)
    if (test.count(id)) throw FormatError("identity " + std::to_string(id) + " is in both splits");
  const bool split_filled = !train.empty() || !test.empty();
  if (split_filled) {
    for (int id : identities)
      if (!train.count(id) && !test.count(id))
        throw FormatError("identity " + std::to_string(id) + " is in neither split");
    for (int id : train)
      if (!ids.count(id)) throw FormatError("split references unknown identity " + std::to_string(id));
    for (int id : test)
      if (!ids.count(id)) throw FormatError("split references unknown identity " + std::to_string(id));
  }
  if (min_per_modality > 0) {
    for (int id : train)
      for (Modality m : {Modality::visible, Modality::infrared}) {
        const auto n = std::count_if(records.begin(), records.end(),
                                     [&](const SampleRecord& r) { return r.identity == id && r.modality == m; });
        if (n < min_per_modality)
          throw FormatError("train identity " + std::to_string(id) + " has " + std::to_string(n) + " " +
                            to_string(m) + " images, need " + std::to_string(min_per_modality));
      }
  }
}

std::vector<SampleRecord> DatasetManifest::records_for(const std::vector<int>& ids) const {
  const std::set<int> wanted(ids.begin(), ids.end());
  std::vector<SampleRecord> out;
  for (const auto& r : records)
    if (wanted.count(r.identity)) out.push_back(r);
  return out;
}

json manifest_to_json(const DatasetManifest& m) {
  json records = json::array();
  for (const auto& r : m.records)
    records.push_back({{"path", r.path}, {"identity", r.identity}, {"modality", to_string(r.modality)},
                       {"camera", r.camera}});
  return json{{"version", m.version},
              {"image_size", {m.image_height, m.image_width}},
              {"identities", m.identities},
              {"records", records},
              {"split", {{"train_ids", m.split.train_ids}, {"test_ids", m.split.test_ids}}}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<std::string>();
    const auto& size = j.at("image_size");
    if (!size.is_array() || size.size() != 2) throw FormatError("manifest image_size must be [height, width]");
    m.image_height = size[0].get<int>();
    m.image_width = size[1].get<int>();
    m.identities = j.at("identities").get<std::vector<int>>();
    for (const auto& r : j.at("records")) {
      SampleRecord rec;
      rec.path = r.at("path").get<std::string>();
      rec.identity = r.at("identity").get<int>();
      rec.modality = modality_from_string(r.at("modality").get<std::string>());
      rec.camera = r.at("camera").get<int>();
      if (rec.camera < 0) throw FormatError("record " + rec.path + " has a negative camera id");
      m.records.push_back(std::move(rec));
    }
    m.split.train_ids = j.at("split").at("train_ids").get<std::vector<int>>();
    m.split.test_ids = j.at("split").at("test_ids").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoError("cannot write " + file.string());
  os << manifest_to_json(manifest).dump(2) << '\n';
  if (!os) throw IoError("failed writing " + file.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kManifestFile : path;
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open manifest " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest " + file.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.root = file.parent_path();
  return m;
}

// ---------------------------------------------------------------- rendering

double InfraredCurve::operator()(double luminance) const {
  const double y = std::clamp(luminance, 0.0, 1.0) * 4.0;
  const int seg = std::min(3, static_cast<int>(y));
  const double t = y - seg;
  return knots[static_cast<std::size_t>(seg)] * (1.0 - t) + knots[static_cast<std::size_t>(seg) + 1] * t;
}

InfraredCurve draw_infrared_curve(std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x1a5ULL}));
  std::array<double, 4> inc{};
  double total = 0.0;
  for (auto& v : inc) total += (v = rng.uniform(0.2, 1.0));
  InfraredCurve curve;
  curve.knots[0] = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < inc.size(); ++i) curve.knots[i + 1] = (acc += inc[i]) / total;
  curve.knots[4] = 1.0;
  return curve;
}

namespace {

double luminance(const std::array<double, 3>& rgb) { return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]; }

std::vector<double> infrared_profile(const IdentitySpec& id, const InfraredCurve& curve) {
  std::vector<double> out;
  for (const auto& code : id.part_codes)
    out.push_back(std::clamp(curve(luminance(code)) + id.modality_gap.infrared_offset, 0.0, 1.0));
  return out;
}

bool separable(const IdentitySpec& a, const IdentitySpec& b, const InfraredCurve& curve) {
  const auto pa = infrared_profile(a, curve), pb = infrared_profile(b, curve);
  double best = 0.0;
  for (std::size_t s = 0; s < pa.size(); ++s) best = std::max(best, std::abs(pa[s] - pb[s]));
  return best >= kMinStripeContrast;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<IdentitySpec> draw_identities(const GeneratorConfig& config) {
  config.validate();
  const InfraredCurve curve = draw_infrared_curve(config.seed);
  Rng rng(derive_seed({config.seed, 0x1d5ULL}));
  std::vector<IdentitySpec> ids;
  for (int i = 0; i < config.num_identities; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000)
        throw ConfigError("cannot draw " + std::to_string(config.num_identities) +
                          " mutually separable identities; reduce num_identities or add stripes");
      IdentitySpec spec;
      spec.identity_id = i;
      for (int s = 0; s < config.stripes; ++s)
        spec.part_codes.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
      spec.modality_gap.visible_gain = rng.uniform(0.9, 1.1);
      spec.modality_gap.infrared_offset = rng.uniform(-0.05, 0.05);
      const bool ok = std::all_of(ids.begin(), ids.end(),
                                  [&](const IdentitySpec& other) { return separable(spec, other, curve); });
      if (ok) {
        ids.push_back(std::move(spec));
        break;
      }
    }
  }
  return ids;
}

Tensor render_sample(const GeneratorConfig& config, const IdentitySpec& identity, const InfraredCurve& curve,
                     Modality modality, int index) {
  const int h = config.image_height, w = config.image_width, c = channel_count(modality);
  const int stripe_h = h / config.stripes;
  Rng rng(derive_seed({config.seed, static_cast<std::uint64_t>(identity.identity_id),
                       static_cast<std::uint64_t>(modality), static_cast<std::uint64_t>(index)}));

  std::vector<std::array<double, 3>> colors;
  if (modality == Modality::visible) {
    for (const auto& code : identity.part_codes) {
      std::array<double, 3> col{};
      for (int k = 0; k < 3; ++k) col[static_cast<std::size_t>(k)] = code[static_cast<std::size_t>(k)] * identity.modality_gap.visible_gain;
      colors.push_back(col);
    }
  } else {
    for (double v : infrared_profile(identity, curve)) colors.push_back({v, v, v});
  }

  Tensor img({c, h, w});
  const double brightness = config.noise_level > 0.0 ? rng.normal(0.0, config.noise_level) : 0.0;
  for (int y = 0; y < h; ++y) {
    const auto& col = colors[static_cast<std::size_t>(y / stripe_h)];
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) img.at(k, y, x) = col[static_cast<std::size_t>(k)] + brightness;
  }
  if (rng.bernoulli(config.clutter_probability)) {
    const int rh = std::max(1, static_cast<int>(rng.uniform(h / 6.0, h / 3.0)));
    const int rw = std::max(1, static_cast<int>(rng.uniform(w / 4.0, w / 2.0)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - rh + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - rw + 1)));
    std::array<double, 3> fill{rng.uniform(), rng.uniform(), rng.uniform()};
    if (modality == Modality::infrared) fill = {fill[0], fill[0], fill[0]};
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x)
        for (int k = 0; k < c; ++k) img.at(k, y, x) = fill[static_cast<std::size_t>(k)];
  }
  if (config.noise_level > 0.0)
    for (auto& v : img.values()) v += rng.normal(0.0, config.noise_level);
  for (auto& v : img.values()) v = quantize(v) / 255.0;
  return img;
}

DatasetManifest generate_dataset(const GeneratorConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const auto identities = draw_identities(config);
  const InfraredCurve curve = draw_infrared_curve(config.seed);

  DatasetManifest manifest;
  manifest.image_height = config.image_height;
  manifest.image_width = config.image_width;
  manifest.root = out_dir;
  for (const auto& id : identities) {
    manifest.identities.push_back(id.identity_id);
    for (Modality m : {Modality::visible, Modality::infrared}) {
      for (int k = 0; k < config.images_per_identity_per_modality; ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "images/%04d_%s_%03d.png", id.identity_id,
                      m == Modality::visible ? "vis" : "ir", k);
        const Tensor img = render_sample(config, id, curve, m, k);
        Image8 out{config.image_height, config.image_width, channel_count(m), {}};
        out.pixels.resize(static_cast<std::size_t>(img.numel()));
        for (int y = 0; y < out.height; ++y)
          for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < out.channels; ++c)
              out.pixels[static_cast<std::size_t>((y * out.width + x) * out.channels + c)] = quantize(img.at(c, y, x));
        write_png(out_dir / name, out);
        manifest.records.push_back({name, id.identity_id, m, (m == Modality::visible ? 0 : 2) + k % 2});
      }
    }
  }
  save_manifest(manifest, out_dir / kManifestFile);
  return manifest;
}

DatasetManifest split_train_test(DatasetManifest manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  const auto n = static_cast<long>(manifest.identities.size());
  if (n < 2) throw ConfigError("splitting needs at least 2 identities, have " + std::to_string(n));
  const long n_train = std::clamp(static_cast<long>(std::ceil(train_fraction * static_cast<double>(n))), 1L, n - 1);

  std::vector<int> order = manifest.identities;
  Rng rng(derive_seed({seed, 0x5b117ULL}));
  rng.shuffle(order.begin(), order.end());
  manifest.split.train_ids.assign(order.begin(), order.begin() + n_train);
  manifest.split.test_ids.assign(order.begin() + n_train, order.end());
  std::sort(manifest.split.train_ids.begin(), manifest.split.train_ids.end());
  std::sort(manifest.split.test_ids.begin(), manifest.split.test_ids.end());
  return manifest;
}

Tensor load_image(const DatasetManifest& manifest, const SampleRecord& record) {
  const Image8 img = read_png(manifest.root / record.path);
  const int expected = channel_count(record.modality);
  if (img.channels != expected)
    throw FormatError(record.path + ": " + to_string(record.modality) + " record expects " +
                      std::to_string(expected) + " channels, file has " + std::to_string(img.channels));
  if (img.height != manifest.image_height || img.width != manifest.image_width)
    throw FormatError(record.path + ": image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                      ", manifest says " + std::to_string(manifest.image_height) + "x" +
                      std::to_string(manifest.image_width));
  Tensor out({img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(c, y, x) = img.pixels[static_cast<std::size_t>((y * img.width + x) * img.channels + c)] / 255.0;
  return out;
}

}  // namespace ddag
