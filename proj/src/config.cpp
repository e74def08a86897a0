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
#include "ddag/config.hpp"

#include <fstream>

#include "ddag/errors.hpp"

namespace ddag {

using nlohmann::json;

const json& ExperimentConfig::defaults() {
  static const json d = json::parse(R"({
    "seed": 1,
    "dataset": "data/toy",
    "output": "runs/default",
    "generator": {
      "num_identities": 40,
      "images_per_identity_per_modality": 10,
      "image_size": [72, 36],
      "stripes": 6,
      "noise_level": 0.05,
      "clutter_probability": 0.1,
      "train_fraction": 0.5
    },
    "sampler": {"n": 8, "m": 4},
    "model": {
      "variant": "toy",
      "stage_channels": [16, 32, 64, 128],
      "shared_from_stage": 1,
      "last_stage_stride": 1,
      "norm_groups": 4,
      "parts": 3,
      "heads": 4,
      "head_dim": 256
    },
    "trainer": {
      "mode": "B+P+G",
      "epochs": 80,
      "base_lr": 0.1,
      "momentum": 0.9,
      "weight_decay": 0.0005,
      "warmup_epochs": 10,
      "decay": [{"epoch": 30, "factor": 0.1}, {"epoch": 50, "factor": 0.01}],
      "margin": 0.3,
      "crop_padding": 4,
      "flip_probability": 0.5,
      "checkpoint_every": 10
    },
    "eval": {
      "ks": [1, 5, 10, 20],
      "directions": ["visible_to_infrared", "infrared_to_visible"]
    },
    "ablate": {
      "modes": ["B", "B+P", "B+G", "B+P+G"],
      "seeds": [1, 2, 3]
    }
  })");
  return d;
}

ExperimentConfig::ExperimentConfig() : data_(defaults()) {}

namespace {

bool compatible(const json& def, const json& val) {
  if (def.is_number()) return val.is_number();
  return def.type() == val.type();
}

void merge_into(json& dst, const json& src, const json& schema, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config section '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, val] : src.items()) {
    const std::string dotted = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + dotted + "'");
    const json& def = schema.at(key);
    if (!compatible(def, val))
      throw ConfigError("config key '" + dotted + "' expects a " + std::string(def.type_name()) + ", got " +
                        std::string(val.type_name()));
    if (def.is_object())
      merge_into(dst[key], val, def, dotted);
    else
      dst[key] = val;
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  c.merge(j);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open config " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::merge(const json& j) { merge_into(data_, j, defaults(), ""); }

void ExperimentConfig::set(const std::string& dotted_key, const json& value) {
  json patch = value;
  std::string rest = dotted_key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge(patch);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set(key, value);
}

void ExperimentConfig::write_resolved(const std::filesystem::path& file) const {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write " + file.string());
  os << data_.dump(2) << '\n';
}

std::uint64_t ExperimentConfig::seed() const { return data_.at("seed").get<std::uint64_t>(); }

GeneratorConfig ExperimentConfig::generator() const {
  GeneratorConfig g;
  g.num_identities = get<int>(data_, "generator", "num_identities");
  g.images_per_identity_per_modality = get<int>(data_, "generator", "images_per_identity_per_modality");
  const auto size = get<std::vector<int>>(data_, "generator", "image_size");
  if (size.size() != 2) throw ConfigError("config key 'generator.image_size' must be [height, width]");
  g.image_height = size[0];
  g.image_width = size[1];
  g.stripes = get<int>(data_, "generator", "stripes");
  g.noise_level = get<double>(data_, "generator", "noise_level");
  g.clutter_probability = get<double>(data_, "generator", "clutter_probability");
  g.seed = seed();
  g.validate();
  return g;
}

double ExperimentConfig::train_fraction() const { return get<double>(data_, "generator", "train_fraction"); }

TrainConfig ExperimentConfig::trainer() const {
  TrainConfig t;
  t.mode = mode_from_string(get<std::string>(data_, "trainer", "mode"));
  t.n = get<int>(data_, "sampler", "n");
  t.m = get<int>(data_, "sampler", "m");
  t.backbone.variant = backbone_variant_from_string(get<std::string>(data_, "model", "variant"));
  t.backbone.stage_channels = get<std::vector<int>>(data_, "model", "stage_channels");
  t.backbone.shared_from_stage = get<int>(data_, "model", "shared_from_stage");
  t.backbone.last_stage_stride = get<int>(data_, "model", "last_stage_stride");
  t.backbone.norm_groups = get<int>(data_, "model", "norm_groups");
  t.parts = get<int>(data_, "model", "parts");
  t.heads = get<int>(data_, "model", "heads");
  t.head_dim = get<int>(data_, "model", "head_dim");
  t.epochs = get<int>(data_, "trainer", "epochs");
  t.base_lr = get<double>(data_, "trainer", "base_lr");
  t.momentum = get<double>(data_, "trainer", "momentum");
  t.weight_decay = get<double>(data_, "trainer", "weight_decay");
  t.warmup_epochs = get<int>(data_, "trainer", "warmup_epochs");
  t.decay.clear();
  try {
    for (const auto& d : data_.at("trainer").at("decay"))
      t.decay.push_back({d.at("epoch").get<int>(), d.at("factor").get<double>()});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key 'trainer.decay': ") + e.what());
  }
  t.margin = get<double>(data_, "trainer", "margin");
  t.crop_padding = get<int>(data_, "trainer", "crop_padding");
  t.flip_probability = get<double>(data_, "trainer", "flip_probability");
  t.checkpoint_every = get<int>(data_, "trainer", "checkpoint_every");
  t.seed = seed();
  t.dataset = data_.at("dataset").get<std::string>();
  t.output_dir = data_.at("output").get<std::string>();
  t.validate();
  return t;
}

std::vector<int> ExperimentConfig::ranks() const {
  auto ks = get<std::vector<int>>(data_, "eval", "ks");
  if (ks.empty()) throw ConfigError("config key 'eval.ks' must not be empty");
  for (int k : ks)
    if (k < 1) throw ConfigError("config key 'eval.ks' entries must be >= 1");
  return ks;
}

std::vector<Direction> ExperimentConfig::directions() const {
  std::vector<Direction> out;
  for (const auto& s : get<std::vector<std::string>>(data_, "eval", "directions")) out.push_back(direction_from_string(s));
  return out;
}

std::vector<Mode> ExperimentConfig::ablation_modes() const {
  std::vector<Mode> out;
  for (const auto& s : get<std::vector<std::string>>(data_, "ablate", "modes")) out.push_back(mode_from_string(s));
  return out;
}

std::vector<std::uint64_t> ExperimentConfig::ablation_seeds() const {
  return get<std::vector<std::uint64_t>>(data_, "ablate", "seeds");
}

}  // namespace ddag
