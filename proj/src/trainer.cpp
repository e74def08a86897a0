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
#include "ddag/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ddag/checkpoint.hpp"
#include "ddag/errors.hpp"

namespace ddag {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  backbone.validate();
  if (n < 1 || m < 1) throw ConfigError("sampler.n and sampler.m must be >= 1");
  if (parts < 1 || heads < 1 || head_dim < 1) throw ConfigError("model.parts, heads and head_dim must be >= 1");
  if (epochs < 1) throw ConfigError("trainer.epochs must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("trainer.base_lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("trainer.momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("trainer.weight_decay must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("trainer.warmup_epochs must be >= 0");
  for (const auto& d : decay)
    if (d.epoch < 1 || !(d.factor > 0.0)) throw ConfigError("trainer.decay entries need epoch >= 1 and factor > 0");
  if (!(margin > 0.0)) throw ConfigError("trainer.margin must be > 0");
  if (crop_padding < 0) throw ConfigError("trainer.crop_padding must be >= 0");
  if (flip_probability < 0.0 || flip_probability > 1.0) throw ConfigError("trainer.flip_probability must be in [0,1]");
  if (checkpoint_every < 1) throw ConfigError("trainer.checkpoint_every must be >= 1");
}

json TrainConfig::to_json() const {
  json decay_j = json::array();
  for (const auto& d : decay) decay_j.push_back({{"epoch", d.epoch}, {"factor", d.factor}});
  return {{"mode", to_string(mode)},
          {"n", n},
          {"m", m},
          {"variant", to_string(backbone.variant)},
          {"stage_channels", backbone.stage_channels},
          {"shared_from_stage", backbone.shared_from_stage},
          {"last_stage_stride", backbone.last_stage_stride},
          {"norm_groups", backbone.norm_groups},
          {"parts", parts},
          {"heads", heads},
          {"head_dim", head_dim},
          {"epochs", epochs},
          {"base_lr", base_lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"warmup_epochs", warmup_epochs},
          {"decay", decay_j},
          {"margin", margin},
          {"crop_padding", crop_padding},
          {"flip_probability", flip_probability},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed},
          {"dataset", dataset.string()},
          {"output_dir", output_dir.string()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.mode = mode_from_string(j.at("mode").get<std::string>());
    c.n = j.at("n").get<int>();
    c.m = j.at("m").get<int>();
    c.backbone.variant = backbone_variant_from_string(j.at("variant").get<std::string>());
    c.backbone.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    c.backbone.shared_from_stage = j.at("shared_from_stage").get<int>();
    c.backbone.last_stage_stride = j.at("last_stage_stride").get<int>();
    c.backbone.norm_groups = j.at("norm_groups").get<int>();
    c.parts = j.at("parts").get<int>();
    c.heads = j.at("heads").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.base_lr = j.at("base_lr").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.warmup_epochs = j.at("warmup_epochs").get<int>();
    c.decay.clear();
    for (const auto& d : j.at("decay")) c.decay.push_back({d.at("epoch").get<int>(), d.at("factor").get<double>()});
    c.margin = j.at("margin").get<double>();
    c.crop_padding = j.at("crop_padding").get<int>();
    c.flip_probability = j.at("flip_probability").get<double>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dataset = j.at("dataset").get<std::string>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed trainer config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 1) throw ContractError("lr_at: epochs are 1-based");
  if (epoch <= config.warmup_epochs) {
    if (config.warmup_epochs == 1) return config.base_lr;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(config.warmup_epochs - 1);
    return config.base_lr * (0.1 + 0.9 * t);
  }
  double factor = 1.0;
  int from = 0;
  for (const auto& d : config.decay)
    if (epoch >= d.epoch && d.epoch >= from) {
      factor = d.factor;
      from = d.epoch;
    }
  return config.base_lr * factor;
}

json EpochSummary::to_json() const {
  return {{"type", "epoch"}, {"epoch", epoch}, {"mean_L_P", mean_part_loss}, {"dynamic_weight_next", next_weight}};
}

fs::path checkpoint_path(const fs::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_epoch_%04d.ddag", epoch);
  return dir / name;
}

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(TrainConfig config, DatasetManifest manifest) : config_(std::move(config)), manifest_(std::move(manifest)) {
  config_.validate();
  if (manifest_.split.train_ids.empty()) throw ConfigError("dataset has no train split; run the split first");
  manifest_.validate();
  auto ids = manifest_.split.train_ids;
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) class_of_[ids[i]] = static_cast<int>(i);
  records_ = manifest_.records_for(ids);
  images_.reserve(records_.size());
  for (const auto& r : records_) images_.push_back(load_image(manifest_, r));
}

ModelConfig Trainer::model_config() const {
  ModelConfig mc;
  mc.backbone = config_.backbone;
  mc.mode = config_.mode;
  mc.parts = config_.parts;
  mc.heads = config_.heads;
  mc.head_dim = config_.head_dim;
  mc.num_classes = static_cast<int>(class_of_.size());
  return mc;
}

TrainState Trainer::initial_state() const {
  TrainState s;
  Rng init(derive_seed({config_.seed, 0x1417ULL}));
  s.model = std::make_unique<DdagModel>(model_config(), init);
  s.rng = Rng(derive_seed({config_.seed, 0xa46ULL}));
  for (const auto& p : s.model->parameters().params) s.velocity[p.name] = Tensor(p.var.shape());
  return s;
}

Tensor Trainer::assemble_inputs(const BatchIndices& batch, Rng& rng) const {
  const Index h = manifest_.image_height, w = manifest_.image_width, k = static_cast<Index>(batch.size());
  const int pad = config_.crop_padding;
  Tensor out({k, 3, h, w});
  for (Index i = 0; i < k; ++i) {
    const Tensor& src = images_[batch.records[static_cast<std::size_t>(i)]];
    const bool flip = rng.bernoulli(config_.flip_probability);
    const Index dy = pad ? static_cast<Index>(rng.below(2 * static_cast<std::uint64_t>(pad) + 1)) - pad : 0;
    const Index dx = pad ? static_cast<Index>(rng.below(2 * static_cast<std::uint64_t>(pad) + 1)) - pad : 0;
    Tensor aug(src.shape());  // zero padding outside the source image
    for (Index c = 0; c < src.dim(0); ++c)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const Index sy = y + dy, sx0 = x + dx;
          if (sy < 0 || sy >= h || sx0 < 0 || sx0 >= w) continue;
          const Index sx = flip ? w - 1 - sx0 : sx0;
          aug.at(c, y, x) = src.at(c, sy, sx);
        }
    const Tensor net = to_network_input(aug);
    std::copy(net.values().begin(), net.values().end(), out.data() + i * 3 * h * w);
  }
  return out;
}

void Trainer::sgd_step(TrainState& state, double lr) const {
  for (auto& p : state.model->parameters().params) {
    Tensor g = p.var.grad();
    Tensor& v = state.velocity.at(p.name);
    Tensor& value = p.var.mutable_value();
    for (Index i = 0; i < value.numel(); ++i) {
      const double step = g[i] + config_.weight_decay * value[i];
      v[i] = config_.momentum * v[i] + step;
      value[i] -= lr * v[i];
    }
  }
}

EpochSummary Trainer::train_epoch(TrainState& state, std::ostream* log) const {
  EpochSummary summary;
  summary.epoch = state.epoch + 1;
  const double lr = lr_at(summary.epoch, config_);
  const double weight = dynamic_weight(state.prev_mean_part_loss);
  const auto batches = epoch_batches(records_, config_.n, config_.m, config_.seed, summary.epoch);
  if (batches.empty()) throw ConfigError("no complete batch fits the train identities");

  DdagModel& model = *state.model;
  auto params = model.parameters().params;
  int step = 0;
  for (const auto& batch : batches) {
    std::vector<int> labels;
    for (int id : batch.labels) labels.push_back(class_of_.at(id));
    const Var images(assemble_inputs(batch, state.rng));

    auto abort = [&](const std::string& what) {
      std::ostringstream os;
      os << what << " at epoch " << summary.epoch << " step " << step << "; batch records:";
      for (auto r : batch.records) os << ' ' << records_[r].path;
      throw TrainingAbort(os.str());
    };

    LossComponents comps;
    Var total;
    try {
      ModelOutput out = model.forward(images, batch.visible, labels, true);
      comps.identity = identity_loss(out.global.embedded, labels, model.classifier());
      comps.triplet = hard_triplet_loss(out.global.pooled, labels, config_.margin);
      if (out.parts) comps.part = part_loss(out.parts->aggregated, labels, model.classifier());
      if (out.graph) comps.graph = graph_loss(out.graph->output_nodes, labels);
      total = total_loss(comps, config_.mode, weight);
    } catch (const NumericalError& e) {
      abort(e.what());
    }
    if (!std::isfinite(total.item())) abort("non-finite loss");

    for (auto& p : params) p.var.zero_grad();
    total.backward();
    sgd_step(state, lr);

    LossReport report = summarize(comps, config_.mode, weight, total);
    report.epoch = summary.epoch;
    report.step = step++;
    report.lr = lr;
    if (log) *log << report.to_json().dump() << '\n';
    summary.steps.push_back(report);
  }

  double acc = 0.0;
  for (const auto& r : summary.steps) acc += r.part_aggregate;
  summary.mean_part_loss = acc / static_cast<double>(summary.steps.size());
  summary.next_weight = dynamic_weight(summary.mean_part_loss);
  state.prev_mean_part_loss = summary.mean_part_loss;
  state.epoch = summary.epoch;
  if (log) {
    *log << summary.to_json().dump() << '\n';
    log->flush();
  }
  return summary;
}

void Trainer::save(const TrainState& state, const fs::path& file) const {
  ParamSet set = state.model->parameters();
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& p : set.params) tensors.emplace_back(p.name, &p.var.value());
  for (const auto& b : set.buffers) tensors.emplace_back(b.name, b.tensor);
  for (const auto& [name, v] : state.velocity) tensors.emplace_back("optimizer.velocity." + name, &v);

  json header{{"config", {{"model", model_config().to_json()}, {"trainer", config_.to_json()}}},
              {"epoch", state.epoch},
              {"rng_state", state.rng.state()},
              {"prev_mean_L_P", state.prev_mean_part_loss ? json(*state.prev_mean_part_loss) : json(nullptr)}};
  save_checkpoint(file, std::move(header), tensors);
}

TrainState Trainer::load(const fs::path& file) const {
  const Checkpoint ck = load_checkpoint(file);
  const ModelConfig stored = ModelConfig::from_json(ck.header.at("config").at("model"));
  if (stored.to_json() != model_config().to_json())
    throw ModelError("checkpoint " + file.string() + " was written for a different model configuration");
  TrainState s = initial_state();
  ParamSet set = s.model->parameters();
  for (auto& p : set.params) {
    const Tensor& t = ck.tensor(p.name);
    if (t.shape() != p.var.shape()) throw ModelError("shape mismatch for " + p.name);
    p.var.mutable_value() = t;
  }
  for (auto& b : set.buffers) *b.tensor = ck.tensor(b.name);
  for (auto& [name, v] : s.velocity) v = ck.tensor("optimizer.velocity." + name);
  s.epoch = ck.header.at("epoch").get<int>();
  s.rng.set_state(ck.header.at("rng_state").get<std::string>());
  const auto& prev = ck.header.at("prev_mean_L_P");
  if (!prev.is_null()) s.prev_mean_part_loss = prev.get<double>();
  return s;
}

FitResult fit(const TrainConfig& config, const std::optional<fs::path>& resume_from) {
  config.validate();
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.output_dir.string() + ": " + ec.message());

  Trainer trainer(config, load_manifest(config.dataset));
  TrainState state = resume_from ? trainer.load(*resume_from) : trainer.initial_state();

  FitResult result;
  result.log = config.output_dir / "train_log.jsonl";
  std::vector<std::string> kept;
  if (resume_from) {
    std::ifstream old(result.log);
    for (std::string line; std::getline(old, line);) {
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (!j.is_discarded() && j.value("epoch", 0) <= state.epoch) kept.push_back(line);
    }
  }
  std::ofstream log(result.log, std::ios::trunc);
  for (const auto& line : kept) log << line << '\n';
  if (!log) throw IoError("cannot write " + result.log.string());

  while (state.epoch < config.epochs) {
    auto summary = trainer.train_epoch(state, &log);
    spdlog::info("[{}] epoch {}/{} mean L_P {:.4f} next weight {:.4f}", to_string(config.mode), summary.epoch,
                 config.epochs, summary.mean_part_loss, summary.next_weight);
    result.epochs.push_back(std::move(summary));
    if (state.epoch % config.checkpoint_every == 0) trainer.save(state, checkpoint_path(config.output_dir, state.epoch));
  }
  if (!log) throw IoError("failed writing " + result.log.string());
  result.final_checkpoint = config.output_dir / "final.ddag";
  trainer.save(state, result.final_checkpoint);
  return result;
}

}  // namespace ddag
