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
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddag/config.hpp"
#include "ddag/datagen.hpp"
#include "ddag/errors.hpp"
#include "ddag/evaluation.hpp"
#include "ddag/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ddag;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kAbort = 4 };

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log_level = "info";
  std::vector<std::string> overrides;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig() : ExperimentConfig::load(g.config);
  for (const auto& o : g.overrides) cfg.apply_override(o);
  if (g.seed) cfg.set("seed", *g.seed);
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream os(file);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("cannot write " + file.string());
}

std::vector<int> parse_ks(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(item, &used);
      if (used != item.size() || k < 1) throw std::invalid_argument(item);
      ks.push_back(k);
    } catch (const std::exception&) {
      throw ConfigError("--ks expects comma-separated positive integers, got '" + text + "'");
    }
  }
  if (ks.empty()) throw ConfigError("--ks must not be empty");
  return ks;
}

std::vector<Direction> parse_directions(const std::string& text, const ExperimentConfig& cfg) {
  if (text.empty() || text == "both") return text.empty() ? cfg.directions() : std::vector<Direction>{
      Direction::visible_to_infrared, Direction::infrared_to_visible};
  return {direction_from_string(text)};
}

int cmd_generate(const GlobalOptions& g) {
  auto cfg = resolve(g);
  const fs::path out = g.out.empty() ? fs::path(cfg.resolved().at("dataset").get<std::string>()) : fs::path(g.out);
  cfg.set("dataset", out.string());
  const auto gen = cfg.generator();
  ensure_dir(out);
  auto manifest = generate_dataset(gen, out);
  manifest = split_train_test(std::move(manifest), cfg.train_fraction(), gen.seed);
  save_manifest(manifest, out / "manifest.json");
  cfg.write_resolved(out / "resolved_config.json");
  spdlog::info("wrote {} images for {} identities to {}", manifest.records.size(), manifest.identities.size(),
               out.string());
  return kOk;
}

int cmd_train(const GlobalOptions& g, const std::string& mode, const std::string& dataset, const std::string& resume) {
  auto cfg = resolve(g);
  if (!mode.empty()) cfg.set("trainer.mode", mode);
  if (!dataset.empty()) cfg.set("dataset", dataset);
  if (!g.out.empty()) cfg.set("output", g.out);
  const auto tc = cfg.trainer();
  ensure_dir(tc.output_dir);
  cfg.write_resolved(tc.output_dir / "resolved_config.json");
  std::optional<fs::path> from;
  if (!resume.empty()) from = fs::path(resume);
  const auto result = fit(tc, from);
  spdlog::info("final checkpoint {}", result.final_checkpoint.string());
  return kOk;
}

int cmd_eval(const GlobalOptions& g, const std::string& checkpoint, const std::string& manifest_path,
             const std::string& direction, const std::string& ks_text) {
  auto cfg = resolve(g);
  if (!ks_text.empty()) cfg.set("eval.ks", parse_ks(ks_text));
  const auto ks = cfg.ranks();
  const auto directions = parse_directions(direction, cfg);
  const fs::path data = manifest_path.empty() ? fs::path(cfg.resolved().at("dataset").get<std::string>())
                                              : fs::path(manifest_path);
  auto model = load_model(checkpoint);
  const auto manifest = load_manifest(data);
  const fs::path out = g.out.empty() ? fs::path(checkpoint).parent_path() : fs::path(g.out);
  ensure_dir(out);
  cfg.write_resolved(out / "eval_config.json");
  for (const auto d : directions) {
    const auto report = evaluate(*model, manifest, d, ks);
    json j = report.to_json();
    j["checkpoint"] = checkpoint;
    write_json(out / ("eval_" + to_string(d) + ".json"), j);
    spdlog::info("{}: rank-1 {:.4f} mAP {:.4f}", to_string(d), report.rank(ks.front()), report.mean_ap);
  }
  return kOk;
}

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(v.size() - 1));
  }
  return s;
}

int cmd_ablate(const GlobalOptions& g, int repeats) {
  auto cfg = resolve(g);
  if (repeats > 0) {
    std::vector<std::uint64_t> seeds;
    for (int s = 1; s <= repeats; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    cfg.set("ablate.seeds", seeds);
  }
  if (!g.out.empty()) cfg.set("output", g.out);
  const fs::path root = cfg.resolved().at("output").get<std::string>();
  const auto modes = cfg.ablation_modes();
  const auto seeds = cfg.ablation_seeds();
  const auto ks = cfg.ranks();
  const auto directions = cfg.directions();
  if (seeds.empty()) throw ConfigError("config key 'ablate.seeds' must not be empty");
  ensure_dir(root);
  cfg.write_resolved(root / "resolved_config.json");
  const auto manifest = load_manifest(cfg.resolved().at("dataset").get<std::string>());

  std::ofstream runs(root / "ablation_runs.csv");
  runs << "mode,seed," << EvalReport::csv_header() << '\n';
  // mode -> direction -> metric -> values
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> acc;
  for (const auto mode : modes) {
    for (const auto seed : seeds) {
      ExperimentConfig run = cfg;
      run.set("trainer.mode", to_string(mode));
      run.set("seed", seed);
      run.set("output", (root / to_string(mode) / ("seed_" + std::to_string(seed))).string());
      const auto tc = run.trainer();
      ensure_dir(tc.output_dir);
      run.write_resolved(tc.output_dir / "resolved_config.json");
      const auto result = fit(tc);
      auto model = load_model(result.final_checkpoint);
      for (const auto d : directions) {
        const auto report = evaluate(*model, manifest, d, ks);
        write_json(tc.output_dir / ("eval_" + to_string(d) + ".json"), report.to_json());
        runs << to_string(mode) << ',' << seed << ',' << report.csv_row(tc.output_dir.string()) << '\n';
        auto& slot = acc[to_string(mode)][to_string(d)];
        for (std::size_t i = 0; i < ks.size(); ++i) slot["rank" + std::to_string(ks[i])].push_back(report.rank_accuracy[i]);
        slot["mAP"].push_back(report.mean_ap);
      }
    }
  }
  if (!runs) throw IoError("failed writing " + (root / "ablation_runs.csv").string());

  std::vector<std::string> metrics;
  for (int k : ks) metrics.push_back("rank" + std::to_string(k));
  metrics.push_back("mAP");
  std::ofstream summary(root / "ablation_summary.csv");
  summary << "mode,direction,runs";
  for (const auto& m : metrics) summary << ',' << m << "_mean," << m << "_std";
  summary << '\n';
  json table = json::object();
  table["seeds"] = seeds;
  table["ks"] = ks;
  table["modes"] = json::array();
  for (const auto mode : modes) {
    json row{{"mode", to_string(mode)}};
    for (const auto d : directions) {
      const auto& slot = acc[to_string(mode)][to_string(d)];
      summary << to_string(mode) << ',' << to_string(d) << ',' << seeds.size();
      json cell = json::object();
      for (const auto& m : metrics) {
        const auto s = stat_of(slot.at(m));
        summary << ',' << fmt::format("{:.6f},{:.6f}", s.mean, s.std);
        cell[m] = {{"mean", s.mean}, {"std", s.std}, {"values", slot.at(m)}};
      }
      summary << '\n';
      row[to_string(d)] = cell;
    }
    table["modes"].push_back(row);
  }
  if (!summary) throw IoError("failed writing " + (root / "ablation_summary.csv").string());
  write_json(root / "ablation.json", table);
  spdlog::info("ablation summary written to {}", (root / "ablation_summary.csv").string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-aggregation cross-modality re-identification at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Override the experiment seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));
  app.add_option("--set", g.overrides, "Dotted-path override, e.g. trainer.epochs=40");

  auto* gen = app.add_subcommand("generate", "Render the synthetic dataset and its train/test split");

  std::string mode, dataset, resume;
  auto* train = app.add_subcommand("train", "Train one model");
  train->add_option("--mode", mode, "B, B+P, B+G or B+P+G");
  train->add_option("--dataset", dataset, "Dataset directory or manifest");
  train->add_option("--resume", resume, "Checkpoint to continue from");

  std::string checkpoint, manifest, direction, ks;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--manifest", manifest, "Dataset directory or manifest");
  ev->add_option("--direction", direction, "visible_to_infrared, infrared_to_visible or both");
  ev->add_option("--ks", ks, "Comma-separated CMC ranks (default 1,5,10,20)");

  int repeats = 0;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every mode over several seeds");
  ablate->add_option("--repeats", repeats, "Use seeds 1..N instead of ablate.seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (gen->parsed()) return cmd_generate(g);
    if (train->parsed()) return cmd_train(g, mode, dataset, resume);
    if (ev->parsed()) return cmd_eval(g, checkpoint, manifest, direction, ks);
    if (ablate->parsed()) return cmd_ablate(g, repeats);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const IoError& e) {
    spdlog::error("I/O error: {}", e.what());
    return kIo;
  } catch (const FormatError& e) {
    spdlog::error("format error: {}", e.what());
    return kIo;
  } catch (const TrainingAbort& e) {
    spdlog::error("training aborted: {}", e.what());
    return kAbort;
  } catch (const NumericalError& e) {
    spdlog::error("training aborted: {}", e.what());
    return kAbort;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
