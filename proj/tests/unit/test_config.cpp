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
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ddag/config.hpp"
#include "ddag/errors.hpp"

using namespace ddag;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults resolve to valid component configs") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.generator().validate());
  CHECK_NOTHROW(cfg.trainer().validate());
  CHECK(cfg.ranks() == std::vector<int>{1, 5, 10, 20});
  CHECK(cfg.directions().size() == 2);
  CHECK(cfg.ablation_modes().size() == 4);
  CHECK(cfg.trainer().mode == Mode::BPG);
  CHECK(cfg.trainer().n == 8);
  CHECK(cfg.trainer().m == 4);
  CHECK(cfg.generator().image_height == 72);
}

TEST_CASE("unknown keys are rejected with their dotted path") {
  ExperimentConfig cfg;
  CHECK(error_of([&] { cfg.merge(json{{"trainer", {{"epochz", 3}}}}); }).find("trainer.epochz") != std::string::npos);
  CHECK(error_of([&] { cfg.merge(json{{"bogus", 1}}); }).find("'bogus'") != std::string::npos);
  CHECK(error_of([&] { cfg.apply_override("model.heads.x=1"); }).find("model.heads") != std::string::npos);
}

TEST_CASE("values keep the type of their default") {
  ExperimentConfig cfg;
  CHECK(error_of([&] { cfg.merge(json{{"trainer", {{"epochs", "ten"}}}}); }).find("trainer.epochs") !=
        std::string::npos);
  CHECK(error_of([&] { cfg.merge(json{{"sampler", 3}}); }).find("sampler") != std::string::npos);
}

TEST_CASE("dotted overrides") {
  ExperimentConfig cfg;
  cfg.apply_override("trainer.epochs=40");
  cfg.apply_override("trainer.mode=B+P");
  cfg.apply_override("generator.image_size=[48,24]");
  CHECK(cfg.trainer().epochs == 40);
  CHECK(cfg.trainer().mode == Mode::BP);
  CHECK(cfg.generator().image_width == 24);
  CHECK_THROWS_AS(cfg.apply_override("trainer.epochs"), ConfigError);
  cfg.apply_override("trainer.mode=B+Q");
  CHECK_THROWS_AS(cfg.trainer(), ConfigError);
}

TEST_CASE("the seed feeds generator and trainer") {
  ExperimentConfig cfg;
  cfg.set("seed", 99);
  CHECK(cfg.generator().seed == 99);
  CHECK(cfg.trainer().seed == 99);
}

TEST_CASE("files load and the resolved config round trips") {
  const auto dir = fs::temp_directory_path() / "ddag_config";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "c.json");
    os << R"({"sampler": {"n": 4}, "eval": {"ks": [1, 3]}})";
  }
  auto cfg = ExperimentConfig::load(dir / "c.json");
  CHECK(cfg.trainer().n == 4);
  CHECK(cfg.trainer().m == 4);
  CHECK(cfg.ranks() == std::vector<int>{1, 3});
  cfg.write_resolved(dir / "resolved.json");
  CHECK(ExperimentConfig::load(dir / "resolved.json").resolved() == cfg.resolved());
  {
    std::ofstream os(dir / "broken.json");
    os << "{";
  }
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "absent.json"), IoError);
}
