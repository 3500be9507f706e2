// Copyright 2026 The TPL Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>

#include "doctest.h"
#include "json.hpp"
#include "schema_check.hpp"
#include "tpl/fileio.hpp"
#include "tpl/parallel.hpp"
#include "tpl/pipeline.hpp"

using namespace tpl;
using namespace tpl::pipeline;
using nlohmann::json;
using tpl::testing::schema_errors;

namespace {

json schema(const char* name) { return json::parse(io::read_text(std::filesystem::path(TPL_SCHEMA_DIR) / name)); }

struct ThreadsEnv {
  explicit ThreadsEnv(const char* v) { ::setenv("TPL_THREADS", v, 1); }
  ~ThreadsEnv() { ::unsetenv("TPL_THREADS"); }
};

data::ClassData small_class(std::uint64_t seed = 0, std::size_t n = 8) {
  data::SyntheticSpec spec;
  spec.n_videos = n;
  spec.channels = 3;
  spec.min_length = 30;
  spec.max_length = 50;
  spec.n_phases = 3;
  spec.seed = seed;
  return data::class_data(data::generate_synthetic(spec), "toy");
}

RunConfig smoke_config() {
  RunConfig c = desk_run_config();
  c.train.epochs = 4;
  c.model.hidden = 8;
  c.model.loc_hidden = 8;
  c.model.loc_length = 32;
  c.model.loc_bins = 4;
  c.classifier.steps = 50;
  c.softdba.steps = 10;
  return c;
}

}  // namespace

TEST_CASE("worker count and parallel_for") {
  {
    ThreadsEnv env("3");
    CHECK(worker_count() == 3);
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::count(hits.begin(), hits.end(), 1) == 100);
    std::atomic<int> ran{0};
    CHECK_THROWS_WITH_AS(parallel_for(10,
                                      [&](std::size_t i) {
                                        ++ran;
                                        if (i == 4 || i == 7) throw std::runtime_error("fail " + std::to_string(i));
                                      }),
                         "fail 4", std::runtime_error);
    CHECK(ran == 10);
  }
  for (const char* bad : {"0", "-2", "two", "3x"}) {
    ThreadsEnv env(bad);
    CHECK_THROWS_AS(worker_count(), std::invalid_argument);
  }
  CHECK(worker_count() >= 1);
  parallel_for(0, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("methods") {
  for (auto m : {Method::tpl, Method::tpl_vae, Method::dba, Method::softdba, Method::euclidean}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK(is_learned(Method::tpl_vae));
  CHECK_FALSE(is_learned(Method::dba));
  CHECK_THROWS_AS(parse_method("dtan"), std::invalid_argument);
}

TEST_CASE("run config json") {
  const RunConfig desk = desk_run_config();
  CHECK(desk.train.batch_size == 4);
  CHECK(desk.train.learning_rate == 1e-3);
  CHECK(desk.train.midpoint() == 50.0);
  CHECK(dmtae::TrainConfig{}.batch_size == 64);

  RunConfig c = desk;
  c.method = Method::tpl;
  c.ablation.no_median = true;
  c.train.t0 = 12.5;
  c.train.epochs = 30;
  c.synthetic.n_phases = 5;
  c.softdba.gamma = 0.5;
  const std::string text = run_config_to_json(c);
  CHECK(schema_errors(json::parse(text), schema("run_config.schema.json")).empty());
  const RunConfig back = run_config_from_json(text);
  CHECK(run_config_to_json(back) == text);
  CHECK(schema_errors(json::parse(run_config_to_json(RunConfig{})), schema("run_config.schema.json")).empty());

  const RunConfig partial = run_config_from_json(R"({"train": {"epochs": 10}, "model": {"hidden": 8}})", desk);
  CHECK(partial.train.epochs == 10);
  CHECK(partial.train.midpoint() == 5.0);
  CHECK(partial.train.batch_size == 4);
  CHECK(partial.model.hidden == 8);
  CHECK(run_config_from_json(R"({"train": {"t0": null}})").train.t0 == std::nullopt);

  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"trian": {}})"), "config: unknown key config.trian", std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(R"({"train": {"epoch": 3}})"), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(R"({"train": {"epochs": "many"}})"), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(R"({"method": "dba", "ablation": {"no_decoder": true}})"), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(R"({"method": "tpl-vae", "ablation": {"no_median": true}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(R"({"train": {"epochs": 10, "t0": 20}})"), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json("{"), std::invalid_argument);
}

TEST_CASE("model config follows the run config") {
  RunConfig c = smoke_config();
  c.method = Method::tpl_vae;
  auto m = model_config(c, 7);
  CHECK(m.channels == 7);
  CHECK(m.variant == dmtae::Variant::vae);
  CHECK(m.loc_bins == 4);
  c.method = Method::tpl;
  c.ablation.no_decoder = true;
  CHECK(model_config(c, 7).ablation.no_decoder);
}

TEST_CASE("train, checkpoint and evaluate a class") {
  const auto cls = small_class();
  REQUIRE_FALSE(cls.val.empty());
  RunConfig c = smoke_config();
  const auto trained = train_class(cls, c);
  CHECK(trained.history.size() == 4);
  CHECK(trained.prototype.length() == trained.model.prototype_length());
  CHECK(trained.prototype.n_sources == cls.train.size());

  const auto dir = std::filesystem::temp_directory_path() / "tpl_test_pipeline_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, c, {trained});
  for (const char* f : {"run.json", "toy.tplc", "toy.json", "toy.history.csv", "toy.prototype.tplc", "toy.prototype.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto models = load_models(dir);
  REQUIRE(models.count("toy") == 1);
  CHECK(run_config_to_json(*load_run_config(dir)) == run_config_to_json(c));
  CHECK_FALSE(load_run_config(dir / "missing").has_value());

  const auto report = evaluate({cls}, c, models);
  CHECK(schema_errors(json::parse(report.to_json()), schema("metric_report.schema.json")).empty());
  REQUIRE(report.cbc.has_value());
  REQUIRE(report.plp.has_value());
  CHECK(report.per_class.at("toy").frames > 0);
  // The saved model gives the same numbers as the in-memory one.
  const std::map<std::string, dmtae::DmtaeModel> live{{"toy", trained.model}};
  CHECK(*evaluate({cls}, c, live).cbc == *report.cbc);
  CHECK_THROWS_AS(evaluate({cls}, c, {}), std::invalid_argument);

  const auto r = retrieval_benchmark(cls, trained.model, 1);
  CHECK(r.synced_comparisons <= r.full_comparisons);
  CHECK(r.full_accuracy >= 0.0);
  CHECK(r.full_accuracy <= 1.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("every method produces the same report schema") {
  const auto cls = small_class(3);
  RunConfig c = smoke_config();
  const auto models = std::map<std::string, dmtae::DmtaeModel>{{"toy", train_class(cls, c).model}};
  const auto s = schema("metric_report.schema.json");
  for (auto m : {Method::tpl, Method::dba, Method::softdba, Method::euclidean}) {
    c.method = m;
    const auto a = align_class(cls, c, is_learned(m) ? &models.at("toy") : nullptr);
    CHECK(a.train.size() == cls.train.size());
    CHECK(a.val.size() == cls.val.size());
    for (const auto& f : a.train) CHECK(f.from_prototype.size() == a.prototype_length);
    const auto report = evaluate({cls}, c, models);
    const auto j = json::parse(report.to_json());
    CHECK(schema_errors(j, s).empty());
    CHECK(j["per_class"]["toy"].size() == 5);
    // Reruns agree apart from the timing.
    auto again = evaluate({cls}, c, models);
    again.runtime_seconds = report.runtime_seconds;
    CHECK(again.to_json() == report.to_json());
  }
  c.method = Method::tpl;
  CHECK_THROWS_AS(align_class(cls, c, nullptr), std::invalid_argument);
}

TEST_CASE("class metrics without a val split") {
  auto cls = small_class(4);
  cls.val.clear();
  RunConfig c = smoke_config();
  c.method = Method::euclidean;
  const auto m = class_metrics(cls, align_class(cls, c));
  CHECK(m.cbc.has_value());
  CHECK_FALSE(m.plp.has_value());
  CHECK_FALSE(m.phase_accuracy.has_value());
  CHECK_FALSE(m.kendall_tau.has_value());
}

TEST_CASE("classes are evaluated independently of thread count") {
  std::vector<data::ClassData> classes;
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto c = small_class(10 + s);
    c.name = "class" + std::to_string(s);
    classes.push_back(c);
  }
  RunConfig c = smoke_config();
  c.method = Method::dba;
  std::string one, many;
  {
    ThreadsEnv env("1");
    auto r = evaluate(classes, c);
    r.runtime_seconds = 0;
    one = r.to_json();
  }
  {
    ThreadsEnv env("3");
    auto r = evaluate(classes, c);
    r.runtime_seconds = 0;
    many = r.to_json();
  }
  CHECK(one == many);
}
