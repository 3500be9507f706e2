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


#pragma once

// Run configuration and the per-class workflows shared by the CLI and the
// acceptance harness: training, method evaluation and retrieval timing.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpl/baselines.hpp"
#include "tpl/dataio.hpp"
#include "tpl/dmtae.hpp"
#include "tpl/metrics.hpp"
#include "tpl/prototype.hpp"

namespace tpl::pipeline {

enum class Method { tpl, tpl_vae, dba, softdba, euclidean };

Method parse_method(std::string_view name);
std::string method_name(Method m);
bool is_learned(Method m);

struct ModelShape {
  std::size_t hidden = 32;
  std::size_t kernel = 5;
  std::size_t loc_length = 128;
  std::size_t loc_hidden = 32;
  std::size_t loc_bins = 16;
};

struct RunConfig {
  Method method = Method::tpl;
  dmtae::Ablation ablation;
  ModelShape model;
  dmtae::TrainConfig train;
  data::SyntheticSpec synthetic;
  baselines::DbaConfig dba;
  baselines::SoftDbaConfig softdba;
  metrics::ClassifierConfig classifier;

  /// Ablation flags are only meaningful for the standard TPL method.
  void validate() const;
};

/// Small-data training settings: batch 4, lr 1e-3, 100 epochs, midpoint at half the epochs.
dmtae::TrainConfig desk_train_config();
RunConfig desk_run_config();

/// Missing keys keep the defaults of `base`; unknown top-level keys are rejected.
RunConfig run_config_from_json(const std::string& json_text, const RunConfig& base = {});
std::string run_config_to_json(const RunConfig& config);

dmtae::ModelConfig model_config(const RunConfig& config, std::size_t channels);

std::vector<EmbeddingSequence> embeddings_of(const std::vector<data::Video>& videos);
std::vector<LabelTrack> labels_of(const std::vector<data::Video>& videos);

struct TrainedClass {
  std::string name;
  dmtae::DmtaeModel model;
  std::vector<dmtae::EpochRecord> history;
  proto::Prototype prototype;
};

/// Trains on the class's train split and labels the prototype from it.
TrainedClass train_class(const data::ClassData& cls, const RunConfig& config,
                         const dmtae::EpochCallback& on_epoch = {});

/// Directory checkpoint: run.json plus, per class, <class>.tplc/.json (model),
/// <class>.history.csv and <class>.prototype.tplc/.json.
void save_checkpoint(const std::filesystem::path& dir, const RunConfig& config,
                     const std::vector<TrainedClass>& classes);
std::map<std::string, dmtae::DmtaeModel> load_models(const std::filesystem::path& dir);
std::optional<RunConfig> load_run_config(const std::filesystem::path& dir);

/// Prototype timeline of a class under one method.
struct ClassAlignment {
  std::size_t prototype_length = 0;
  std::vector<FrameAlignment> train;
  std::vector<FrameAlignment> val;
};

/// Learned methods need a model; baselines compute their prototype from the
/// train split.
ClassAlignment align_class(const data::ClassData& cls, const RunConfig& config,
                           const dmtae::DmtaeModel* model = nullptr);

/// CBC on the train split, PLP from the train prototype to the val split,
/// phase accuracy and Kendall's tau on prototype-aligned val features.
metrics::ClassMetrics class_metrics(const data::ClassData& cls, const ClassAlignment& alignment,
                                    const metrics::ClassifierConfig& classifier = {});

/// Same report schema for every method. Classes run in parallel.
metrics::MetricReport evaluate(const std::vector<data::ClassData>& classes, const RunConfig& config,
                               const std::map<std::string, dmtae::DmtaeModel>& models = {});

struct RetrievalReport {
  double full_accuracy = 0.0;
  double synced_accuracy = 0.0;
  std::uint64_t full_comparisons = 0;
  std::uint64_t synced_comparisons = 0;
  double full_seconds = 0.0;
  double synced_seconds = 0.0;
  std::size_t window = 1;

  std::string to_json() const;
};

/// Val videos retrieve labels from the train split, both ways. Synced timing
/// includes predicting the val warps; the train sync map is built beforehand.
RetrievalReport retrieval_benchmark(const data::ClassData& cls, const dmtae::DmtaeModel& model,
                                    std::size_t window = 1);

}  // namespace tpl::pipeline
