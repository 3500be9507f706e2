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

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpl/cpab.hpp"
#include "tpl/dmtae.hpp"
#include "tpl/prototype.hpp"
#include "tpl/sequence.hpp"

namespace tpl::metrics {

/// Per-frame mode of the labels carried onto the prototype timeline; frames
/// no video reaches get -1. Ties go to the smallest label.
std::vector<int> prototype_labels(std::span<const LabelTrack> labels, std::span<const FrameAlignment> alignments);

/// Cycle-back consistency: label the prototype from all videos, carry the
/// labels back, and average each video's frame agreement.
double cbc(std::span<const LabelTrack> labels, std::span<const FrameAlignment> alignments);
double cbc(std::span<const LabelTrack> labels, std::span<const cpab::WarpParams> thetas, std::size_t prototype_length);

/// Mean frame accuracy of prototype labels carried onto each test video.
double plp(std::span<const int> prototype_labels, std::span<const LabelTrack> test_labels,
           std::span<const FrameAlignment> test_alignments);
/// Test warps come from the model. A non-empty test_class must match the prototype's class.
double plp(const proto::Prototype& prototype, std::span<const EmbeddingSequence> test_videos,
           std::span<const LabelTrack> test_labels, const dmtae::DmtaeModel& model, std::string_view test_class = {});

struct ClassifierConfig {
  std::size_t steps = 500;
  double learning_rate = 1e-2;
  double weight_decay = 1e-4;
};

/// Multinomial logistic regression on standardized per-frame features,
/// trained full-batch on the train split; returns test frame accuracy.
double phase_classification(std::span<const EmbeddingSequence> train, std::span<const LabelTrack> train_labels,
                            std::span<const EmbeddingSequence> test, std::span<const LabelTrack> test_labels,
                            const ClassifierConfig& config = {});

/// Video frames and labels resampled onto the prototype timeline; prototype
/// frames no video frame reaches are dropped.
std::pair<EmbeddingSequence, LabelTrack> aligned_frames(const EmbeddingSequence& video, const LabelTrack& labels,
                                                        const FrameAlignment& alignment);

/// Kendall's tau of nearest-frame matches, averaged over both directions of
/// every video pair and then over pairs.
double kendall_tau(std::span<const EmbeddingSequence> videos);
/// One direction: frames of u matched to their nearest frame of v.
double kendall_tau_directed(const EmbeddingSequence& u, const EmbeddingSequence& v);

struct ClassMetrics {
  std::optional<double> cbc;
  std::optional<double> plp;
  std::optional<double> phase_accuracy;
  std::optional<double> kendall_tau;
  std::size_t frames = 0;
};

struct MetricReport {
  std::optional<double> cbc;
  std::optional<double> plp;
  std::optional<double> phase_accuracy;
  std::optional<double> kendall_tau;
  std::map<std::string, ClassMetrics> per_class;
  double runtime_seconds = 0.0;

  std::string to_json() const;
  static std::string csv_header();
  /// One row per class plus an "all" row.
  std::string csv_rows(std::string_view method, std::uint64_t seed) const;
};

/// Aggregates per-class values weighted by frame count.
MetricReport aggregate(std::map<std::string, ClassMetrics> per_class, double runtime_seconds = 0.0);

}  // namespace tpl::metrics
