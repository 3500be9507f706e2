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

// Class prototypes built from a trained alignment, label transfer through the
// prototype, and frame retrieval restricted to synchronized frames.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tpl/cpab.hpp"
#include "tpl/dmtae.hpp"
#include "tpl/matrix.hpp"
#include "tpl/sequence.hpp"

namespace tpl::proto {

struct Prototype {
  Matrix latent;     // d x L_med
  Matrix embedding;  // C x L_med
  LabelTrack labels;
  std::string class_name;
  std::size_t n_sources = 0;

  std::size_t length() const { return labels.length(); }
};

/// Mean of the warped latents and embeddings, and the per-frame mode of the
/// warped labels (ties go to the smallest label).
Prototype build_prototype(std::span<const EmbeddingSequence> seqs, std::span<const LabelTrack> labels,
                          const dmtae::AlignmentResult& alignment, std::string class_name = {});

/// Prototype labels pulled back to a video of the given length.
LabelTrack propagate_labels(const Prototype& proto, const cpab::WarpParams& theta, std::size_t target_length);

/// Prototype frame of every video frame: round(T^{-theta}(k / (L - 1)) * (L_med - 1)).
std::vector<std::size_t> prototype_index_map(const cpab::WarpParams& theta, std::size_t length,
                                             std::size_t prototype_length);

struct FrameRef {
  std::size_t video = 0;
  std::size_t frame = 0;
};

class SyncMap {
 public:
  SyncMap() = default;
  SyncMap(std::vector<std::string> ids, std::vector<cpab::WarpParams> thetas, std::span<const std::size_t> lengths,
          std::size_t prototype_length);

  std::size_t prototype_length() const { return prototype_length_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<cpab::WarpParams>& thetas() const { return thetas_; }
  const std::vector<std::size_t>& index_map(std::size_t video) const { return maps_.at(video); }
  /// Video frames mapped to prototype frame t, ordered by video then frame.
  const std::vector<FrameRef>& frames_at(std::size_t t) const { return buckets_.at(t); }

  /// Columns: video_id, frame, prototype_index.
  std::string to_csv() const;

 private:
  std::size_t prototype_length_ = 0;
  std::vector<std::string> ids_;
  std::vector<cpab::WarpParams> thetas_;
  std::vector<std::vector<std::size_t>> maps_;
  std::vector<std::vector<FrameRef>> buckets_;
};

SyncMap synchronize(std::span<const EmbeddingSequence> videos, const dmtae::DmtaeModel& model);

/// Labelled frames of the training videos, stored frame-major for distance scans.
class FrameBank {
 public:
  FrameBank(std::span<const EmbeddingSequence> videos, std::span<const LabelTrack> labels);

  std::size_t channels() const { return channels_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t video_count() const { return offsets_.size(); }
  /// Position of (video, frame) in the bank.
  std::size_t flat_index(std::size_t video, std::size_t frame) const { return offsets_[video] + frame; }
  int label(std::size_t i) const { return labels_[i]; }
  /// Squared Euclidean distance over channels valid in both frames.
  double distance(std::size_t i, std::span<const double> x, std::span<const std::uint8_t> x_valid) const;

 private:
  std::size_t channels_ = 0;
  std::vector<double> features_;
  std::vector<std::uint8_t> valid_;
  std::vector<int> labels_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> lengths_;
};

struct RetrievalResult {
  LabelTrack labels;
  std::uint64_t comparisons = 0;
  double seconds = 0.0;
};

/// Nearest training frame for every test frame; ties go to the first frame in bank order.
RetrievalResult retrieve_full_knn(const EmbeddingSequence& test, const FrameBank& bank);

/// Nearest training frame among those whose prototype frame lies within
/// `window` of the test frame's; falls back to the full bank when that set is empty.
RetrievalResult retrieve_synced(const EmbeddingSequence& test, const cpab::WarpParams& test_theta,
                                const SyncMap& sync, const FrameBank& bank, std::size_t window = 1);
/// As above, predicting the test warp with the model (included in the timing).
RetrievalResult retrieve_synced(const EmbeddingSequence& test, const dmtae::DmtaeModel& model, const SyncMap& sync,
                                const FrameBank& bank, std::size_t window = 1);

/// Writes <stem>.tplc (latent and embedding tensors) and <stem>.json.
void save_prototype(const Prototype& proto, const std::filesystem::path& stem);
Prototype load_prototype(const std::filesystem::path& stem);

}  // namespace tpl::proto
