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

// File formats (binary embeddings, JSON annotations and manifests) and the
// seeded synthetic dataset generator with ground-truth warps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tpl/cpab.hpp"
#include "tpl/sequence.hpp"

namespace tpl::data {

inline constexpr std::uint16_t kEmbeddingVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;
inline constexpr std::uint8_t kFlagHasMask = 0x01;

/// "TPLE", u16 version, u32 C, u32 L, u8 dtype, u8 flags, C*L f32 (channel
/// major), then C*L mask bytes when flags & kFlagHasMask.
std::vector<std::uint8_t> encode_embedding(const EmbeddingSequence& seq);
EmbeddingSequence decode_embedding(std::span<const std::uint8_t> bytes, const std::string& id = {});
void save_embedding(const std::filesystem::path& path, const EmbeddingSequence& seq);
EmbeddingSequence load_embedding(const std::filesystem::path& path);

struct PhaseAnnotation {
  std::string video_id;
  std::string action;
  std::size_t length = 0;
  LabelTrack phase_labels;
  std::map<std::string, std::size_t> key_events;
  std::string split = "train";
  /// Non-fatal findings from parsing (e.g. non-contiguous phases).
  std::vector<std::string> warnings;

  bool operator==(const PhaseAnnotation& o) const {
    return video_id == o.video_id && action == o.action && length == o.length &&
           phase_labels == o.phase_labels && key_events == o.key_events && split == o.split;
  }
};

PhaseAnnotation parse_annotation(const std::string& json_text);
std::string annotation_to_json(const PhaseAnnotation& ann);
PhaseAnnotation load_annotation(const std::filesystem::path& path);
void save_annotation(const std::filesystem::path& path, const PhaseAnnotation& ann);
/// Throws if the annotation length differs from the embedding length.
void validate_pairing(const PhaseAnnotation& ann, const EmbeddingSequence& seq);

struct VideoEntry {
  std::string id;
  std::string embedding_path;   // relative to the manifest
  std::string annotation_path;  // relative to the manifest
  std::string split;            // "train" or "val"
};

struct ClassEntry {
  std::string name;
  std::vector<VideoEntry> videos;
};

struct DatasetManifest {
  std::vector<ClassEntry> classes;
  std::filesystem::path base_dir;
};

DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);
std::string manifest_to_json(const DatasetManifest& manifest);
/// Validates unique ids, split values, existing files and >= 1 train video per class.
DatasetManifest load_manifest(const std::filesystem::path& path);

struct Video {
  EmbeddingSequence embedding;
  PhaseAnnotation annotation;
};

struct ClassData {
  std::string name;
  std::vector<Video> train;
  std::vector<Video> val;
};

std::vector<ClassData> load_dataset(const DatasetManifest& manifest);

struct SyntheticSpec {
  std::size_t n_videos = 40;
  std::size_t channels = 8;
  std::size_t min_length = 60;
  std::size_t max_length = 140;
  int n_phases = 2;
  double warp_scale = 1.0;   // sigma_theta
  double noise_scale = 0.05;  // sigma_n
  std::uint64_t seed = 0;
  int n_cells = 16;
  std::string class_name = "synthetic";
  /// Fraction of videos marked "val" (taken from the end of the list).
  double val_fraction = 0.25;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<EmbeddingSequence> videos;
  std::vector<PhaseAnnotation> annotations;
  std::vector<cpab::WarpParams> true_warps;
  /// Noise-free lifted base progression on a dense grid, for oracle checks.
  std::vector<EmbeddingSequence> clean_videos;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Noise-free lifted base progression sampled at `length` points.
Matrix synthetic_base(const SyntheticSpec& spec, std::size_t length);

/// Writes manifest.json, embeddings/, annotations/ and ground_truth.json.
std::filesystem::path write_synthetic(const SyntheticDataset& ds, const SyntheticSpec& spec,
                                      const std::filesystem::path& out_dir);

/// Reads ground_truth.json: video id -> theta*.
std::map<std::string, cpab::WarpParams> load_ground_truth(const std::filesystem::path& path);

/// The generated videos grouped by their split, without touching disk.
ClassData class_data(const SyntheticDataset& ds, const std::string& class_name);

SyntheticSpec synthetic_spec_from_json(const std::string& json_text);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

/// Per-frame labels from a label track and the splits of a dataset.
std::vector<EmbeddingSequence> embeddings(std::span<const Video> videos);
std::vector<LabelTrack> labels(std::span<const Video> videos);

}  // namespace tpl::data
