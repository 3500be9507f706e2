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

// Sequence containers and the warp-application operator used everywhere:
// (seq o T)(k) samples seq at T(k / (L_out - 1)) * (L_in - 1).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpl/cpab.hpp"
#include "tpl/matrix.hpp"

namespace tpl {

/// C x L per-frame features, channel-major, with an optional validity mask.
struct EmbeddingSequence {
  std::string id;
  Matrix data;                // C x L
  std::optional<Matrix> mask;  // C x L of 0/1, absent means fully valid

  std::size_t channels() const { return data.rows(); }
  std::size_t length() const { return data.cols(); }
  bool valid(std::size_t c, std::size_t t) const { return !mask || (*mask)(c, t) != 0.0; }
};

/// Univariate latent sequence Z_i.
struct LatentTrajectory {
  std::vector<double> values;
  std::vector<std::uint8_t> frame_mask;  // empty means fully valid

  std::size_t length() const { return values.size(); }
  bool valid(std::size_t t) const { return frame_mask.empty() || frame_mask[t] != 0; }
};

/// Per-frame integer phase labels.
struct LabelTrack {
  std::vector<int> labels;

  std::size_t length() const { return labels.size(); }
  bool operator==(const LabelTrack&) const = default;
};

/// Tessellation implied by a parameter vector (n_cells = dim + 1).
cpab::Tessellation tessellation_for(const cpab::WarpParams& theta);

/// Linear interpolation of every row onto a new normalized grid.
Matrix resample(const Matrix& seq, std::size_t new_length);
EmbeddingSequence resample(const EmbeddingSequence& seq, std::size_t new_length);
LatentTrajectory resample(const LatentTrajectory& seq, std::size_t new_length);

/// Linear resampling is a fixed linear map; this applies its transpose.
Matrix resample_backward(const Matrix& grad_out, std::size_t in_length);

/// Precomputed sampling positions of a warp, reusable for forward and
/// backward passes over any number of rows.
class WarpSampler {
 public:
  WarpSampler(const cpab::WarpParams& theta, std::size_t in_length, std::size_t out_length,
              bool with_grad = false);

  std::size_t in_length() const { return in_length_; }
  std::size_t out_length() const { return out_length_; }
  /// Fractional input-frame position for each output frame.
  std::span<const double> positions() const { return positions_; }

  Matrix apply(const Matrix& input) const;
  std::vector<double> apply(std::span<const double> input) const;
  /// Nearest-frame index for each output frame.
  std::vector<std::size_t> nearest() const;

  /// d loss / d input given d loss / d output.
  Matrix backward_input(const Matrix& grad_out) const;
  /// Accumulates d loss / d theta into grad_theta (requires with_grad).
  void backward_theta(const Matrix& input, const Matrix& grad_out, std::span<double> grad_theta) const;

 private:
  std::size_t in_length_;
  std::size_t out_length_;
  std::vector<double> positions_;
  std::vector<std::size_t> left_;
  std::vector<double> frac_;
  Matrix dpos_dtheta_;  // out_length x dim, in input-frame units
};

Matrix apply_warp(const Matrix& seq, const cpab::WarpParams& theta, std::size_t out_length);
EmbeddingSequence apply_warp(const EmbeddingSequence& seq, const cpab::WarpParams& theta,
                             std::size_t out_length);
LatentTrajectory apply_warp(const LatentTrajectory& seq, const cpab::WarpParams& theta,
                            std::size_t out_length);

/// Nearest-neighbour label lookup at warped positions.
LabelTrack apply_warp_labels(const LabelTrack& track, const cpab::WarpParams& theta,
                             std::size_t out_length);

/// Frame correspondences between a video and a prototype timeline.
struct FrameAlignment {
  static constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> to_prototype;    // per video frame
  std::vector<std::size_t> from_prototype;  // per prototype frame; `none` where no video frame maps
};

/// Nearest-frame correspondences of a warp: prototype frame q reads video
/// frame round(T^theta(q)), video frame k sits at round(T^{-theta}(k)).
FrameAlignment frame_alignment(const cpab::WarpParams& theta, std::size_t length, std::size_t prototype_length);

/// Labels carried onto the prototype timeline (-1 where no frame maps) and back.
std::vector<int> labels_to_prototype(const LabelTrack& track, const FrameAlignment& a);
LabelTrack labels_from_prototype(std::span<const int> prototype_labels, const FrameAlignment& a);

/// Pads every sequence with zeros to the longest length; masks mark the
/// original frames (and preserve any existing mask).
std::vector<EmbeddingSequence> zero_pad(const std::vector<EmbeddingSequence>& seqs);

/// Lower median: keeps a length that actually occurs.
std::size_t median_length(std::span<const std::size_t> lengths);

}  // namespace tpl
