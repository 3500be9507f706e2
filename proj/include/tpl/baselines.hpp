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

// Classical averaging baselines: DTW, soft-DTW, DBA, soft-DBA and the
// zero-padded Euclidean mean. Frame cost is squared Euclidean throughout.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "tpl/matrix.hpp"
#include "tpl/sequence.hpp"

namespace tpl::baselines {

using Path = std::vector<std::pair<std::size_t, std::size_t>>;

struct DtwResult {
  double distance = 0.0;
  Path path;  // (frame of a, frame of b), from (0,0) to the two ends
};

/// a and b are C x L. On equal cost the step order is diagonal, (1,0), (0,1).
DtwResult dtw(const Matrix& a, const Matrix& b);
double dtw_distance(const Matrix& a, const Matrix& b);

/// Soft-DTW value; the gradient with respect to a is written when requested.
double soft_dtw(const Matrix& a, const Matrix& b, double gamma, Matrix* grad_a = nullptr);

struct Barycenter {
  Matrix sequence;                // C x L_med
  std::vector<double> objective;  // one entry per evaluated iterate, starting at the initialization
};

/// Sequence with the smallest total DTW distance to all others (lowest index on ties).
std::size_t medoid_index(std::span<const Matrix> seqs);
/// Medoid resampled to the median length.
Matrix barycenter_init(std::span<const Matrix> seqs);

struct DbaConfig {
  std::size_t max_iter = 30;
  double tol = 1e-6;
};

Barycenter dba(std::span<const Matrix> seqs, const DbaConfig& config = {});

struct SoftDbaConfig {
  double gamma = 0.1;
  std::size_t steps = 200;
  double learning_rate = 1e-2;
};

Barycenter soft_dba(std::span<const Matrix> seqs, const SoftDbaConfig& config = {});

/// Frame correspondences read off a DTW path between a video (first index)
/// and a prototype (second index). Frames matched to several partners take
/// the lower middle one.
FrameAlignment path_alignment(const Path& path, std::size_t length, std::size_t prototype_length);
FrameAlignment dtw_alignment(const Matrix& seq, const Matrix& prototype);

struct EuclideanBaseline {
  Matrix prototype;  // masked per-frame mean over the zero-padded set
  std::vector<FrameAlignment> alignments;
};

/// Identity alignment on the zero-padded set; padded frames map to nothing.
EuclideanBaseline euclidean_baseline(std::span<const EmbeddingSequence> seqs);
/// Identity correspondence of a video onto a prototype of the given length,
/// clamping frames past the prototype end.
FrameAlignment identity_alignment(std::size_t length, std::size_t prototype_length);

}  // namespace tpl::baselines
