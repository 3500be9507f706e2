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

#include "tpl/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tpl {

namespace {

void require_length(std::size_t n) {
  if (n < 2) throw std::invalid_argument("sequence length must be at least 2, got " + std::to_string(n));
}

// Left index and fraction for a fractional position in [0, len-1].
std::pair<std::size_t, double> split_position(double pos, std::size_t len) {
  pos = std::clamp(pos, 0.0, static_cast<double>(len - 1));
  auto i = static_cast<std::size_t>(std::floor(pos));
  if (i >= len - 1) i = len - 2;
  return {i, pos - static_cast<double>(i)};
}

}  // namespace

cpab::Tessellation tessellation_for(const cpab::WarpParams& theta) {
  return cpab::Tessellation(static_cast<int>(theta.size()) + 1);
}

Matrix resample(const Matrix& seq, std::size_t new_length) {
  require_length(new_length);
  require_length(seq.cols());
  const std::size_t len = seq.cols();
  if (len == new_length) return seq;
  Matrix out(seq.rows(), new_length);
  const double scale = static_cast<double>(len - 1) / static_cast<double>(new_length - 1);
  for (std::size_t k = 0; k < new_length; ++k) {
    const auto [i, w] = split_position(static_cast<double>(k) * scale, len);
    for (std::size_t r = 0; r < seq.rows(); ++r) {
      out(r, k) = (1.0 - w) * seq(r, i) + w * seq(r, i + 1);
    }
  }
  for (std::size_t r = 0; r < seq.rows(); ++r) {
    out(r, 0) = seq(r, 0);
    out(r, new_length - 1) = seq(r, len - 1);
  }
  return out;
}

Matrix resample_backward(const Matrix& grad_out, std::size_t in_length) {
  require_length(in_length);
  const std::size_t out_len = grad_out.cols();
  if (out_len == in_length) return grad_out;
  Matrix g(grad_out.rows(), in_length);
  const double scale = static_cast<double>(in_length - 1) / static_cast<double>(out_len - 1);
  for (std::size_t k = 0; k < out_len; ++k) {
    std::size_t i;
    double w;
    if (k == 0) {
      i = 0;
      w = 0.0;
    } else if (k == out_len - 1) {
      i = in_length - 2;
      w = 1.0;
    } else {
      std::tie(i, w) = split_position(static_cast<double>(k) * scale, in_length);
    }
    for (std::size_t r = 0; r < g.rows(); ++r) {
      g(r, i) += (1.0 - w) * grad_out(r, k);
      g(r, i + 1) += w * grad_out(r, k);
    }
  }
  return g;
}

EmbeddingSequence resample(const EmbeddingSequence& seq, std::size_t new_length) {
  EmbeddingSequence out{seq.id, resample(seq.data, new_length), std::nullopt};
  if (seq.mask) {
    Matrix m = resample(*seq.mask, new_length);
    for (double& v : m.data()) v = v >= 0.5 ? 1.0 : 0.0;
    out.mask = std::move(m);
  }
  return out;
}

LatentTrajectory resample(const LatentTrajectory& seq, std::size_t new_length) {
  Matrix m(1, seq.length(), seq.values);
  LatentTrajectory out{resample(m, new_length).data(), {}};
  if (!seq.frame_mask.empty()) {
    Matrix fm(1, seq.length());
    for (std::size_t t = 0; t < seq.length(); ++t) fm(0, t) = seq.frame_mask[t];
    const Matrix resampled = resample(fm, new_length);
    for (double v : resampled.data()) out.frame_mask.push_back(v >= 0.5 ? 1 : 0);
  }
  return out;
}

WarpSampler::WarpSampler(const cpab::WarpParams& theta, std::size_t in_length, std::size_t out_length,
                         bool with_grad)
    : in_length_(in_length), out_length_(out_length) {
  require_length(in_length);
  require_length(out_length);
  const auto tess = tessellation_for(theta);
  const auto grid = cpab::unit_grid(out_length);
  const double span = static_cast<double>(in_length - 1);
  std::vector<double> warped;
  if (with_grad) {
    auto ev = cpab::evaluate_warp(theta, tess, grid);
    warped = std::move(ev.values);
    dpos_dtheta_ = std::move(ev.jacobian);
    for (double& v : dpos_dtheta_.data()) v *= span;
  } else {
    warped = cpab::warp_points(theta, tess, grid);
  }
  positions_.resize(out_length);
  left_.resize(out_length);
  frac_.resize(out_length);
  for (std::size_t k = 0; k < out_length; ++k) {
    positions_[k] = std::clamp(warped[k] * span, 0.0, span);
    std::tie(left_[k], frac_[k]) = split_position(positions_[k], in_length);
  }
}

Matrix WarpSampler::apply(const Matrix& input) const {
  if (input.cols() != in_length_) throw std::invalid_argument("warp sampler length mismatch");
  Matrix out(input.rows(), out_length_);
  for (std::size_t r = 0; r < input.rows(); ++r) {
    for (std::size_t k = 0; k < out_length_; ++k) {
      const std::size_t i = left_[k];
      out(r, k) = (1.0 - frac_[k]) * input(r, i) + frac_[k] * input(r, i + 1);
    }
  }
  return out;
}

std::vector<double> WarpSampler::apply(std::span<const double> input) const {
  return apply(Matrix(1, input.size(), std::vector<double>(input.begin(), input.end()))).data();
}

std::vector<std::size_t> WarpSampler::nearest() const {
  std::vector<std::size_t> idx(out_length_);
  for (std::size_t k = 0; k < out_length_; ++k) {
    idx[k] = std::min(static_cast<std::size_t>(std::floor(positions_[k] + 0.5)), in_length_ - 1);
  }
  return idx;
}

Matrix WarpSampler::backward_input(const Matrix& grad_out) const {
  Matrix g(grad_out.rows(), in_length_);
  for (std::size_t r = 0; r < grad_out.rows(); ++r) {
    for (std::size_t k = 0; k < out_length_; ++k) {
      const std::size_t i = left_[k];
      g(r, i) += (1.0 - frac_[k]) * grad_out(r, k);
      g(r, i + 1) += frac_[k] * grad_out(r, k);
    }
  }
  return g;
}

void WarpSampler::backward_theta(const Matrix& input, const Matrix& grad_out,
                                 std::span<double> grad_theta) const {
  if (dpos_dtheta_.empty() && !grad_theta.empty()) {
    throw std::logic_error("warp sampler was built without gradients");
  }
  const double span = static_cast<double>(in_length_ - 1);
  for (std::size_t k = 0; k < out_length_; ++k) {
    const std::size_t i = left_[k];
    // Positions clamped to the ends carry no gradient.
    if (positions_[k] <= 0.0 || positions_[k] >= span) continue;
    double dpos = 0.0;
    for (std::size_t r = 0; r < input.rows(); ++r) dpos += grad_out(r, k) * (input(r, i + 1) - input(r, i));
    if (dpos == 0.0) continue;
    const auto row = dpos_dtheta_.row(k);
    for (std::size_t j = 0; j < grad_theta.size(); ++j) grad_theta[j] += dpos * row[j];
  }
}

Matrix apply_warp(const Matrix& seq, const cpab::WarpParams& theta, std::size_t out_length) {
  return WarpSampler(theta, seq.cols(), out_length).apply(seq);
}

EmbeddingSequence apply_warp(const EmbeddingSequence& seq, const cpab::WarpParams& theta,
                             std::size_t out_length) {
  WarpSampler sampler(theta, seq.length(), out_length);
  EmbeddingSequence out{seq.id, sampler.apply(seq.data), std::nullopt};
  if (seq.mask) {
    const auto idx = sampler.nearest();
    Matrix m(seq.channels(), out_length);
    for (std::size_t c = 0; c < seq.channels(); ++c) {
      for (std::size_t k = 0; k < out_length; ++k) m(c, k) = (*seq.mask)(c, idx[k]);
    }
    out.mask = std::move(m);
  }
  return out;
}

LatentTrajectory apply_warp(const LatentTrajectory& seq, const cpab::WarpParams& theta,
                            std::size_t out_length) {
  WarpSampler sampler(theta, seq.length(), out_length);
  LatentTrajectory out{sampler.apply(seq.values), {}};
  if (!seq.frame_mask.empty()) {
    const auto idx = sampler.nearest();
    out.frame_mask.resize(out_length);
    for (std::size_t k = 0; k < out_length; ++k) out.frame_mask[k] = seq.frame_mask[idx[k]];
  }
  return out;
}

LabelTrack apply_warp_labels(const LabelTrack& track, const cpab::WarpParams& theta,
                             std::size_t out_length) {
  const auto idx = WarpSampler(theta, track.length(), out_length).nearest();
  LabelTrack out;
  out.labels.resize(out_length);
  for (std::size_t k = 0; k < out_length; ++k) out.labels[k] = track.labels[idx[k]];
  return out;
}

FrameAlignment frame_alignment(const cpab::WarpParams& theta, std::size_t length, std::size_t prototype_length) {
  return {WarpSampler(cpab::inverse(theta), prototype_length, length).nearest(),
          WarpSampler(theta, length, prototype_length).nearest()};
}

std::vector<int> labels_to_prototype(const LabelTrack& track, const FrameAlignment& a) {
  if (a.to_prototype.size() != track.length()) throw std::invalid_argument("alignment and label track differ in length");
  std::vector<int> out(a.from_prototype.size(), -1);
  for (std::size_t q = 0; q < out.size(); ++q) {
    const std::size_t k = a.from_prototype[q];
    if (k == FrameAlignment::none) continue;
    if (k >= track.length()) throw std::out_of_range("alignment references a frame past the video end");
    out[q] = track.labels[k];
  }
  return out;
}

LabelTrack labels_from_prototype(std::span<const int> prototype_labels, const FrameAlignment& a) {
  LabelTrack out;
  out.labels.resize(a.to_prototype.size());
  for (std::size_t k = 0; k < out.labels.size(); ++k) {
    const std::size_t q = a.to_prototype[k];
    if (q >= prototype_labels.size()) throw std::out_of_range("alignment references a frame past the prototype end");
    out.labels[k] = prototype_labels[q];
  }
  return out;
}

std::vector<EmbeddingSequence> zero_pad(const std::vector<EmbeddingSequence>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("zero_pad needs at least one sequence");
  std::size_t max_len = 0;
  for (const auto& s : seqs) max_len = std::max(max_len, s.length());
  std::vector<EmbeddingSequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    EmbeddingSequence p{s.id, Matrix(s.channels(), max_len), Matrix(s.channels(), max_len)};
    for (std::size_t c = 0; c < s.channels(); ++c) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        p.data(c, t) = s.data(c, t);
        (*p.mask)(c, t) = s.valid(c, t) ? 1.0 : 0.0;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::size_t median_length(std::span<const std::size_t> lengths) {
  if (lengths.empty()) throw std::invalid_argument("median_length of an empty list");
  std::vector<std::size_t> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[(sorted.size() - 1) / 2];
}

}  // namespace tpl
