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

// Minimal differentiable layers with hand-written backward passes, AdamW,
// and the "TPLC" tensor checkpoint format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tpl/matrix.hpp"

namespace tpl::nn {

struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  ParamTensor() = default;
  ParamTensor(std::string name, std::vector<std::size_t> shape);

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Uniform(-b, b) with b = sqrt(6 / fan_in).
void he_uniform(ParamTensor& p, std::size_t fan_in, std::mt19937_64& rng);

enum class Padding { zero, replicate };

/// Same-padded, stride-1 cross-correlation. Weight shape (out, in, kernel);
/// kernel must be odd.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         Padding padding = Padding::zero);

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients and returns d loss / d x.
  Matrix backward(const Matrix& x, const Matrix& grad_y);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }
  Padding padding() const { return padding_; }

  ParamTensor weight;
  ParamTensor bias;

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t k_ = 1;
  Padding padding_ = Padding::zero;
};

/// y = W x + b, weight shape (out, in).
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out);

  void init(std::mt19937_64& rng);
  std::vector<double> forward(std::span<const double> x) const;
  std::vector<double> backward(std::span<const double> x, std::span<const double> grad_y);

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  ParamTensor weight;
  ParamTensor bias;

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& grad_y);
Matrix tanh(const Matrix& x);
/// Takes the forward output y = tanh(x).
Matrix tanh_backward(const Matrix& y, const Matrix& grad_y);

/// Mean over time for every channel.
std::vector<double> global_avg_pool(const Matrix& x);
Matrix global_avg_pool_backward(std::span<const double> grad_y, std::size_t length);

/// Mean over `bins` contiguous time windows per channel; bin b covers
/// [floor(b*L/bins), floor((b+1)*L/bins)). One bin is the global average.
Matrix binned_avg_pool(const Matrix& x, std::size_t bins);
Matrix binned_avg_pool_backward(const Matrix& grad_y, std::size_t length);

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Decoupled weight decay Adam. Moments are keyed by parameter position, so
/// step() must always receive the same parameter list.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Throws std::runtime_error naming the first parameter with a non-finite gradient.
  void step(std::span<ParamTensor* const> params);

  const AdamWConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::int64_t step_count() const { return step_; }

 private:
  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Named tensor as stored in a checkpoint.
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "TPLC", u32 version, u32 count, then per tensor: u32 name length, UTF-8
/// name, u32 rank, u32 shape[rank], f64 values. All little-endian.
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> snapshot(std::span<ParamTensor* const> params);
/// Copies values by name; throws if a parameter is missing or mis-shaped.
void restore(std::span<ParamTensor* const> params, std::span<const NamedTensor> tensors);

}  // namespace tpl::nn
