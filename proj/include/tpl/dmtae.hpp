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

// Diffeomorphic multitasking autoencoder: a 1D temporal-conv bottleneck, a
// CPAB alignment head on the latent, and the joint-alignment training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpl/cpab.hpp"
#include "tpl/matrix.hpp"
#include "tpl/nn.hpp"
#include "tpl/sequence.hpp"

namespace tpl::dmtae {

enum class Variant { standard, vae };

struct Ablation {
  bool no_bottleneck = false;  // align the channel mean of U; no encoder or decoder
  bool no_decoder = false;     // drop the reconstruction term
  bool no_median = false;      // prototype length = longest training video

  bool any() const { return no_bottleneck || no_decoder || no_median; }
};

struct ModelConfig {
  std::size_t channels = 0;
  std::size_t hidden = 32;
  std::size_t kernel = 5;
  int n_cells = 16;
  std::size_t loc_length = 128;
  std::size_t loc_hidden = 32;
  std::size_t loc_bins = 16;
  Variant variant = Variant::standard;
  Ablation ablation;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t epochs = 100;
  double alpha = 2.0;
  std::optional<double> t0;  // defaults to epochs / 2
  std::uint64_t seed = 0;
  double beta = 1e-3;
  double gamma_smooth = 1e-2;
  double alpha_traj = 1e-3;
  std::size_t subsample = 32;
  /// Let the reconstruction term update the warps. Off by default: the
  /// round trip is warp-invariant up to resampling, and its residual
  /// gradient drives theta away from zero while lambda is still small.
  bool rec_theta_gradient = false;

  double midpoint() const { return t0.value_or(static_cast<double>(epochs) / 2.0); }
  void validate() const;
};

class DmtaeModel {
 public:
  DmtaeModel() = default;
  DmtaeModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t latent_channels() const;
  std::size_t theta_dim() const { return static_cast<std::size_t>(config_.n_cells - 1); }
  bool has_encoder() const { return !config_.ablation.no_bottleneck; }
  bool has_decoder() const { return !config_.ablation.no_bottleneck && !config_.ablation.no_decoder; }

  std::size_t prototype_length() const { return prototype_length_; }
  void set_prototype_length(std::size_t length) { prototype_length_ = length; }

  std::vector<nn::ParamTensor*> parameters();
  std::vector<nn::ParamTensor*> encoder_parameters();
  std::vector<nn::ParamTensor*> decoder_parameters();
  std::vector<nn::ParamTensor*> align_parameters();
  void zero_grad();

  nn::Conv1d enc1, enc2, enc3, enc_logvar;
  nn::Conv1d dec1, dec2, dec3;
  nn::Conv1d loc1, loc2, loc3;
  nn::Dense head;

 private:
  ModelConfig config_;
  std::size_t prototype_length_ = 0;
};

/// Prototype length used for training: median length, or the maximum under
/// the no-median ablation.
std::size_t prototype_length_for(std::span<const std::size_t> lengths, const Ablation& ablation);

struct Encoding {
  Matrix z;       // latent used downstream (the sample for the VAE)
  Matrix mu;      // equals z outside the VAE
  Matrix logvar;  // VAE only
  std::vector<std::uint8_t> frame_mask;
};

/// Per-frame validity: a frame is valid when any of its channels is.
std::vector<std::uint8_t> frame_mask_of(const EmbeddingSequence& seq);

/// Masked entries are zeroed before the encoder sees them. The VAE draws
/// eps from a generator seeded with noise_seed; noise_seed = nullopt uses mu.
Encoding encode(const DmtaeModel& model, const EmbeddingSequence& seq,
                std::optional<std::uint64_t> noise_seed = std::nullopt);
Matrix decode(const DmtaeModel& model, const Matrix& z);

/// The latent is resampled to loc_length and z-scored per channel before the
/// conv head.
cpab::WarpParams predict_theta(const DmtaeModel& model, const Matrix& z);

struct IcaeResult {
  double loss = 0.0;
  Matrix prototype;
};

struct IcaeGrad {
  std::vector<Matrix> latents;
  std::vector<std::vector<double>> thetas;
};

IcaeResult icae_loss(std::span<const Matrix> latents, std::span<const cpab::WarpParams> thetas,
                     std::size_t prototype_length, IcaeGrad* grad = nullptr);

double reconstruction_loss(const DmtaeModel& model, std::span<const EmbeddingSequence> seqs,
                           std::span<const cpab::WarpParams> thetas);

struct VaeLosses {
  double kl = 0.0;
  double smooth = 0.0;
  double traj_var = 0.0;
};

/// Evenly spaced valid frame indices, k of them (with repeats when fewer exist).
std::vector<std::size_t> subsample_valid(std::span<const std::uint8_t> frame_mask, std::size_t length, std::size_t k);

VaeLosses vae_losses(std::span<const Matrix> mu, std::span<const Matrix> logvar, std::span<const Matrix> z,
                     std::span<const std::vector<std::uint8_t>> frame_masks, std::size_t k);

double annealing_weight(double epoch, double t0, double alpha);

struct LossComponents {
  double icae = 0.0;
  double rec = 0.0;
  double kl = 0.0;
  double smooth = 0.0;
  double traj_var = 0.0;
  double total = 0.0;
};

double total_loss(const LossComponents& c, double lambda, Variant variant, const TrainConfig& config);

struct BatchOutput {
  LossComponents losses;
  std::vector<cpab::WarpParams> thetas;
  Matrix prototype;
};

/// Full forward pass of a mini-batch. With backward = true, gradients of the
/// total loss are accumulated into the model's parameter tensors.
BatchOutput evaluate_batch(DmtaeModel& model, std::span<const EmbeddingSequence> seqs, double lambda,
                           const TrainConfig& config, std::optional<std::uint64_t> noise_seed, bool backward);

struct EpochRecord {
  std::size_t epoch = 0;
  double lambda = 0.0;
  LossComponents losses;
};

std::string history_to_csv(std::span<const EpochRecord> history);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Sets the prototype length from the data, then runs AdamW over shuffled
/// mini-batches. Throws std::runtime_error on a non-finite loss.
std::vector<EpochRecord> train(DmtaeModel& model, std::span<const EmbeddingSequence> seqs, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

struct AlignmentResult {
  std::vector<cpab::WarpParams> thetas;
  std::vector<Matrix> latents;
  std::vector<Matrix> warped;
  Matrix prototype;
  LossComponents losses;
};

/// No parameter updates; the VAE uses its mean latent.
AlignmentResult infer_alignment(const DmtaeModel& model, std::span<const EmbeddingSequence> seqs);
std::vector<cpab::WarpParams> predict_thetas(const DmtaeModel& model, std::span<const EmbeddingSequence> seqs);

std::string model_config_to_json(const DmtaeModel& model);
/// Writes <stem>.tplc (tensors) and <stem>.json (architecture).
void save_model(const DmtaeModel& model, const std::filesystem::path& stem);
DmtaeModel load_model(const std::filesystem::path& stem);

}  // namespace tpl::dmtae
