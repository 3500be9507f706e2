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

#include "tpl/dmtae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tpl/fileio.hpp"

namespace tpl::dmtae {

namespace {

constexpr double kNormEpsilon = 1e-6;
constexpr std::uint64_t kLogvarSeedSalt = 0x5bd1e9955bd1e995ULL;

void add_into(Matrix& dst, const Matrix& src, double scale = 1.0) {
  auto& d = dst.data();
  const auto& s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

double squared_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return s;
}

Matrix masked_input(const EmbeddingSequence& seq) {
  Matrix x = seq.data;
  if (seq.mask) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (seq.mask->data()[i] == 0.0) x.data()[i] = 0.0;
    }
  }
  return x;
}

Matrix mask_or_ones(const EmbeddingSequence& seq) {
  return seq.mask ? *seq.mask : Matrix(seq.channels(), seq.length(), 1.0);
}

// Mean over the valid channels of each frame; zero where none is valid.
Matrix channel_mean(const EmbeddingSequence& seq) {
  Matrix z(1, seq.length());
  for (std::size_t t = 0; t < seq.length(); ++t) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < seq.channels(); ++c) {
      if (!seq.valid(c, t)) continue;
      sum += seq.data(c, t);
      ++count;
    }
    z(0, t) = count ? sum / static_cast<double>(count) : 0.0;
  }
  return z;
}

struct EncoderPass {
  Matrix x, a1, h1, a2, h2, mu, logvar, eps, z;
};

EncoderPass encoder_forward(const DmtaeModel& m, const EmbeddingSequence& seq, std::mt19937_64* noise) {
  if (seq.channels() != m.config().channels) {
    throw std::invalid_argument("sequence " + seq.id + " has " + std::to_string(seq.channels()) +
                                " channels, model expects " + std::to_string(m.config().channels));
  }
  EncoderPass p;
  p.x = masked_input(seq);
  if (!m.has_encoder()) {
    p.z = channel_mean(seq);
    p.mu = p.z;
    return p;
  }
  p.a1 = m.enc1.forward(p.x);
  p.h1 = nn::relu(p.a1);
  p.a2 = m.enc2.forward(p.h1);
  p.h2 = nn::relu(p.a2);
  p.mu = m.enc3.forward(p.h2);
  if (m.config().variant == Variant::vae) {
    p.logvar = m.enc_logvar.forward(p.h2);
    p.eps = Matrix(1, seq.length());
    if (noise) {
      std::normal_distribution<double> n01(0.0, 1.0);
      for (double& e : p.eps.data()) e = n01(*noise);
    }
    p.z = p.mu;
    for (std::size_t t = 0; t < p.z.size(); ++t) {
      p.z.data()[t] += p.eps.data()[t] * std::exp(0.5 * p.logvar.data()[t]);
    }
  } else {
    p.z = p.mu;
  }
  return p;
}

void encoder_backward(DmtaeModel& m, const EncoderPass& p, const Matrix& grad_mu, const Matrix* grad_logvar) {
  Matrix gh2 = m.enc3.backward(p.h2, grad_mu);
  if (grad_logvar) add_into(gh2, m.enc_logvar.backward(p.h2, *grad_logvar));
  const Matrix gh1 = m.enc2.backward(p.h1, nn::relu_backward(p.a2, gh2));
  m.enc1.backward(p.x, nn::relu_backward(p.a1, gh1));
}

struct DecoderPass {
  Matrix in, a1, h1, a2, h2, out;
};

DecoderPass decoder_forward(const DmtaeModel& m, const Matrix& z) {
  DecoderPass p;
  p.in = z;
  p.a1 = m.dec1.forward(z);
  p.h1 = nn::relu(p.a1);
  p.a2 = m.dec2.forward(p.h1);
  p.h2 = nn::relu(p.a2);
  p.out = m.dec3.forward(p.h2);
  return p;
}

Matrix decoder_backward(DmtaeModel& m, const DecoderPass& p, const Matrix& grad_out) {
  const Matrix gh2 = m.dec3.backward(p.h2, grad_out);
  const Matrix gh1 = m.dec2.backward(p.h1, nn::relu_backward(p.a2, gh2));
  return m.dec1.backward(p.in, nn::relu_backward(p.a1, gh1));
}

struct AlignPass {
  std::size_t in_length = 0;
  Matrix n;
  std::vector<double> inv_std;
  Matrix a1, h1, a2, h2, a3, h3;
  Matrix pooled;
  cpab::WarpParams theta;
};

AlignPass align_forward(const DmtaeModel& m, const Matrix& z) {
  AlignPass p;
  p.in_length = z.cols();
  const Matrix r = resample(z, m.config().loc_length);
  const std::size_t d = r.rows();
  p.n = r;
  const auto len = static_cast<double>(r.cols());
  for (std::size_t c = 0; c < d; ++c) {
    auto row = p.n.row(c);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / len;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var / len + kNormEpsilon);
    for (double& v : row) v = (v - mean) * inv;
    p.inv_std.push_back(inv);
  }
  p.a1 = m.loc1.forward(p.n);
  p.h1 = nn::relu(p.a1);
  p.a2 = m.loc2.forward(p.h1);
  p.h2 = nn::relu(p.a2);
  p.a3 = m.loc3.forward(p.h2);
  p.h3 = nn::relu(p.a3);
  p.pooled = nn::binned_avg_pool(p.h3, m.config().loc_bins);
  p.theta = cpab::WarpParams(m.head.forward(p.pooled.data()));
  return p;
}

Matrix align_backward(DmtaeModel& m, const AlignPass& p, std::span<const double> grad_theta) {
  const auto gp = m.head.backward(p.pooled.data(), grad_theta);
  const Matrix gh3 = nn::binned_avg_pool_backward(Matrix(p.pooled.rows(), p.pooled.cols(), gp), p.h3.cols());
  const Matrix gh2 = m.loc3.backward(p.h2, nn::relu_backward(p.a3, gh3));
  const Matrix gh1 = m.loc2.backward(p.h1, nn::relu_backward(p.a2, gh2));
  Matrix gn = m.loc1.backward(p.n, nn::relu_backward(p.a1, gh1));
  const std::size_t d = gn.rows();
  const auto len = static_cast<double>(gn.cols());
  for (std::size_t c = 0; c < d; ++c) {
    auto g = gn.row(c);
    const auto n = p.n.row(c);
    double mean_g = 0.0, mean_gn = 0.0;
    for (std::size_t t = 0; t < g.size(); ++t) {
      mean_g += g[t];
      mean_gn += g[t] * n[t];
    }
    mean_g /= len;
    mean_gn /= len;
    for (std::size_t t = 0; t < g.size(); ++t) g[t] = p.inv_std[c] * (g[t] - mean_g - n[t] * mean_gn);
  }
  return resample_backward(gn, p.in_length);
}

struct VaeGrad {
  std::vector<Matrix> mu, logvar, z_smooth, z_traj;
};

VaeLosses vae_losses_impl(std::span<const Matrix> mu, std::span<const Matrix> logvar, std::span<const Matrix> z,
                          std::span<const std::vector<std::uint8_t>> masks, std::size_t k, VaeGrad* grad) {
  const std::size_t n = z.size();
  if (n == 0 || mu.size() != n || logvar.size() != n || masks.size() != n) {
    throw std::invalid_argument("vae_losses: inconsistent batch sizes");
  }
  if (k == 0) throw std::invalid_argument("vae_losses: subsample count must be positive");
  const double inv_n = 1.0 / static_cast<double>(n);
  VaeLosses out;
  if (grad) {
    grad->mu.clear();
    grad->logvar.clear();
    grad->z_smooth.clear();
    grad->z_traj.clear();
  }
  std::vector<std::vector<std::size_t>> picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = z[i].cols();
    if (mu[i].cols() != len || logvar[i].cols() != len || (!masks[i].empty() && masks[i].size() != len)) {
      throw std::invalid_argument("vae_losses: shape mismatch");
    }
    auto valid = [&](std::size_t t) { return masks[i].empty() || masks[i][t] != 0; };
    Matrix gmu(1, len), glv(1, len), gz(1, len);

    double kl = 0.0, count = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      if (!valid(t)) continue;
      const double m = mu[i].data()[t], lv = logvar[i].data()[t];
      kl += -0.5 * (1.0 + lv - m * m - std::exp(lv));
      count += 1.0;
    }
    if (count == 0.0) throw std::invalid_argument("vae_losses: sequence without valid frames");
    out.kl += inv_n * kl / count;

    double smooth = 0.0, pairs = 0.0;
    for (std::size_t t = 0; t + 1 < len; ++t) {
      if (!valid(t) || !valid(t + 1)) continue;
      const double d = z[i].data()[t + 1] - z[i].data()[t];
      smooth += d * d;
      pairs += 1.0;
    }
    if (pairs > 0.0) out.smooth += inv_n * smooth / pairs;

    if (grad) {
      for (std::size_t t = 0; t < len; ++t) {
        if (!valid(t)) continue;
        gmu.data()[t] = inv_n * mu[i].data()[t] / count;
        glv.data()[t] = inv_n * -0.5 * (1.0 - std::exp(logvar[i].data()[t])) / count;
      }
      if (pairs > 0.0) {
        for (std::size_t t = 0; t + 1 < len; ++t) {
          if (!valid(t) || !valid(t + 1)) continue;
          const double g = inv_n * 2.0 * (z[i].data()[t + 1] - z[i].data()[t]) / pairs;
          gz.data()[t + 1] += g;
          gz.data()[t] -= g;
        }
      }
      grad->mu.push_back(std::move(gmu));
      grad->logvar.push_back(std::move(glv));
      grad->z_smooth.push_back(std::move(gz));
      grad->z_traj.emplace_back(1, len);
    }
    picks[i] = subsample_valid(masks[i], len, k);
  }

  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) mean[j] += inv_n * z[i].data()[picks[i][j]];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double d = z[i].data()[picks[i][j]] - mean[j];
      out.traj_var += inv_n * d * d;
      if (grad) grad->z_traj[i].data()[picks[i][j]] += inv_n * 2.0 * d;
    }
  }
  return out;
}

void check_batch(const DmtaeModel& model, std::span<const EmbeddingSequence> seqs) {
  if (seqs.size() < 2) throw std::invalid_argument("a batch needs at least two sequences");
  if (model.prototype_length() < 2) throw std::invalid_argument("model prototype length is not set");
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and model

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  const double mid = midpoint();
  if (mid < 0.0 || mid > static_cast<double>(epochs)) throw std::invalid_argument("t0 must lie in [0, epochs]");
  if (beta < 0.0 || gamma_smooth < 0.0 || alpha_traj < 0.0) throw std::invalid_argument("negative VAE weight");
  if (subsample == 0) throw std::invalid_argument("subsample count must be positive");
}

DmtaeModel::DmtaeModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  if (config_.channels == 0) throw std::invalid_argument("model needs at least one input channel");
  if (config_.n_cells < 2) throw std::invalid_argument("model needs at least two tessellation cells");
  if (config_.loc_length < 2) throw std::invalid_argument("localization length must be at least 2");
  if (config_.loc_bins == 0 || config_.loc_bins > config_.loc_length) {
    throw std::invalid_argument("localization bins must be in [1, loc_length]");
  }
  if (config_.variant == Variant::vae && config_.ablation.any()) {
    throw std::invalid_argument("ablation flags apply to the standard variant only");
  }
  const std::size_t c = config_.channels, h = config_.hidden, k = config_.kernel;
  const auto pad = nn::Padding::replicate;
  enc1 = nn::Conv1d("encoder.conv1", c, h, k, pad);
  enc2 = nn::Conv1d("encoder.conv2", h, h, k, pad);
  enc3 = nn::Conv1d("encoder.conv3", h, 1, k, pad);
  enc_logvar = nn::Conv1d("encoder.logvar", h, 1, k, pad);
  dec1 = nn::Conv1d("decoder.conv1", 1, h, k, pad);
  dec2 = nn::Conv1d("decoder.conv2", h, h, k, pad);
  dec3 = nn::Conv1d("decoder.conv3", h, c, k, pad);
  const std::size_t lh = config_.loc_hidden;
  loc1 = nn::Conv1d("align.conv1", latent_channels(), lh, k, pad);
  loc2 = nn::Conv1d("align.conv2", lh, lh, k, pad);
  loc3 = nn::Conv1d("align.conv3", lh, lh, k, pad);
  head = nn::Dense("align.head", lh * config_.loc_bins, theta_dim());

  std::mt19937_64 rng(seed);
  for (nn::Conv1d* conv : {&enc1, &enc2, &enc3, &dec1, &dec2, &dec3, &loc1, &loc2, &loc3}) conv->init(rng);
  std::mt19937_64 logvar_rng(seed ^ kLogvarSeedSalt);
  enc_logvar.init(logvar_rng);
}

std::size_t DmtaeModel::latent_channels() const { return 1; }

std::vector<nn::ParamTensor*> DmtaeModel::encoder_parameters() {
  if (!has_encoder()) return {};
  std::vector<nn::ParamTensor*> p{&enc1.weight, &enc1.bias, &enc2.weight, &enc2.bias, &enc3.weight, &enc3.bias};
  if (config_.variant == Variant::vae) {
    p.push_back(&enc_logvar.weight);
    p.push_back(&enc_logvar.bias);
  }
  return p;
}

std::vector<nn::ParamTensor*> DmtaeModel::decoder_parameters() {
  if (!has_decoder()) return {};
  return {&dec1.weight, &dec1.bias, &dec2.weight, &dec2.bias, &dec3.weight, &dec3.bias};
}

std::vector<nn::ParamTensor*> DmtaeModel::align_parameters() {
  return {&loc1.weight, &loc1.bias, &loc2.weight, &loc2.bias, &loc3.weight, &loc3.bias, &head.weight, &head.bias};
}

std::vector<nn::ParamTensor*> DmtaeModel::parameters() {
  auto p = encoder_parameters();
  for (auto* t : decoder_parameters()) p.push_back(t);
  for (auto* t : align_parameters()) p.push_back(t);
  return p;
}

void DmtaeModel::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::size_t prototype_length_for(std::span<const std::size_t> lengths, const Ablation& ablation) {
  if (lengths.empty()) throw std::invalid_argument("no training lengths");
  if (ablation.no_median) return *std::max_element(lengths.begin(), lengths.end());
  return median_length(lengths);
}

// ---------------------------------------------------------------------------
// Forward pieces

std::vector<std::uint8_t> frame_mask_of(const EmbeddingSequence& seq) {
  std::vector<std::uint8_t> m(seq.length(), 1);
  if (!seq.mask) return m;
  for (std::size_t t = 0; t < seq.length(); ++t) {
    bool any = false;
    for (std::size_t c = 0; c < seq.channels(); ++c) any |= seq.valid(c, t);
    m[t] = any ? 1 : 0;
  }
  return m;
}

Encoding encode(const DmtaeModel& model, const EmbeddingSequence& seq, std::optional<std::uint64_t> noise_seed) {
  std::mt19937_64 noise(noise_seed.value_or(0));
  auto p = encoder_forward(model, seq, noise_seed ? &noise : nullptr);
  return {std::move(p.z), std::move(p.mu), std::move(p.logvar), frame_mask_of(seq)};
}

Matrix decode(const DmtaeModel& model, const Matrix& z) { return decoder_forward(model, z).out; }

cpab::WarpParams predict_theta(const DmtaeModel& model, const Matrix& z) {
  if (z.rows() != model.latent_channels()) throw std::invalid_argument("latent channel mismatch");
  return align_forward(model, z).theta;
}

IcaeResult icae_loss(std::span<const Matrix> latents, std::span<const cpab::WarpParams> thetas,
                     std::size_t prototype_length, IcaeGrad* grad) {
  const std::size_t n = latents.size();
  if (n < 2) throw std::invalid_argument("icae_loss needs at least two sequences");
  if (thetas.size() != n) throw std::invalid_argument("icae_loss: one theta per latent required");
  const std::size_t d = latents[0].rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<WarpSampler> fwd, inv;
  IcaeResult out{0.0, Matrix(d, prototype_length)};
  for (std::size_t i = 0; i < n; ++i) {
    fwd.emplace_back(thetas[i], latents[i].cols(), prototype_length, grad != nullptr);
    inv.emplace_back(cpab::inverse(thetas[i]), prototype_length, latents[i].cols(), grad != nullptr);
    add_into(out.prototype, fwd[i].apply(latents[i]), inv_n);
  }
  std::vector<Matrix> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    resid[i] = inv[i].apply(out.prototype);
    add_into(resid[i], latents[i], -1.0);
    out.loss += inv_n * squared_norm(resid[i]) / static_cast<double>(d * latents[i].cols());
  }
  if (!grad) return out;

  grad->latents.assign(n, Matrix());
  grad->thetas.assign(n, std::vector<double>(thetas[0].size(), 0.0));
  Matrix gproto(d, prototype_length);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix g = resid[i];
    for (double& v : g.data()) v *= 2.0 * inv_n / static_cast<double>(d * latents[i].cols());
    add_into(gproto, inv[i].backward_input(g));
    std::vector<double> gt(thetas[i].size(), 0.0);
    inv[i].backward_theta(out.prototype, g, gt);
    for (std::size_t j = 0; j < gt.size(); ++j) grad->thetas[i][j] -= gt[j];
    grad->latents[i] = g;
    for (double& v : grad->latents[i].data()) v = -v;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Matrix gw = gproto;
    for (double& v : gw.data()) v *= inv_n;
    add_into(grad->latents[i], fwd[i].backward_input(gw));
    fwd[i].backward_theta(latents[i], gw, grad->thetas[i]);
  }
  return out;
}

double reconstruction_loss(const DmtaeModel& model, std::span<const EmbeddingSequence> seqs,
                           std::span<const cpab::WarpParams> thetas) {
  if (seqs.size() != thetas.size() || seqs.empty()) throw std::invalid_argument("reconstruction_loss: size mismatch");
  if (!model.has_decoder()) return 0.0;
  std::size_t proto_len = model.prototype_length();
  if (proto_len < 2) {
    std::vector<std::size_t> lengths;
    for (const auto& s : seqs) lengths.push_back(s.length());
    proto_len = prototype_length_for(lengths, model.config().ablation);
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto enc = encoder_forward(model, seqs[i], nullptr);
    const Matrix recon = decode(model, apply_warp(enc.mu, thetas[i], proto_len));
    const Matrix back = apply_warp(recon, cpab::inverse(thetas[i]), seqs[i].length());
    const Matrix mask = mask_or_ones(seqs[i]);
    double err = 0.0, count = 0.0;
    for (std::size_t k = 0; k < back.size(); ++k) {
      if (mask.data()[k] == 0.0) continue;
      const double d = enc.x.data()[k] - back.data()[k];
      err += d * d;
      count += 1.0;
    }
    if (count > 0.0) loss += err / count;
  }
  return loss / static_cast<double>(seqs.size());
}

std::vector<std::size_t> subsample_valid(std::span<const std::uint8_t> frame_mask, std::size_t length, std::size_t k) {
  std::vector<std::size_t> valid;
  for (std::size_t t = 0; t < length; ++t) {
    if (frame_mask.empty() || frame_mask[t] != 0) valid.push_back(t);
  }
  if (valid.empty()) throw std::invalid_argument("no valid frames to subsample");
  std::vector<std::size_t> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double pos = k == 1 ? 0.0
                              : static_cast<double>(j) * static_cast<double>(valid.size() - 1) /
                                    static_cast<double>(k - 1);
    out[j] = valid[static_cast<std::size_t>(std::floor(pos + 0.5))];
  }
  return out;
}

VaeLosses vae_losses(std::span<const Matrix> mu, std::span<const Matrix> logvar, std::span<const Matrix> z,
                     std::span<const std::vector<std::uint8_t>> frame_masks, std::size_t k) {
  return vae_losses_impl(mu, logvar, z, frame_masks, k, nullptr);
}

double annealing_weight(double epoch, double t0, double alpha) {
  if (epoch < 0.0) throw std::invalid_argument("annealing epoch must be non-negative");
  if (epoch >= t0) return 1.0;
  return 1.0 / (1.0 + std::exp(-alpha * (epoch - t0)));
}

double total_loss(const LossComponents& c, double lambda, Variant variant, const TrainConfig& config) {
  double total = lambda * c.icae + c.rec;
  if (variant == Variant::vae) {
    total += config.beta * c.kl + config.gamma_smooth * c.smooth + config.alpha_traj * c.traj_var;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Batch forward / backward

BatchOutput evaluate_batch(DmtaeModel& model, std::span<const EmbeddingSequence> seqs, double lambda,
                           const TrainConfig& config, std::optional<std::uint64_t> noise_seed, bool backward) {
  check_batch(model, seqs);
  const std::size_t n = seqs.size();
  const std::size_t lp = model.prototype_length();
  const std::size_t d = model.latent_channels();
  const bool vae = model.config().variant == Variant::vae;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::mt19937_64 noise(noise_seed.value_or(0));

  std::vector<EncoderPass> enc;
  std::vector<AlignPass> align;
  std::vector<WarpSampler> fwd, inv;
  std::vector<Matrix> warped;
  BatchOutput out;
  out.prototype = Matrix(d, lp);
  for (std::size_t i = 0; i < n; ++i) {
    enc.push_back(encoder_forward(model, seqs[i], noise_seed ? &noise : nullptr));
    align.push_back(align_forward(model, enc[i].z));
    const auto& theta = align[i].theta;
    out.thetas.push_back(theta);
    fwd.emplace_back(theta, seqs[i].length(), lp, backward);
    inv.emplace_back(cpab::inverse(theta), lp, seqs[i].length(), backward);
    warped.push_back(fwd[i].apply(enc[i].z));
    add_into(out.prototype, warped[i], inv_n);
  }

  auto& L = out.losses;
  std::vector<Matrix> icae_resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    icae_resid[i] = inv[i].apply(out.prototype);
    add_into(icae_resid[i], enc[i].z, -1.0);
    L.icae += inv_n * squared_norm(icae_resid[i]) / static_cast<double>(d * seqs[i].length());
  }

  std::vector<DecoderPass> dec;
  std::vector<Matrix> rec_resid(n);
  std::vector<double> mask_count(n, 0.0);
  if (model.has_decoder()) {
    for (std::size_t i = 0; i < n; ++i) {
      dec.push_back(decoder_forward(model, warped[i]));
      rec_resid[i] = inv[i].apply(dec[i].out);
      const Matrix mask = mask_or_ones(seqs[i]);
      double err = 0.0;
      for (std::size_t k = 0; k < rec_resid[i].size(); ++k) {
        double& r = rec_resid[i].data()[k];
        r = mask.data()[k] == 0.0 ? 0.0 : r - enc[i].x.data()[k];
        err += r * r;
        mask_count[i] += mask.data()[k] != 0.0 ? 1.0 : 0.0;
      }
      if (mask_count[i] > 0.0) L.rec += inv_n * err / mask_count[i];
    }
  }

  VaeGrad vgrad;
  if (vae) {
    std::vector<Matrix> mus, lvs, zs;
    std::vector<std::vector<std::uint8_t>> masks;
    for (std::size_t i = 0; i < n; ++i) {
      mus.push_back(enc[i].mu);
      lvs.push_back(enc[i].logvar);
      zs.push_back(enc[i].z);
      masks.push_back(frame_mask_of(seqs[i]));
    }
    const auto v = vae_losses_impl(mus, lvs, zs, masks, config.subsample, backward ? &vgrad : nullptr);
    L.kl = v.kl;
    L.smooth = v.smooth;
    L.traj_var = v.traj_var;
  }
  L.total = total_loss(L, lambda, model.config().variant, config);
  if (!backward) return out;

  // Reverse pass.
  std::vector<Matrix> gz(n);
  std::vector<std::vector<double>> gtheta(n, std::vector<double>(model.theta_dim(), 0.0));
  std::vector<Matrix> gwarped(n);
  Matrix gproto(d, lp);
  std::vector<double> scratch(model.theta_dim());
  auto sub_theta = [&](std::size_t i) {
    for (std::size_t j = 0; j < scratch.size(); ++j) gtheta[i][j] -= scratch[j];
  };

  for (std::size_t i = 0; i < n; ++i) {
    gz[i] = Matrix(d, seqs[i].length());
    gwarped[i] = Matrix(d, lp);
    Matrix g = icae_resid[i];
    for (double& v : g.data()) v *= lambda * 2.0 * inv_n / static_cast<double>(d * seqs[i].length());
    add_into(gproto, inv[i].backward_input(g));
    std::fill(scratch.begin(), scratch.end(), 0.0);
    inv[i].backward_theta(out.prototype, g, scratch);
    sub_theta(i);
    add_into(gz[i], g, -1.0);

    if (model.has_decoder() && mask_count[i] > 0.0) {
      Matrix gr = rec_resid[i];
      for (double& v : gr.data()) v *= 2.0 * inv_n / mask_count[i];
      const Matrix gdec = inv[i].backward_input(gr);
      if (config.rec_theta_gradient) {
        std::fill(scratch.begin(), scratch.end(), 0.0);
        inv[i].backward_theta(dec[i].out, gr, scratch);
        sub_theta(i);
      }
      add_into(gwarped[i], decoder_backward(model, dec[i], gdec));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    // gwarped holds the reconstruction path only at this point.
    if (config.rec_theta_gradient) fwd[i].backward_theta(enc[i].z, gwarped[i], gtheta[i]);
    Matrix gshared(d, lp);
    add_into(gshared, gproto, inv_n);
    fwd[i].backward_theta(enc[i].z, gshared, gtheta[i]);
    add_into(gwarped[i], gshared);
    add_into(gz[i], fwd[i].backward_input(gwarped[i]));
    add_into(gz[i], align_backward(model, align[i], gtheta[i]));
  }
  if (!model.has_encoder()) return out;

  for (std::size_t i = 0; i < n; ++i) {
    if (!vae) {
      encoder_backward(model, enc[i], gz[i], nullptr);
      continue;
    }
    add_into(gz[i], vgrad.z_smooth[i], config.gamma_smooth);
    add_into(gz[i], vgrad.z_traj[i], config.alpha_traj);
    Matrix gmu = gz[i];
    add_into(gmu, vgrad.mu[i], config.beta);
    Matrix glv(1, seqs[i].length());
    for (std::size_t t = 0; t < glv.size(); ++t) {
      glv.data()[t] = gz[i].data()[t] * enc[i].eps.data()[t] * 0.5 * std::exp(0.5 * enc[i].logvar.data()[t]) +
                      config.beta * vgrad.logvar[i].data()[t];
    }
    encoder_backward(model, enc[i], gmu, &glv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training and inference

std::string history_to_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lambda,icae,rec,kl,smooth,trajvar,total\n";
  for (const auto& r : history) {
    const auto& l = r.losses;
    os << r.epoch << ',' << r.lambda << ',' << l.icae << ',' << l.rec << ',' << l.kl << ',' << l.smooth << ','
       << l.traj_var << ',' << l.total << '\n';
  }
  return os.str();
}

std::vector<EpochRecord> train(DmtaeModel& model, std::span<const EmbeddingSequence> seqs, const TrainConfig& config,
                               const EpochCallback& on_epoch) {
  config.validate();
  if (seqs.size() < 2) throw std::invalid_argument("training needs at least two sequences per class");
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) {
    if (s.channels() != model.config().channels) {
      throw std::invalid_argument("sequence " + s.id + " has the wrong channel count");
    }
    lengths.push_back(s.length());
  }
  model.set_prototype_length(prototype_length_for(lengths, model.config().ablation));

  nn::AdamW opt({config.learning_rate, config.weight_decay});
  const auto params = model.parameters();
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(config.batch_size, seqs.size());

  std::vector<EpochRecord> history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lambda = annealing_weight(static_cast<double>(epoch), config.midpoint(), config.alpha);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t b = 0; b < order.size(); b += batch) ranges.emplace_back(b, std::min(order.size(), b + batch));
    if (ranges.size() > 1 && ranges.back().second - ranges.back().first < 2) {
      ranges[ranges.size() - 2].second = ranges.back().second;
      ranges.pop_back();
    }

    for (std::size_t b = 0; b < ranges.size(); ++b) {
      std::vector<EmbeddingSequence> items;
      for (std::size_t k = ranges[b].first; k < ranges[b].second; ++k) items.push_back(seqs[order[k]]);
      const std::uint64_t noise_seed = rng();
      model.zero_grad();
      BatchOutput out;
      try {
        out = evaluate_batch(model, items, rec.lambda, config, noise_seed, true);
      } catch (const std::exception& e) {
        throw std::runtime_error("training failed at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b) + ": " + e.what());
      }
      if (!std::isfinite(out.losses.total)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      opt.step(params);
      const double w = 1.0 / static_cast<double>(ranges.size());
      rec.losses.icae += w * out.losses.icae;
      rec.losses.rec += w * out.losses.rec;
      rec.losses.kl += w * out.losses.kl;
      rec.losses.smooth += w * out.losses.smooth;
      rec.losses.traj_var += w * out.losses.traj_var;
      rec.losses.total += w * out.losses.total;
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

std::vector<cpab::WarpParams> predict_thetas(const DmtaeModel& model, std::span<const EmbeddingSequence> seqs) {
  std::vector<cpab::WarpParams> out;
  for (const auto& s : seqs) out.push_back(align_forward(model, encoder_forward(model, s, nullptr).z).theta);
  return out;
}

AlignmentResult infer_alignment(const DmtaeModel& model, std::span<const EmbeddingSequence> seqs) {
  if (seqs.empty()) throw std::invalid_argument("infer_alignment: no sequences");
  if (model.prototype_length() < 2) throw std::invalid_argument("model prototype length is not set");
  AlignmentResult r;
  const std::size_t lp = model.prototype_length();
  r.prototype = Matrix(model.latent_channels(), lp);
  const double inv_n = 1.0 / static_cast<double>(seqs.size());
  for (const auto& s : seqs) {
    auto enc = encoder_forward(model, s, nullptr);
    r.thetas.push_back(align_forward(model, enc.z).theta);
    r.warped.push_back(apply_warp(enc.z, r.thetas.back(), lp));
    add_into(r.prototype, r.warped.back(), inv_n);
    r.latents.push_back(std::move(enc.z));
  }
  if (seqs.size() >= 2) {
    DmtaeModel scratch = model;
    r.losses = evaluate_batch(scratch, seqs, 1.0, TrainConfig{}, std::nullopt, false).losses;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Persistence

std::string model_config_to_json(const DmtaeModel& model) {
  const auto& c = model.config();
  nlohmann::json j{{"format", "tpl-dmtae"},
                   {"channels", c.channels},
                   {"hidden", c.hidden},
                   {"kernel", c.kernel},
                   {"n_cells", c.n_cells},
                   {"loc_length", c.loc_length},
                   {"loc_hidden", c.loc_hidden},
                   {"loc_bins", c.loc_bins},
                   {"variant", c.variant == Variant::vae ? "vae" : "standard"},
                   {"ablation",
                    {{"no_bottleneck", c.ablation.no_bottleneck},
                     {"no_decoder", c.ablation.no_decoder},
                     {"no_median", c.ablation.no_median}}},
                   {"prototype_length", model.prototype_length()}};
  return j.dump(2) + "\n";
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

}  // namespace

void save_model(const DmtaeModel& model, const std::filesystem::path& stem) {
  DmtaeModel copy = model;
  nn::save_checkpoint(with_suffix(stem, ".tplc"), nn::snapshot(copy.parameters()));
  io::write_text_atomic(with_suffix(stem, ".json"), model_config_to_json(model));
}

DmtaeModel load_model(const std::filesystem::path& stem) {
  const auto j = nlohmann::json::parse(io::read_text(with_suffix(stem, ".json")));
  if (j.value("format", std::string()) != "tpl-dmtae") throw std::runtime_error("not a model description: " + stem.string());
  ModelConfig c;
  c.channels = j.at("channels").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.n_cells = j.at("n_cells").get<int>();
  c.loc_length = j.at("loc_length").get<std::size_t>();
  c.loc_hidden = j.at("loc_hidden").get<std::size_t>();
  c.loc_bins = j.at("loc_bins").get<std::size_t>();
  c.variant = j.at("variant").get<std::string>() == "vae" ? Variant::vae : Variant::standard;
  const auto& a = j.at("ablation");
  c.ablation = {a.at("no_bottleneck").get<bool>(), a.at("no_decoder").get<bool>(), a.at("no_median").get<bool>()};
  DmtaeModel model(c, 0);
  model.set_prototype_length(j.at("prototype_length").get<std::size_t>());
  nn::restore(model.parameters(), nn::load_checkpoint(with_suffix(stem, ".tplc")));
  return model;
}

}  // namespace tpl::dmtae
