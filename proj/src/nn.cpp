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

#include "tpl/nn.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tpl/fileio.hpp"

namespace tpl::nn {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

ParamTensor::ParamTensor(std::string n, std::vector<std::size_t> s)
    : name(std::move(n)), shape(std::move(s)), value(product(shape), 0.0), grad(value.size(), 0.0) {}

void he_uniform(ParamTensor& p, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : p.value) v = dist(rng);
}

// ---------------------------------------------------------------------------
// Conv1d

namespace {

std::size_t edge_index(std::size_t t, std::ptrdiff_t shift, std::size_t len) {
  const auto s = static_cast<std::ptrdiff_t>(t) + shift;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(s, 0, static_cast<std::ptrdiff_t>(len) - 1));
}

}  // namespace

Conv1d::Conv1d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               Padding padding)
    : weight(name + ".weight", {out_channels, in_channels, kernel}),
      bias(name + ".bias", {out_channels}),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      padding_(padding) {
  if (kernel % 2 == 0) throw std::invalid_argument("conv1d kernel must be odd");
}

void Conv1d::init(std::mt19937_64& rng) {
  he_uniform(weight, in_ * k_, rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Matrix Conv1d::forward(const Matrix& x) const {
  if (x.rows() != in_) {
    throw std::invalid_argument(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                std::to_string(x.rows()));
  }
  const std::size_t len = x.cols();
  const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
  Matrix y(out_, len);
  for (std::size_t o = 0; o < out_; ++o) {
    auto yo = y.row(o);
    std::fill(yo.begin(), yo.end(), bias.value[o]);
    for (std::size_t i = 0; i < in_; ++i) {
      const auto xi = x.row(i);
      const double* w = &weight.value[(o * in_ + i) * k_];
      for (std::size_t j = 0; j < k_; ++j) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
        const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const std::size_t t1 = shift > 0 ? len - std::min(len, static_cast<std::size_t>(shift)) : len;
        const double wj = w[j];
        for (std::size_t t = t0; t < t1; ++t) {
          yo[t] += wj * xi[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) + shift)];
        }
        if (padding_ == Padding::replicate) {
          const std::size_t lo = std::min(t0, len);
          for (std::size_t t = 0; t < lo; ++t) yo[t] += wj * xi[edge_index(t, shift, len)];
          for (std::size_t t = std::max(t1, lo); t < len; ++t) yo[t] += wj * xi[edge_index(t, shift, len)];
        }
      }
    }
  }
  return y;
}

Matrix Conv1d::backward(const Matrix& x, const Matrix& grad_y) {
  const std::size_t len = x.cols();
  if (grad_y.rows() != out_ || grad_y.cols() != len) throw std::invalid_argument(weight.name + ": grad shape mismatch");
  const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
  Matrix gx(in_, len);
  for (std::size_t o = 0; o < out_; ++o) {
    const auto go = grad_y.row(o);
    bias.grad[o] += std::accumulate(go.begin(), go.end(), 0.0);
    for (std::size_t i = 0; i < in_; ++i) {
      const auto xi = x.row(i);
      auto gxi = gx.row(i);
      const std::size_t base = (o * in_ + i) * k_;
      for (std::size_t j = 0; j < k_; ++j) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
        const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const std::size_t t1 = shift > 0 ? len - std::min(len, static_cast<std::size_t>(shift)) : len;
        const double wj = weight.value[base + j];
        double gw = 0.0;
        for (std::size_t t = t0; t < t1; ++t) {
          const auto s = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) + shift);
          gw += go[t] * xi[s];
          gxi[s] += go[t] * wj;
        }
        if (padding_ == Padding::replicate) {
          const auto edge = [&](std::size_t t) {
            const std::size_t s = edge_index(t, shift, len);
            gw += go[t] * xi[s];
            gxi[s] += go[t] * wj;
          };
          const std::size_t lo = std::min(t0, len);
          for (std::size_t t = 0; t < lo; ++t) edge(t);
          for (std::size_t t = std::max(t1, lo); t < len; ++t) edge(t);
        }
        weight.grad[base + j] += gw;
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {}

void Dense::init(std::mt19937_64& rng) {
  he_uniform(weight, in_, rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

std::vector<double> Dense::forward(std::span<const double> x) const {
  if (x.size() != in_) throw std::invalid_argument(weight.name + ": input size mismatch");
  std::vector<double> y(bias.value);
  for (std::size_t o = 0; o < out_; ++o) {
    const double* w = &weight.value[o * in_];
    for (std::size_t i = 0; i < in_; ++i) y[o] += w[i] * x[i];
  }
  return y;
}

std::vector<double> Dense::backward(std::span<const double> x, std::span<const double> grad_y) {
  if (x.size() != in_ || grad_y.size() != out_) throw std::invalid_argument(weight.name + ": grad shape mismatch");
  std::vector<double> gx(in_, 0.0);
  for (std::size_t o = 0; o < out_; ++o) {
    bias.grad[o] += grad_y[o];
    for (std::size_t i = 0; i < in_; ++i) {
      weight.grad[o * in_ + i] += grad_y[o] * x[i];
      gx[i] += grad_y[o] * weight.value[o * in_ + i];
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Activations and pooling

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& grad_y) {
  Matrix g = grad_y;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (x.data()[i] <= 0.0) g.data()[i] = 0.0;
  }
  return g;
}

Matrix tanh(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data()) v = std::tanh(v);
  return y;
}

Matrix tanh_backward(const Matrix& y, const Matrix& grad_y) {
  Matrix g = grad_y;
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
  return g;
}

std::vector<double> global_avg_pool(const Matrix& x) {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    out[r] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(x.cols());
  }
  return out;
}

Matrix global_avg_pool_backward(std::span<const double> grad_y, std::size_t length) {
  Matrix g(grad_y.size(), length);
  for (std::size_t r = 0; r < grad_y.size(); ++r) {
    auto row = g.row(r);
    std::fill(row.begin(), row.end(), grad_y[r] / static_cast<double>(length));
  }
  return g;
}

namespace {

std::size_t bin_edge(std::size_t b, std::size_t length, std::size_t bins) { return b * length / bins; }

}  // namespace

Matrix binned_avg_pool(const Matrix& x, std::size_t bins) {
  if (bins == 0 || bins > x.cols()) throw std::invalid_argument("bin count must be in [1, length]");
  Matrix out(x.rows(), bins);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t b = 0; b < bins; ++b) {
      const std::size_t lo = bin_edge(b, x.cols(), bins), hi = bin_edge(b + 1, x.cols(), bins);
      out(r, b) = std::accumulate(row.begin() + static_cast<std::ptrdiff_t>(lo), row.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
                  static_cast<double>(hi - lo);
    }
  }
  return out;
}

Matrix binned_avg_pool_backward(const Matrix& grad_y, std::size_t length) {
  const std::size_t bins = grad_y.cols();
  if (bins == 0 || bins > length) throw std::invalid_argument("bin count must be in [1, length]");
  Matrix g(grad_y.rows(), length);
  for (std::size_t r = 0; r < grad_y.rows(); ++r) {
    for (std::size_t b = 0; b < bins; ++b) {
      const std::size_t lo = bin_edge(b, length, bins), hi = bin_edge(b + 1, length, bins);
      const double v = grad_y(r, b) / static_cast<double>(hi - lo);
      for (std::size_t t = lo; t < hi; ++t) g(r, t) = v;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// AdamW

void AdamW::step(std::span<ParamTensor* const> params) {
  if (m_.empty()) {
    for (const ParamTensor* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adamw parameter list changed between steps");
  for (const ParamTensor* p : params) {
    if (p->grad.size() != p->value.size()) throw std::invalid_argument(p->name + ": gradient shape mismatch");
    for (double g : p->grad) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in parameter " + p->name);
    }
  }
  ++step_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParamTensor& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.epsilon);
      p.value[i] -= c.learning_rate * (update + c.weight_decay * p.value[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
  io::ByteWriter w;
  w.put_bytes("TPLC");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (product(t.shape) != t.values.size()) throw std::invalid_argument(t.name + ": shape does not match values");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.values) w.put<double>(v);
  }
  return w.take();
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "TPLC") throw io::FormatError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw io::FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t n = 0; n < count; ++n) {
    NamedTensor t;
    const auto name_len = r.get<std::uint32_t>("name length");
    t.name = r.get_string(name_len, "tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::uint32_t>("shape"));
    const std::size_t numel = product(t.shape);
    r.require(numel * sizeof(double), "tensor values");
    t.values.resize(numel);
    for (auto& v : t.values) v = r.get<double>("tensor values");
    out.push_back(std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  io::write_file_atomic(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

std::vector<NamedTensor> snapshot(std::span<ParamTensor* const> params) {
  std::vector<NamedTensor> out;
  for (const ParamTensor* p : params) out.push_back({p->name, p->shape, p->value});
  return out;
}

void restore(std::span<ParamTensor* const> params, std::span<const NamedTensor> tensors) {
  for (ParamTensor* p : params) {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == p->name; });
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + p->name);
    if (it->shape != p->shape) throw std::runtime_error("checkpoint tensor " + p->name + " has the wrong shape");
    p->value = it->values;
  }
}

}  // namespace tpl::nn
