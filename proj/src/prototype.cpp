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


#include "tpl/prototype.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tpl/fileio.hpp"
#include "tpl/nn.hpp"

namespace tpl::proto {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

int mode_smallest(const std::vector<int>& values) {
  std::map<int, std::size_t> counts;
  for (int v : values) ++counts[v];
  int best = counts.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

struct TestFrames {
  std::size_t channels;
  std::vector<double> x;
  std::vector<std::uint8_t> valid;

  explicit TestFrames(const EmbeddingSequence& seq) : channels(seq.channels()) {
    x.resize(seq.length() * channels);
    valid.resize(seq.length() * channels);
    for (std::size_t t = 0; t < seq.length(); ++t) {
      for (std::size_t c = 0; c < channels; ++c) {
        x[t * channels + c] = seq.data(c, t);
        valid[t * channels + c] = seq.valid(c, t) ? 1 : 0;
      }
    }
  }
  std::span<const double> frame(std::size_t t) const { return {x.data() + t * channels, channels}; }
  std::span<const std::uint8_t> mask(std::size_t t) const { return {valid.data() + t * channels, channels}; }
};

void check_test(const EmbeddingSequence& test, const FrameBank& bank) {
  if (test.channels() != bank.channels()) {
    throw std::invalid_argument("test video " + test.id + " has " + std::to_string(test.channels()) +
                                " channels, training frames have " + std::to_string(bank.channels()));
  }
}

}  // namespace

Prototype build_prototype(std::span<const EmbeddingSequence> seqs, std::span<const LabelTrack> labels,
                          const dmtae::AlignmentResult& alignment, std::string class_name) {
  const std::size_t n = seqs.size();
  if (n == 0) throw std::invalid_argument("build_prototype: no sequences");
  if (labels.size() != n || alignment.thetas.size() != n) {
    throw std::invalid_argument("build_prototype: sequences, labels and alignment differ in count");
  }
  const std::size_t lp = alignment.prototype.cols();
  const std::size_t channels = seqs[0].channels();
  Prototype p;
  p.latent = alignment.prototype;
  p.class_name = std::move(class_name);
  p.n_sources = n;

  Matrix sum(channels, lp), weight(channels, lp);
  std::vector<LabelTrack> warped_labels;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = seqs[i];
    if (s.channels() != channels) throw std::invalid_argument("build_prototype: channel count differs in " + s.id);
    if (labels[i].length() != s.length()) throw std::invalid_argument("build_prototype: label length differs for " + s.id);
    Matrix masked = s.data;
    Matrix mask(channels, s.length(), 1.0);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        if (s.valid(c, t)) continue;
        masked(c, t) = 0.0;
        mask(c, t) = 0.0;
      }
    }
    const WarpSampler sampler(alignment.thetas[i], s.length(), lp);
    const Matrix wx = sampler.apply(masked), wm = sampler.apply(mask);
    for (std::size_t k = 0; k < sum.size(); ++k) {
      sum.data()[k] += wx.data()[k];
      weight.data()[k] += wm.data()[k];
    }
    warped_labels.push_back(apply_warp_labels(labels[i], alignment.thetas[i], lp));
  }
  p.embedding = Matrix(channels, lp);
  for (std::size_t k = 0; k < sum.size(); ++k) {
    p.embedding.data()[k] = weight.data()[k] > 0.0 ? sum.data()[k] / weight.data()[k] : 0.0;
  }
  p.labels.labels.resize(lp);
  std::vector<int> column(n);
  for (std::size_t t = 0; t < lp; ++t) {
    for (std::size_t i = 0; i < n; ++i) column[i] = warped_labels[i].labels[t];
    p.labels.labels[t] = mode_smallest(column);
  }
  return p;
}

LabelTrack propagate_labels(const Prototype& proto, const cpab::WarpParams& theta, std::size_t target_length) {
  return apply_warp_labels(proto.labels, cpab::inverse(theta), target_length);
}

std::vector<std::size_t> prototype_index_map(const cpab::WarpParams& theta, std::size_t length,
                                             std::size_t prototype_length) {
  const WarpSampler sampler(cpab::inverse(theta), prototype_length, length);
  std::vector<std::size_t> map(length);
  const auto last = static_cast<double>(prototype_length - 1);
  for (std::size_t k = 0; k < length; ++k) {
    map[k] = static_cast<std::size_t>(std::lround(std::clamp(sampler.positions()[k], 0.0, last)));
  }
  return map;
}

// ---------------------------------------------------------------------------
// SyncMap

SyncMap::SyncMap(std::vector<std::string> ids, std::vector<cpab::WarpParams> thetas,
                 std::span<const std::size_t> lengths, std::size_t prototype_length)
    : prototype_length_(prototype_length), ids_(std::move(ids)), thetas_(std::move(thetas)) {
  if (ids_.size() != thetas_.size() || ids_.size() != lengths.size()) {
    throw std::invalid_argument("SyncMap: ids, thetas and lengths differ in count");
  }
  if (prototype_length_ < 2) throw std::invalid_argument("SyncMap: prototype length must be at least 2");
  buckets_.resize(prototype_length_);
  for (std::size_t v = 0; v < ids_.size(); ++v) {
    maps_.push_back(prototype_index_map(thetas_[v], lengths[v], prototype_length_));
    for (std::size_t k = 0; k < lengths[v]; ++k) buckets_[maps_[v][k]].push_back({v, k});
  }
}

std::string SyncMap::to_csv() const {
  std::ostringstream os;
  os << "video_id,frame,prototype_index\n";
  for (std::size_t v = 0; v < ids_.size(); ++v) {
    for (std::size_t k = 0; k < maps_[v].size(); ++k) os << ids_[v] << ',' << k << ',' << maps_[v][k] << '\n';
  }
  return os.str();
}

SyncMap synchronize(std::span<const EmbeddingSequence> videos, const dmtae::DmtaeModel& model) {
  std::vector<std::string> ids;
  std::vector<std::size_t> lengths;
  for (const auto& v : videos) {
    ids.push_back(v.id);
    lengths.push_back(v.length());
  }
  return SyncMap(std::move(ids), dmtae::predict_thetas(model, videos), lengths, model.prototype_length());
}

// ---------------------------------------------------------------------------
// Retrieval

FrameBank::FrameBank(std::span<const EmbeddingSequence> videos, std::span<const LabelTrack> labels) {
  if (videos.empty()) throw std::invalid_argument("empty train set");
  if (labels.size() != videos.size()) throw std::invalid_argument("FrameBank: one label track per video required");
  channels_ = videos[0].channels();
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto& s = videos[v];
    if (s.channels() != channels_) throw std::invalid_argument("FrameBank: channel count differs in " + s.id);
    if (labels[v].length() != s.length()) throw std::invalid_argument("FrameBank: label length differs for " + s.id);
    offsets_.push_back(labels_.size());
    lengths_.push_back(s.length());
    for (std::size_t t = 0; t < s.length(); ++t) {
      for (std::size_t c = 0; c < channels_; ++c) {
        features_.push_back(s.data(c, t));
        valid_.push_back(s.valid(c, t) ? 1 : 0);
      }
      labels_.push_back(labels[v].labels[t]);
    }
  }
}

double FrameBank::distance(std::size_t i, std::span<const double> x, std::span<const std::uint8_t> x_valid) const {
  const double* f = features_.data() + i * channels_;
  const std::uint8_t* m = valid_.data() + i * channels_;
  double d = 0.0;
  for (std::size_t c = 0; c < channels_; ++c) {
    if (!m[c] || !x_valid[c]) continue;
    const double diff = f[c] - x[c];
    d += diff * diff;
  }
  return d;
}

RetrievalResult retrieve_full_knn(const EmbeddingSequence& test, const FrameBank& bank) {
  check_test(test, bank);
  const auto start = Clock::now();
  const TestFrames frames(test);
  RetrievalResult r;
  r.labels.labels.resize(test.length());
  for (std::size_t t = 0; t < test.length(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < bank.size(); ++i) {
      const double d = bank.distance(i, frames.frame(t), frames.mask(t));
      if (d < best) {
        best = d;
        best_i = i;
      }
    }
    r.comparisons += bank.size();
    r.labels.labels[t] = bank.label(best_i);
  }
  r.seconds = seconds_since(start);
  return r;
}

RetrievalResult retrieve_synced(const EmbeddingSequence& test, const cpab::WarpParams& test_theta,
                                const SyncMap& sync, const FrameBank& bank, std::size_t window) {
  check_test(test, bank);
  if (sync.size() != bank.video_count()) throw std::invalid_argument("SyncMap and frame bank cover different videos");
  const auto start = Clock::now();
  const TestFrames frames(test);
  const std::size_t lp = sync.prototype_length();
  const auto map = prototype_index_map(test_theta, test.length(), lp);
  RetrievalResult r;
  r.labels.labels.resize(test.length());
  for (std::size_t t = 0; t < test.length(); ++t) {
    const std::size_t lo = map[t] > window ? map[t] - window : 0;
    const std::size_t hi = std::min(lp - 1, map[t] + std::min(window, lp));
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = std::numeric_limits<std::size_t>::max();
    for (std::size_t q = lo; q <= hi; ++q) {
      for (const FrameRef& ref : sync.frames_at(q)) {
        const std::size_t i = bank.flat_index(ref.video, ref.frame);
        const double d = bank.distance(i, frames.frame(t), frames.mask(t));
        ++r.comparisons;
        if (d < best || (d == best && i < best_i)) {
          best = d;
          best_i = i;
        }
      }
    }
    if (best_i == std::numeric_limits<std::size_t>::max()) {
      for (std::size_t i = 0; i < bank.size(); ++i) {
        const double d = bank.distance(i, frames.frame(t), frames.mask(t));
        if (d < best) {
          best = d;
          best_i = i;
        }
      }
      r.comparisons += bank.size();
    }
    r.labels.labels[t] = bank.label(best_i);
  }
  r.seconds = seconds_since(start);
  return r;
}

RetrievalResult retrieve_synced(const EmbeddingSequence& test, const dmtae::DmtaeModel& model, const SyncMap& sync,
                                const FrameBank& bank, std::size_t window) {
  const auto start = Clock::now();
  const auto theta = dmtae::predict_thetas(model, std::span(&test, 1)).front();
  auto r = retrieve_synced(test, theta, sync, bank, window);
  r.seconds = seconds_since(start);
  return r;
}

// ---------------------------------------------------------------------------
// Persistence

void save_prototype(const Prototype& proto, const std::filesystem::path& stem) {
  const std::vector<nn::NamedTensor> tensors{
      {"prototype.latent", {proto.latent.rows(), proto.latent.cols()}, proto.latent.data()},
      {"prototype.embedding", {proto.embedding.rows(), proto.embedding.cols()}, proto.embedding.data()}};
  nn::save_checkpoint(with_suffix(stem, ".tplc"), tensors);
  const nlohmann::json j{{"format", "tpl-prototype"},
                         {"class", proto.class_name},
                         {"n_sources", proto.n_sources},
                         {"length", proto.length()},
                         {"labels", proto.labels.labels}};
  io::write_text_atomic(with_suffix(stem, ".json"), j.dump(2) + "\n");
}

Prototype load_prototype(const std::filesystem::path& stem) {
  const auto j = nlohmann::json::parse(io::read_text(with_suffix(stem, ".json")));
  if (j.value("format", std::string()) != "tpl-prototype") {
    throw std::runtime_error("not a prototype description: " + stem.string());
  }
  Prototype p;
  p.class_name = j.at("class").get<std::string>();
  p.n_sources = j.at("n_sources").get<std::size_t>();
  p.labels.labels = j.at("labels").get<std::vector<int>>();
  if (p.labels.length() != j.at("length").get<std::size_t>()) throw std::runtime_error("prototype label count mismatch");
  for (auto& t : nn::load_checkpoint(with_suffix(stem, ".tplc"))) {
    if (t.shape.size() != 2 || t.shape[1] != p.length()) throw std::runtime_error("prototype tensor " + t.name + " has the wrong shape");
    Matrix m(t.shape[0], t.shape[1], std::move(t.values));
    if (t.name == "prototype.latent") {
      p.latent = std::move(m);
    } else if (t.name == "prototype.embedding") {
      p.embedding = std::move(m);
    } else {
      throw std::runtime_error("unexpected prototype tensor " + t.name);
    }
  }
  if (p.latent.empty() || p.embedding.empty()) throw std::runtime_error("prototype tensors missing in " + stem.string());
  return p;
}

}  // namespace tpl::proto
