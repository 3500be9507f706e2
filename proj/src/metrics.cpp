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


#include "tpl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tpl/nn.hpp"

namespace tpl::metrics {

namespace {

double agreement(const LabelTrack& a, const LabelTrack& b) {
  std::size_t same = 0;
  for (std::size_t t = 0; t < a.length(); ++t) same += a.labels[t] == b.labels[t];
  return static_cast<double>(same) / static_cast<double>(a.length());
}

void require_alignment(const LabelTrack& labels, const FrameAlignment& a, std::size_t i) {
  if (labels.length() == 0) throw std::invalid_argument("empty label track for video " + std::to_string(i));
  if (a.to_prototype.size() != labels.length()) {
    throw std::invalid_argument("video " + std::to_string(i) + ": label track has " + std::to_string(labels.length()) +
                                " frames but the alignment covers " + std::to_string(a.to_prototype.size()));
  }
}

double frame_distance(const EmbeddingSequence& u, std::size_t i, const EmbeddingSequence& v, std::size_t j) {
  double d = 0.0;
  for (std::size_t c = 0; c < u.channels(); ++c) {
    if (!u.valid(c, i) || !v.valid(c, j)) continue;
    const double diff = u.data(c, i) - v.data(c, j);
    d += diff * diff;
  }
  return d;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::string optional_csv(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(10);
  os << *v;
  return os.str();
}

}  // namespace

std::vector<int> prototype_labels(std::span<const LabelTrack> labels, std::span<const FrameAlignment> alignments) {
  if (labels.empty()) throw std::invalid_argument("no videos");
  if (labels.size() != alignments.size()) throw std::invalid_argument("one alignment per video required");
  const std::size_t lp = alignments[0].from_prototype.size();
  std::vector<std::vector<int>> carried;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require_alignment(labels[i], alignments[i], i);
    if (alignments[i].from_prototype.size() != lp) throw std::invalid_argument("alignments disagree on prototype length");
    carried.push_back(labels_to_prototype(labels[i], alignments[i]));
  }
  std::vector<int> out(lp, -1);
  std::map<int, std::size_t> counts;
  for (std::size_t q = 0; q < lp; ++q) {
    counts.clear();
    for (const auto& c : carried) {
      if (c[q] >= 0) ++counts[c[q]];
    }
    std::size_t best = 0;
    for (const auto& [label, n] : counts) {
      if (n > best) {
        best = n;
        out[q] = label;
      }
    }
  }
  return out;
}

double cbc(std::span<const LabelTrack> labels, std::span<const FrameAlignment> alignments) {
  const auto proto = prototype_labels(labels, alignments);
  return plp(proto, labels, alignments);
}

double cbc(std::span<const LabelTrack> labels, std::span<const cpab::WarpParams> thetas, std::size_t prototype_length) {
  if (labels.size() != thetas.size()) throw std::invalid_argument("one theta per video required");
  std::vector<FrameAlignment> a;
  for (std::size_t i = 0; i < labels.size(); ++i) a.push_back(frame_alignment(thetas[i], labels[i].length(), prototype_length));
  return cbc(labels, a);
}

double plp(std::span<const int> prototype_labels, std::span<const LabelTrack> test_labels,
           std::span<const FrameAlignment> test_alignments) {
  if (test_labels.empty()) throw std::invalid_argument("no test videos");
  if (test_labels.size() != test_alignments.size()) throw std::invalid_argument("one alignment per test video required");
  double sum = 0.0;
  for (std::size_t i = 0; i < test_labels.size(); ++i) {
    require_alignment(test_labels[i], test_alignments[i], i);
    sum += agreement(labels_from_prototype(prototype_labels, test_alignments[i]), test_labels[i]);
  }
  return sum / static_cast<double>(test_labels.size());
}

double plp(const proto::Prototype& prototype, std::span<const EmbeddingSequence> test_videos,
           std::span<const LabelTrack> test_labels, const dmtae::DmtaeModel& model, std::string_view test_class) {
  if (!test_class.empty() && !prototype.class_name.empty() && test_class != prototype.class_name) {
    throw std::invalid_argument("prototype class " + prototype.class_name + " does not match test class " +
                                std::string(test_class));
  }
  if (test_videos.size() != test_labels.size()) throw std::invalid_argument("one label track per test video required");
  const auto thetas = dmtae::predict_thetas(model, test_videos);
  std::vector<FrameAlignment> a;
  for (std::size_t i = 0; i < test_videos.size(); ++i) {
    a.push_back(frame_alignment(thetas[i], test_videos[i].length(), prototype.length()));
  }
  return plp(prototype.labels.labels, test_labels, a);
}

// ---------------------------------------------------------------------------
// Phase classification

double phase_classification(std::span<const EmbeddingSequence> train, std::span<const LabelTrack> train_labels,
                            std::span<const EmbeddingSequence> test, std::span<const LabelTrack> test_labels,
                            const ClassifierConfig& config) {
  if (train.empty() || test.empty()) throw std::invalid_argument("phase classification needs train and test videos");
  if (train.size() != train_labels.size() || test.size() != test_labels.size()) {
    throw std::invalid_argument("one label track per video required");
  }
  const std::size_t channels = train[0].channels();
  auto check = [&](const EmbeddingSequence& s, const LabelTrack& l) {
    if (s.channels() != channels) throw std::invalid_argument("channel count differs in " + s.id);
    if (s.length() != l.length()) throw std::invalid_argument("label length differs for " + s.id);
  };
  std::vector<int> classes;
  for (std::size_t i = 0; i < train.size(); ++i) {
    check(train[i], train_labels[i]);
    classes.insert(classes.end(), train_labels[i].labels.begin(), train_labels[i].labels.end());
  }
  for (std::size_t i = 0; i < test.size(); ++i) check(test[i], test_labels[i]);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw std::invalid_argument("train split has a single phase class");
  const std::size_t k = classes.size();

  std::vector<double> mean(channels, 0.0), scale(channels, 1.0), count(channels, 0.0);
  for (const auto& s : train) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        if (!s.valid(c, t)) continue;
        mean[c] += s.data(c, t);
        count[c] += 1.0;
      }
    }
  }
  for (std::size_t c = 0; c < channels; ++c) mean[c] = count[c] > 0.0 ? mean[c] / count[c] : 0.0;
  std::vector<double> var(channels, 0.0);
  for (const auto& s : train) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        if (s.valid(c, t)) var[c] += (s.data(c, t) - mean[c]) * (s.data(c, t) - mean[c]);
      }
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double sd = count[c] > 0.0 ? std::sqrt(var[c] / count[c]) : 0.0;
    scale[c] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  auto features = [&](std::span<const EmbeddingSequence> seqs) {
    std::vector<double> x;
    for (const auto& s : seqs) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        for (std::size_t c = 0; c < channels; ++c) x.push_back(s.valid(c, t) ? (s.data(c, t) - mean[c]) * scale[c] : 0.0);
      }
    }
    return x;
  };
  const auto x_train = features(train), x_test = features(test);
  std::vector<std::size_t> y_train;
  for (const auto& l : train_labels) {
    for (int v : l.labels) y_train.push_back(static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), v) - classes.begin()));
  }
  const std::size_t n = y_train.size();

  nn::ParamTensor w("classifier.weight", {k, channels}), b("classifier.bias", {k});
  nn::ParamTensor* params[] = {&w, &b};
  nn::AdamW opt({.learning_rate = config.learning_rate, .weight_decay = config.weight_decay});
  std::vector<double> logits(k);
  auto forward = [&](const double* x) {
    for (std::size_t j = 0; j < k; ++j) {
      double z = b.value[j];
      for (std::size_t c = 0; c < channels; ++c) z += w.value[j * channels + c] * x[c];
      logits[j] = z;
    }
  };
  for (std::size_t step = 0; step < config.steps; ++step) {
    w.zero_grad();
    b.zero_grad();
    for (std::size_t f = 0; f < n; ++f) {
      const double* x = x_train.data() + f * channels;
      forward(x);
      const double m = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double& l : logits) z += (l = std::exp(l - m));
      for (std::size_t j = 0; j < k; ++j) {
        const double g = (logits[j] / z - (j == y_train[f] ? 1.0 : 0.0)) / static_cast<double>(n);
        b.grad[j] += g;
        for (std::size_t c = 0; c < channels; ++c) w.grad[j * channels + c] += g * x[c];
      }
    }
    opt.step(params);
  }

  std::size_t correct = 0, total = 0;
  std::size_t f = 0;
  for (const auto& l : test_labels) {
    for (int v : l.labels) {
      forward(x_test.data() + f * channels);
      const auto pred = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      correct += classes[pred] == v;
      ++total;
      ++f;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::pair<EmbeddingSequence, LabelTrack> aligned_frames(const EmbeddingSequence& video, const LabelTrack& labels,
                                                        const FrameAlignment& alignment) {
  if (labels.length() != video.length() || alignment.to_prototype.size() != video.length()) {
    throw std::invalid_argument("aligned_frames: video, labels and alignment differ in length");
  }
  std::vector<std::size_t> frames;
  for (std::size_t k : alignment.from_prototype) {
    if (k != FrameAlignment::none) frames.push_back(k);
  }
  EmbeddingSequence out{video.id, Matrix(video.channels(), frames.size()), {}};
  if (video.mask) out.mask = Matrix(video.channels(), frames.size());
  LabelTrack l;
  for (std::size_t q = 0; q < frames.size(); ++q) {
    for (std::size_t c = 0; c < video.channels(); ++c) {
      out.data(c, q) = video.data(c, frames[q]);
      if (video.mask) (*out.mask)(c, q) = (*video.mask)(c, frames[q]);
    }
    l.labels.push_back(labels.labels[frames[q]]);
  }
  return {std::move(out), std::move(l)};
}

// ---------------------------------------------------------------------------
// Kendall's tau

double kendall_tau_directed(const EmbeddingSequence& u, const EmbeddingSequence& v) {
  if (u.length() < 2 || v.length() < 2) throw std::invalid_argument("kendall_tau needs videos with at least 2 frames");
  if (u.channels() != v.channels()) throw std::invalid_argument("kendall_tau: channel count mismatch");
  const std::size_t n = u.length();
  std::vector<std::size_t> match(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v.length(); ++j) {
      const double d = frame_distance(u, i, v, j);
      if (d < best) {
        best = d;
        match[i] = j;
      }
    }
  }
  long long score = 0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (match[a] < match[b]) ++score;
      if (match[a] > match[b]) --score;
    }
  }
  return static_cast<double>(score) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double kendall_tau(std::span<const EmbeddingSequence> videos) {
  if (videos.size() < 2) throw std::invalid_argument("kendall_tau needs at least two videos");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    for (std::size_t j = i + 1; j < videos.size(); ++j) {
      sum += 0.5 * (kendall_tau_directed(videos[i], videos[j]) + kendall_tau_directed(videos[j], videos[i]));
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Reports

MetricReport aggregate(std::map<std::string, ClassMetrics> per_class, double runtime_seconds) {
  MetricReport r;
  r.runtime_seconds = runtime_seconds;
  auto combine = [&](std::optional<double> ClassMetrics::*field) -> std::optional<double> {
    double sum = 0.0, weight = 0.0;
    for (const auto& [name, m] : per_class) {
      if (!(m.*field)) continue;
      sum += *(m.*field) * static_cast<double>(m.frames);
      weight += static_cast<double>(m.frames);
    }
    if (weight == 0.0) return std::nullopt;
    return sum / weight;
  };
  r.cbc = combine(&ClassMetrics::cbc);
  r.plp = combine(&ClassMetrics::plp);
  r.phase_accuracy = combine(&ClassMetrics::phase_accuracy);
  r.kendall_tau = combine(&ClassMetrics::kendall_tau);
  r.per_class = std::move(per_class);
  return r;
}

std::string MetricReport::to_json() const {
  nlohmann::json j{{"cbc", optional_json(cbc)},
                   {"plp", optional_json(plp)},
                   {"phase_accuracy", optional_json(phase_accuracy)},
                   {"kendall_tau", optional_json(kendall_tau)},
                   {"runtime_seconds", runtime_seconds}};
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [name, m] : per_class) {
    classes[name] = {{"cbc", optional_json(m.cbc)},
                     {"plp", optional_json(m.plp)},
                     {"phase_accuracy", optional_json(m.phase_accuracy)},
                     {"kendall_tau", optional_json(m.kendall_tau)},
                     {"frames", m.frames}};
  }
  j["per_class"] = classes;
  return j.dump(2) + "\n";
}

std::string MetricReport::csv_header() { return "method,class,seed,cbc,plp,phase_accuracy,kendall_tau,frames\n"; }

std::string MetricReport::csv_rows(std::string_view method, std::uint64_t seed) const {
  std::ostringstream os;
  std::size_t frames = 0;
  for (const auto& [name, m] : per_class) {
    os << method << ',' << name << ',' << seed << ',' << optional_csv(m.cbc) << ',' << optional_csv(m.plp) << ','
       << optional_csv(m.phase_accuracy) << ',' << optional_csv(m.kendall_tau) << ',' << m.frames << '\n';
    frames += m.frames;
  }
  os << method << ",all," << seed << ',' << optional_csv(cbc) << ',' << optional_csv(plp) << ','
     << optional_csv(phase_accuracy) << ',' << optional_csv(kendall_tau) << ',' << frames << '\n';
  return os.str();
}

}  // namespace tpl::metrics
