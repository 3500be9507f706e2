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


#include "tpl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "tpl/nn.hpp"

namespace tpl::baselines {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const Matrix& a, const Matrix& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("DTW needs nonempty sequences");
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("DTW channel mismatch: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()));
  }
}

// Squared Euclidean frame costs, n x m.
Matrix frame_costs(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.cols(), m = b.cols();
  Matrix d(n, m);
  for (std::size_t c = 0; c < a.rows(); ++c) {
    const auto ra = a.row(c);
    const auto rb = b.row(c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double diff = ra[i] - rb[j];
        d(i, j) += diff * diff;
      }
    }
  }
  return d;
}

Matrix accumulate(const Matrix& d) {
  const std::size_t n = d.rows(), m = d.cols();
  Matrix acc(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double best = 0.0;
      if (i > 0 || j > 0) {
        best = kInf;
        if (i > 0 && j > 0) best = acc(i - 1, j - 1);
        if (i > 0) best = std::min(best, acc(i - 1, j));
        if (j > 0) best = std::min(best, acc(i, j - 1));
      }
      acc(i, j) = d(i, j) + best;
    }
  }
  return acc;
}

double softmin(double a, double b, double c, double gamma) {
  const double m = std::min({a, b, c});
  if (m == kInf) return kInf;
  const double s = std::exp(-(a - m) / gamma) + std::exp(-(b - m) / gamma) + std::exp(-(c - m) / gamma);
  return m - gamma * std::log(s);
}

std::size_t lower_middle(std::size_t first, std::size_t last) { return first + (last - first) / 2; }

double objective_of(const Matrix& bary, std::span<const Matrix> seqs, std::vector<Path>* paths) {
  double total = 0.0;
  if (paths) paths->clear();
  for (const auto& s : seqs) {
    auto r = dtw(bary, s);
    total += r.distance;
    if (paths) paths->push_back(std::move(r.path));
  }
  return total;
}

}  // namespace

DtwResult dtw(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  const Matrix acc = accumulate(frame_costs(a, b));
  DtwResult r;
  r.distance = acc(a.cols() - 1, b.cols() - 1);
  std::size_t i = a.cols() - 1, j = b.cols() - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = acc(i - 1, j - 1), up = acc(i - 1, j), left = acc(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

double dtw_distance(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  return accumulate(frame_costs(a, b))(a.cols() - 1, b.cols() - 1);
}

double soft_dtw(const Matrix& a, const Matrix& b, double gamma, Matrix* grad_a) {
  if (!(gamma > 0.0)) throw std::invalid_argument("soft-DTW gamma must be positive");
  check_pair(a, b);
  const std::size_t n = a.cols(), m = b.cols();
  const Matrix d = frame_costs(a, b);
  // r is (n+1) x (m+1) with a border row and column; r(0,0) = 0.
  Matrix r(n + 1, m + 1, kInf);
  r(0, 0) = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      r(i, j) = d(i - 1, j - 1) + softmin(r(i - 1, j - 1), r(i - 1, j), r(i, j - 1), gamma);
    }
  }
  const double value = r(n, m);
  if (!grad_a) return value;

  // e(i,j) = d value / d r(i,j), accumulated from the three successors.
  Matrix e(n + 1, m + 1);
  e(n, m) = 1.0;
  auto weight = [&](std::size_t si, std::size_t sj, std::size_t i, std::size_t j) {
    return std::exp((r(si, sj) - d(si - 1, sj - 1) - r(i, j)) / gamma);
  };
  for (std::size_t i = n; i >= 1; --i) {
    for (std::size_t j = m; j >= 1; --j) {
      if (i == n && j == m) continue;
      double g = 0.0;
      if (i < n) g += e(i + 1, j) * weight(i + 1, j, i, j);
      if (j < m) g += e(i, j + 1) * weight(i, j + 1, i, j);
      if (i < n && j < m) g += e(i + 1, j + 1) * weight(i + 1, j + 1, i, j);
      e(i, j) = g;
    }
  }
  *grad_a = Matrix(a.rows(), n);
  for (std::size_t c = 0; c < a.rows(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double g = 0.0;
      for (std::size_t j = 0; j < m; ++j) g += e(i + 1, j + 1) * 2.0 * (a(c, i) - b(c, j));
      (*grad_a)(c, i) = g;
    }
  }
  return value;
}

std::size_t medoid_index(std::span<const Matrix> seqs) {
  if (seqs.empty()) throw std::invalid_argument("medoid of an empty set");
  const std::size_t n = seqs.size();
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) dist(i, j) = dist(j, i) = dtw_distance(seqs[i], seqs[j]);
  }
  std::size_t best = 0;
  double best_total = kInf;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = dist.row(i);
    double total = 0.0;
    for (double v : row) total += v;
    if (total < best_total) {
      best_total = total;
      best = i;
    }
  }
  return best;
}

Matrix barycenter_init(std::span<const Matrix> seqs) {
  if (seqs.empty()) throw std::invalid_argument("barycenter of an empty set");
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) lengths.push_back(s.cols());
  return resample(seqs[medoid_index(seqs)], median_length(lengths));
}

Barycenter dba(std::span<const Matrix> seqs, const DbaConfig& config) {
  if (seqs.empty()) throw std::invalid_argument("dba: empty input");
  Barycenter b;
  b.sequence = barycenter_init(seqs);
  const std::size_t channels = b.sequence.rows(), len = b.sequence.cols();
  std::vector<Path> paths;
  for (std::size_t iter = 0;; ++iter) {
    const double obj = objective_of(b.sequence, seqs, &paths);
    b.objective.push_back(obj);
    if (iter > 0) {
      const double prev = b.objective[iter - 1];
      if (prev == 0.0 || std::abs(prev - obj) / prev < config.tol) break;
    }
    if (iter == config.max_iter) break;
    Matrix sum(channels, len);
    std::vector<double> count(len, 0.0);
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      for (const auto& [q, k] : paths[s]) {
        for (std::size_t c = 0; c < channels; ++c) sum(c, q) += seqs[s](c, k);
        count[q] += 1.0;
      }
    }
    for (std::size_t q = 0; q < len; ++q) {
      if (count[q] == 0.0) continue;
      for (std::size_t c = 0; c < channels; ++c) b.sequence(c, q) = sum(c, q) / count[q];
    }
  }
  return b;
}

Barycenter soft_dba(std::span<const Matrix> seqs, const SoftDbaConfig& config) {
  if (seqs.empty()) throw std::invalid_argument("soft_dba: empty input");
  if (!(config.gamma > 0.0)) throw std::invalid_argument("soft-DTW gamma must be positive");
  const Matrix init = barycenter_init(seqs);
  nn::ParamTensor avg("barycenter", {init.rows(), init.cols()});
  avg.value = init.data();
  nn::ParamTensor* params[] = {&avg};
  nn::AdamW opt({.learning_rate = config.learning_rate});
  Barycenter b;
  for (std::size_t step = 0; step <= config.steps; ++step) {
    const Matrix current(init.rows(), init.cols(), avg.value);
    double obj = 0.0;
    avg.zero_grad();
    for (const auto& s : seqs) {
      Matrix g;
      obj += soft_dtw(current, s, config.gamma, &g);
      for (std::size_t k = 0; k < g.size(); ++k) avg.grad[k] += g.data()[k];
    }
    if (!std::isfinite(obj)) throw std::runtime_error("soft_dba diverged at step " + std::to_string(step));
    b.objective.push_back(obj);
    if (step == config.steps) break;
    opt.step(params);
  }
  b.sequence = Matrix(init.rows(), init.cols(), avg.value);
  return b;
}

FrameAlignment path_alignment(const Path& path, std::size_t length, std::size_t prototype_length) {
  if (length == 0 || prototype_length == 0 || path.empty() || path.front() != std::pair<std::size_t, std::size_t>{0, 0} ||
      path.back() != std::pair<std::size_t, std::size_t>{length - 1, prototype_length - 1}) {
    throw std::invalid_argument("path does not span both sequences");
  }
  // Matches of each frame are contiguous along a monotone path.
  constexpr std::size_t kNone = FrameAlignment::none;
  std::vector<std::size_t> lo_v(length, kNone), hi_v(length, 0), lo_p(prototype_length, kNone), hi_p(prototype_length, 0);
  for (const auto& [k, q] : path) {
    lo_v[k] = std::min(lo_v[k], q);
    hi_v[k] = std::max(hi_v[k], q);
    lo_p[q] = std::min(lo_p[q], k);
    hi_p[q] = std::max(hi_p[q], k);
  }
  FrameAlignment a;
  a.to_prototype.resize(length);
  a.from_prototype.resize(prototype_length);
  for (std::size_t k = 0; k < length; ++k) a.to_prototype[k] = lower_middle(lo_v[k], hi_v[k]);
  for (std::size_t q = 0; q < prototype_length; ++q) a.from_prototype[q] = lower_middle(lo_p[q], hi_p[q]);
  return a;
}

FrameAlignment dtw_alignment(const Matrix& seq, const Matrix& prototype) {
  return path_alignment(dtw(seq, prototype).path, seq.cols(), prototype.cols());
}

FrameAlignment identity_alignment(std::size_t length, std::size_t prototype_length) {
  if (length == 0 || prototype_length == 0) throw std::invalid_argument("identity alignment of an empty timeline");
  FrameAlignment a;
  a.to_prototype.resize(length);
  a.from_prototype.resize(prototype_length);
  for (std::size_t k = 0; k < length; ++k) a.to_prototype[k] = std::min(k, prototype_length - 1);
  for (std::size_t q = 0; q < prototype_length; ++q) a.from_prototype[q] = q < length ? q : FrameAlignment::none;
  return a;
}

EuclideanBaseline euclidean_baseline(std::span<const EmbeddingSequence> seqs) {
  if (seqs.empty()) throw std::invalid_argument("euclidean_baseline: empty input");
  const auto padded = zero_pad(std::vector<EmbeddingSequence>(seqs.begin(), seqs.end()));
  const std::size_t channels = padded[0].channels(), len = padded[0].length();
  Matrix sum(channels, len), count(channels, len);
  for (const auto& p : padded) {
    for (std::size_t k = 0; k < sum.size(); ++k) {
      const double m = p.mask->data()[k];
      sum.data()[k] += m * p.data.data()[k];
      count.data()[k] += m;
    }
  }
  EuclideanBaseline e;
  e.prototype = Matrix(channels, len);
  for (std::size_t k = 0; k < sum.size(); ++k) {
    e.prototype.data()[k] = count.data()[k] > 0.0 ? sum.data()[k] / count.data()[k] : 0.0;
  }
  for (const auto& s : seqs) e.alignments.push_back(identity_alignment(s.length(), len));
  return e;
}

}  // namespace tpl::baselines
