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


#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "tpl/baselines.hpp"

using namespace tpl;
using namespace tpl::baselines;
using tpl::testing::finite_difference;
using tpl::testing::random_matrix;
using tpl::testing::relative_error;

namespace {

double frame_cost(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.rows(); ++c) s += (a(c, i) - b(c, j)) * (a(c, i) - b(c, j));
  return s;
}

// Minimum over every monotone path, enumerated recursively.
double exhaustive_dtw(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.cols(), m = b.cols();
  std::function<double(std::size_t, std::size_t)> walk = [&](std::size_t i, std::size_t j) {
    const double here = frame_cost(a, i, b, j);
    if (i == n - 1 && j == m - 1) return here;
    double best = std::numeric_limits<double>::infinity();
    if (i + 1 < n && j + 1 < m) best = std::min(best, walk(i + 1, j + 1));
    if (i + 1 < n) best = std::min(best, walk(i + 1, j));
    if (j + 1 < m) best = std::min(best, walk(i, j + 1));
    return here + best;
  };
  return walk(0, 0);
}

Matrix row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Matrix(1, n, std::move(v));
}

}  // namespace

TEST_CASE("dtw matches exhaustive path enumeration") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(1, 4), ch(1, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = ch(rng);
    const Matrix a = random_matrix(c, len(rng), rng), b = random_matrix(c, len(rng), rng);
    const auto r = dtw(a, b);
    CHECK(r.distance == doctest::Approx(exhaustive_dtw(a, b)).epsilon(1e-12));
    REQUIRE(!r.path.empty());
    CHECK(r.path.front() == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(r.path.back() == std::pair<std::size_t, std::size_t>{a.cols() - 1, b.cols() - 1});
    double along = frame_cost(a, 0, b, 0);
    for (std::size_t k = 1; k < r.path.size(); ++k) {
      const auto di = r.path[k].first - r.path[k - 1].first, dj = r.path[k].second - r.path[k - 1].second;
      CHECK(((di == 1 && dj == 1) || (di == 1 && dj == 0) || (di == 0 && dj == 1)));
      along += frame_cost(a, r.path[k].first, b, r.path[k].second);
    }
    CHECK(along == doctest::Approx(r.distance).epsilon(1e-12));
    CHECK(dtw_distance(b, a) == doctest::Approx(r.distance).epsilon(1e-12));
  }
}

TEST_CASE("dtw examples") {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(2, 9, rng);
  const auto self = dtw(x, x);
  CHECK(self.distance == 0.0);
  REQUIRE(self.path.size() == 9);
  for (std::size_t k = 0; k < 9; ++k) CHECK(self.path[k] == std::pair<std::size_t, std::size_t>{k, k});

  CHECK(dtw(row({0, 0}), row({1, 1})).distance == 2.0);
  // All costs tie: the diagonal is taken first when walking back from the end.
  const Path expected{{0, 0}, {1, 0}, {2, 1}};
  CHECK(dtw(row({0, 0, 0}), row({0, 0})).path == expected);
  CHECK_THROWS_AS(dtw(Matrix(2, 3), Matrix(1, 3)), std::invalid_argument);
  CHECK_THROWS_AS(dtw(Matrix(), Matrix(1, 3)), std::invalid_argument);
}

TEST_CASE("soft-dtw") {
  std::mt19937_64 rng(3);
  SUBCASE("bounded by dtw and converging to it") {
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix a = random_matrix(2, 10, rng), b = random_matrix(2, 10, rng);
      const double hard = dtw_distance(a, b);
      CHECK(std::abs(soft_dtw(a, b, 1e-4) - hard) < 1e-2);
      for (double g : {0.01, 0.1, 1.0}) CHECK(soft_dtw(a, b, g) <= hard + 1e-12);
    }
  }
  SUBCASE("gradient matches finite differences") {
    for (double g : {0.01, 0.1, 1.0}) {
      const Matrix a = random_matrix(3, 7, rng), b = random_matrix(3, 11, rng);
      Matrix grad;
      soft_dtw(a, b, g, &grad);
      const auto fd = finite_difference(
          [&](const std::vector<double>& v) { return soft_dtw(Matrix(3, 7, v), b, g); }, a.data());
      CAPTURE(g);
      CHECK(relative_error(grad.data(), fd) < 1e-4);
    }
  }
  CHECK_THROWS_AS(soft_dtw(row({1}), row({1}), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(soft_dtw(row({1}), row({1}), -1.0), std::invalid_argument);
}

TEST_CASE("medoid and initialization") {
  const std::vector<Matrix> seqs{row({0, 0, 0}), row({1, 1, 1, 1, 1}), row({0.9, 1.1, 1.0, 1.0}), row({5, 5})};
  CHECK(medoid_index(seqs) == 2);
  const Matrix init = barycenter_init(seqs);
  CHECK(init.cols() == 3);
  CHECK(init(0, 0) == doctest::Approx(0.9));
  CHECK(init(0, 2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(medoid_index(std::vector<Matrix>{}), std::invalid_argument);
}

TEST_CASE("dba") {
  std::mt19937_64 rng(4);
  SUBCASE("identical inputs") {
    const Matrix x = random_matrix(2, 12, rng);
    const std::vector<Matrix> seqs(4, x);
    const auto b = dba(seqs);
    CHECK(b.sequence == x);
    REQUIRE(b.objective.size() >= 2);
    CHECK(b.objective[1] == 0.0);
  }
  SUBCASE("two constants average to the midpoint") {
    const std::vector<Matrix> seqs{Matrix(2, 9, 1.5), Matrix(2, 9, -0.5)};
    const auto b = dba(seqs);
    CHECK(b.sequence.cols() == 9);
    for (double v : b.sequence.data()) CHECK(v == doctest::Approx(0.5));
    // Unequal lengths weight each frame by its number of matches.
    const std::vector<Matrix> uneven{Matrix(1, 9, 1.5), Matrix(1, 13, -0.5)};
    const auto weighted = dba(uneven);
    for (double v : weighted.sequence.data()) {
      CHECK(v >= -0.5);
      CHECK(v <= 1.5);
    }
  }
  SUBCASE("objective never increases") {
    std::uniform_int_distribution<std::size_t> len(8, 20), count(2, 6);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Matrix> seqs;
      const std::size_t n = count(rng);
      for (std::size_t i = 0; i < n; ++i) seqs.push_back(random_matrix(2, len(rng), rng));
      const auto b = dba(seqs);
      CHECK(b.objective.size() <= 31);
      for (std::size_t k = 1; k < b.objective.size(); ++k) CHECK(b.objective[k] <= b.objective[k - 1] + 1e-12);
    }
  }
  SUBCASE("deterministic") {
    std::vector<Matrix> seqs;
    for (int i = 0; i < 4; ++i) seqs.push_back(random_matrix(3, 10 + i, rng));
    CHECK(dba(seqs).sequence == dba(seqs).sequence);
  }
  CHECK_THROWS_AS(dba(std::vector<Matrix>{}), std::invalid_argument);
}

TEST_CASE("soft-dba") {
  std::mt19937_64 rng(5);
  std::vector<Matrix> seqs;
  for (int i = 0; i < 5; ++i) seqs.push_back(random_matrix(2, 14 + i, rng));
  for (double g : {0.01, 0.1, 1.0}) {
    const auto b = soft_dba(seqs, {.gamma = g, .steps = 50});
    CAPTURE(g);
    REQUIRE(b.objective.size() == 51);
    CHECK(b.objective.back() < b.objective.front());
    CHECK(b.sequence.cols() == 16);
  }
  SUBCASE("identical inputs stay near the starting objective") {
    const Matrix x = random_matrix(2, 12, rng);
    const std::vector<Matrix> same(3, x);
    const auto b = soft_dba(same, {.gamma = 0.01});
    const double scale = std::max(1.0, std::abs(b.objective.front()));
    CHECK(b.objective.back() <= b.objective.front() + 1e-3 * scale);
    CHECK(std::abs(b.objective.back() - b.objective.front()) < 1e-3 * scale);
  }
  CHECK_THROWS_AS(soft_dba(seqs, {.gamma = 0.0}), std::invalid_argument);
}

TEST_CASE("alignments from paths") {
  const Path p{{0, 0}, {1, 0}, {2, 1}, {2, 2}, {2, 3}, {3, 4}};
  const auto a = path_alignment(p, 4, 5);
  CHECK(a.to_prototype == std::vector<std::size_t>{0, 0, 2, 4});
  CHECK(a.from_prototype == std::vector<std::size_t>{0, 2, 2, 2, 3});
  CHECK_THROWS_AS(path_alignment(p, 5, 5), std::invalid_argument);

  std::mt19937_64 rng(6);
  const Matrix x = random_matrix(2, 10, rng);
  const auto self = dtw_alignment(x, x);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(self.to_prototype[k] == k);
    CHECK(self.from_prototype[k] == k);
  }
}

TEST_CASE("euclidean baseline") {
  const std::vector<EmbeddingSequence> seqs{{"a", row({1, 2, 3}), {}}, {"b", row({3, 4, 5, 6, 7}), {}}};
  const auto e = euclidean_baseline(seqs);
  CHECK(e.prototype == row({2, 3, 4, 6, 7}));
  REQUIRE(e.alignments.size() == 2);
  CHECK(e.alignments[0].to_prototype == std::vector<std::size_t>{0, 1, 2});
  CHECK(e.alignments[0].from_prototype[3] == FrameAlignment::none);
  CHECK(e.alignments[1].from_prototype == std::vector<std::size_t>{0, 1, 2, 3, 4});

  EmbeddingSequence masked{"m", row({10, 20, 30}), row({1, 0, 1})};
  const std::vector<EmbeddingSequence> with_mask{seqs[0], masked};
  CHECK(euclidean_baseline(with_mask).prototype == row({5.5, 2, 16.5}));

  std::mt19937_64 rng(7);
  const std::vector<EmbeddingSequence> equal{{"x", random_matrix(2, 6, rng), {}}, {"y", random_matrix(2, 6, rng), {}}};
  const auto eq = euclidean_baseline(equal);
  for (std::size_t k = 0; k < eq.prototype.size(); ++k) {
    CHECK(eq.prototype.data()[k] == doctest::Approx(0.5 * (equal[0].data.data()[k] + equal[1].data.data()[k])));
  }
  CHECK(identity_alignment(5, 3).to_prototype == std::vector<std::size_t>{0, 1, 2, 2, 2});
  CHECK_THROWS_AS(euclidean_baseline({}), std::invalid_argument);
}
