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

#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "tpl/cpab.hpp"

using namespace tpl;
using namespace tpl::cpab;
using tpl::testing::random_theta;

TEST_CASE("tessellation knots are uniform and half-open") {
  Tessellation t(16);
  CHECK(t.dim() == 15);
  auto k = t.knots();
  REQUIRE(k.size() == 17);
  CHECK(k.front() == 0.0);
  CHECK(k.back() == 1.0);
  for (std::size_t i = 1; i < k.size(); ++i) CHECK(k[i] - k[i - 1] == doctest::Approx(1.0 / 16));
  CHECK(t.cell_of(0.0) == 0);
  CHECK(t.cell_of(1.0 / 16) == 1);
  CHECK(t.cell_of(0.5) == 8);
  CHECK(t.cell_of(1.0) == 15);
  CHECK_THROWS_AS(Tessellation(0), std::invalid_argument);
}

TEST_CASE("build_velocity_field") {
  SUBCASE("zero theta gives a zero field") {
    Tessellation t(16);
    auto f = build_velocity_field(WarpParams(15), t);
    for (double x : {0.0, 0.1, 0.37, 0.9, 1.0}) CHECK(f(x) == 0.0);
  }
  SUBCASE("two cells interpolate (0,0),(0.5,1),(1,0)") {
    auto f = build_velocity_field(WarpParams{1.0}, Tessellation(2));
    CHECK(f.piece(0).slope == doctest::Approx(2.0));
    CHECK(f.piece(0).intercept == doctest::Approx(0.0));
    CHECK(f.piece(1).slope == doctest::Approx(-2.0));
    CHECK(f.piece(1).intercept == doctest::Approx(2.0));
  }
  SUBCASE("continuity at interior knots") {
    std::mt19937_64 rng(7);
    Tessellation t(16);
    auto f = build_velocity_field(random_theta(15, rng, 3.0), t);
    for (int c = 0; c + 1 < 16; ++c) {
      const double k = t.knot(c + 1);
      const double left = f.piece(c).slope * k + f.piece(c).intercept;
      const double right = f.piece(c + 1).slope * k + f.piece(c + 1).intercept;
      CHECK(std::abs(left - right) < 1e-12);
    }
    CHECK(std::abs(f.piece(0).intercept) < 1e-12);
    CHECK(std::abs(f.piece(15).slope + f.piece(15).intercept) < 1e-12);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(build_velocity_field(WarpParams(14), Tessellation(16)), std::invalid_argument);
  }
}

TEST_CASE("integrate") {
  Tessellation t(16);
  std::mt19937_64 rng(11);
  SUBCASE("identity for the zero field") {
    auto f = build_velocity_field(WarpParams(15), t);
    for (double x : {0.0, 0.013, 0.5, 0.77, 1.0}) CHECK(integrate(f, x) == x);
  }
  SUBCASE("boundaries are fixed points") {
    for (int r = 0; r < 20; ++r) {
      auto f = build_velocity_field(random_theta(15, rng, 3.0), t);
      CHECK(std::abs(integrate(f, 0.0)) < 1e-9);
      CHECK(std::abs(integrate(f, 1.0) - 1.0) < 1e-9);
    }
  }
  SUBCASE("matches the RK4 reference") {
    for (int r = 0; r < 5; ++r) {
      auto f = build_velocity_field(random_theta(15, rng, 2.0), t);
      for (double x : {0.3, 0.0625, 0.81}) {
        const double ref = tpl::testing::rk4_integrate(f, x, 1.0, 1e-5);
        CHECK(std::abs(integrate(f, x) - ref) < 1e-7);
      }
    }
  }
  SUBCASE("rejects points outside the unit interval") {
    auto f = build_velocity_field(WarpParams(15), t);
    CHECK_THROWS_AS(integrate(f, 1.5), std::invalid_argument);
  }
  SUBCASE("non-finite theta is reported") {
    WarpParams th(15);
    th[3] = std::nan("");
    auto f = build_velocity_field(th, t);
    CHECK_THROWS_AS(integrate(f, 0.2), std::runtime_error);
  }
}

TEST_CASE("warp_grid") {
  Tessellation t(16);
  SUBCASE("identity grid") {
    auto g = warp_grid(WarpParams(15), t, 5);
    std::vector<double> expect{0, 0.25, 0.5, 0.75, 1};
    for (std::size_t i = 0; i < 5; ++i) CHECK(g[i] == doctest::Approx(expect[i]));
  }
  SUBCASE("strictly increasing with pinned endpoints") {
    std::mt19937_64 rng(3);
    for (int r = 0; r < 20; ++r) {
      auto g = warp_grid(random_theta(15, rng, 3.0), t, 200);
      CHECK(std::abs(g.front()) < 1e-9);
      CHECK(std::abs(g.back() - 1.0) < 1e-9);
      for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
    }
  }
  SUBCASE("negated theta undoes the warp") {
    std::mt19937_64 rng(5);
    auto th = random_theta(15, rng, 2.0);
    auto g = warp_grid(th, t, 101);
    auto back = warp_points(inverse(th), t, g);
    auto grid = unit_grid(101);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(back[i] - grid[i]) < 1e-5);
  }
  CHECK_THROWS_AS(warp_grid(WarpParams(15), t, 1), std::invalid_argument);
}

TEST_CASE("inverse") {
  CHECK(inverse(WarpParams(3)) == WarpParams(std::vector<double>{-0.0, -0.0, -0.0}));
  auto inv = inverse(WarpParams{0.5, -0.2, 1.0});
  CHECK(inv[0] == -0.5);
  CHECK(inv[1] == 0.2);
  CHECK(inv[2] == -1.0);
}

TEST_CASE("WarpParams clamping") {
  WarpParams th{2.0, -4.0};
  auto c = th.clamped(1.0);
  CHECK(c[0] == doctest::Approx(0.5));
  CHECK(c[1] == doctest::Approx(-1.0));
  CHECK(th.clamped(10.0) == th);
}

TEST_CASE("grad_warp agrees with central differences") {
  Tessellation t(16);
  std::mt19937_64 rng(21);
  auto check_against_fd = [&](const WarpParams& th, const std::vector<double>& pts) {
    Matrix jac = grad_warp(th, t, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      auto fd = tpl::testing::finite_difference(
          [&](const std::vector<double>& v) { return integrate(build_velocity_field(WarpParams(v), t), pts[i]); },
          std::vector<double>(th.values().begin(), th.values().end()));
      CHECK(tpl::testing::relative_error(jac.row(i), fd) < 1e-4);
    }
  };
  SUBCASE("at theta = 0") { check_against_fd(WarpParams(15), {0.1, 0.33, 0.5, 0.72, 0.99}); }
  SUBCASE("random theta, 50 points") {
    for (int r = 0; r < 3; ++r) {
      auto pts = unit_grid(52);
      pts = std::vector<double>(pts.begin() + 1, pts.end() - 1);
      check_against_fd(random_theta(15, rng, 2.0), pts);
    }
  }
  SUBCASE("points starting on knots") {
    std::vector<double> knots;
    for (int k = 1; k < 16; ++k) knots.push_back(t.knot(k));
    for (int r = 0; r < 5; ++r) check_against_fd(random_theta(15, rng, 1.0), knots);
  }
  SUBCASE("endpoints have zero gradient") {
    std::vector<double> pts{0.0, 1.0};
    Matrix jac = grad_warp(random_theta(15, rng, 2.0), t, pts);
    for (double v : jac.data()) CHECK(v == 0.0);
  }
}
