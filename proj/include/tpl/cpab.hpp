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

// One-dimensional CPAB warps: diffeomorphisms of [0,1] obtained by integrating
// a continuous piecewise-affine velocity field that vanishes at both ends.

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "tpl/matrix.hpp"

namespace tpl::cpab {

/// Uniform partition of [0,1] into n_cells cells.
class Tessellation {
 public:
  explicit Tessellation(int n_cells = 16);

  int n_cells() const { return n_cells_; }
  /// Number of free parameters: velocities at the interior knots.
  std::size_t dim() const { return static_cast<std::size_t>(n_cells_ - 1); }
  double width() const { return 1.0 / n_cells_; }
  double knot(int i) const { return static_cast<double>(i) / n_cells_; }
  std::vector<double> knots() const;

  /// Cells are half-open [k_c, k_{c+1}); x = 1 belongs to the last cell.
  int cell_of(double x) const;

  bool operator==(const Tessellation&) const = default;

 private:
  int n_cells_;
};

/// Interior knot j carries velocity theta_j / dim(theta); v = theta when n_cells = 2.
inline double knot_velocity_scale(const Tessellation& tess) { return 1.0 / static_cast<double>(tess.dim()); }

/// Parameters of a warp: scaled velocities at the interior knots.
class WarpParams {
 public:
  WarpParams() = default;
  explicit WarpParams(std::size_t dim) : values_(dim, 0.0) {}
  explicit WarpParams(std::vector<double> values) : values_(std::move(values)) {}
  WarpParams(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }

  double max_abs() const;
  bool is_finite() const;
  /// Rescales so that max |theta_j| <= bound (no-op if already within).
  WarpParams clamped(double bound) const;

  bool operator==(const WarpParams&) const = default;

 private:
  std::vector<double> values_;
};

/// (T^theta)^{-1} = T^{-theta}.
WarpParams inverse(const WarpParams& theta);

struct AffinePiece {
  double slope;      // a_c
  double intercept;  // b_c
};

/// v(x) = a_c x + b_c on cell c; continuous, zero at 0 and 1.
class VelocityField {
 public:
  VelocityField(Tessellation tess, std::vector<double> knot_velocities);

  const Tessellation& tessellation() const { return tess_; }
  const AffinePiece& piece(int cell) const { return pieces_[static_cast<std::size_t>(cell)]; }
  std::span<const AffinePiece> pieces() const { return pieces_; }
  /// Velocity at knot i (zero at both ends).
  double knot_velocity(int i) const { return knot_velocities_[static_cast<std::size_t>(i)]; }
  double operator()(double x) const;
  /// Velocity inside a given cell, exact at the cell's knots.
  double velocity_in_cell(int cell, double x) const;

 private:
  Tessellation tess_;
  std::vector<double> knot_velocities_;
  std::vector<AffinePiece> pieces_;
};

/// Throws std::invalid_argument when theta.size() != tess.dim().
VelocityField build_velocity_field(const WarpParams& theta, const Tessellation& tess);

/// phi(t) for d(phi)/d(tau) = v(phi), phi(0) = x. Uses the closed-form per-cell
/// solution, chaining analytic cell exit times. Throws std::runtime_error on
/// non-finite intermediates or if the crossing cap is exceeded.
double integrate(const VelocityField& field, double x, double t = 1.0);

/// As integrate(), additionally writing d phi(t) / d theta_j into grad
/// (size = tess.dim()).
double integrate_with_grad(const VelocityField& field, double x, double t, std::span<double> grad);

/// T^theta(k / (length - 1)) for k = 0..length-1. Throws for length < 2.
std::vector<double> warp_grid(const WarpParams& theta, const Tessellation& tess, std::size_t length);

/// T^theta applied to arbitrary points in [0,1].
std::vector<double> warp_points(const WarpParams& theta, const Tessellation& tess,
                                std::span<const double> points);

/// Jacobian d T^theta(x_i) / d theta_j, shape |points| x dim.
Matrix grad_warp(const WarpParams& theta, const Tessellation& tess, std::span<const double> points);

/// Values and Jacobian in one pass.
struct WarpEvaluation {
  std::vector<double> values;
  Matrix jacobian;
};
WarpEvaluation evaluate_warp(const WarpParams& theta, const Tessellation& tess,
                             std::span<const double> points);

/// Normalized grid k/(length-1).
std::vector<double> unit_grid(std::size_t length);

inline constexpr double kSlopeEpsilon = 1e-10;

}  // namespace tpl::cpab
