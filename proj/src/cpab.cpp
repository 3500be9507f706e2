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

#include "tpl/cpab.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tpl::cpab {

Tessellation::Tessellation(int n_cells) : n_cells_(n_cells) {
  if (n_cells < 1) throw std::invalid_argument("tessellation needs at least one cell");
}

std::vector<double> Tessellation::knots() const {
  std::vector<double> k(static_cast<std::size_t>(n_cells_) + 1);
  for (int i = 0; i <= n_cells_; ++i) k[static_cast<std::size_t>(i)] = knot(i);
  return k;
}

int Tessellation::cell_of(double x) const {
  if (x >= 1.0) return n_cells_ - 1;
  if (x <= 0.0) return 0;
  int c = static_cast<int>(std::floor(x * n_cells_));
  // x * n might round across a knot; fix up against the exact knot values.
  if (c > 0 && x < knot(c)) --c;
  if (c < n_cells_ - 1 && x >= knot(c + 1)) ++c;
  return std::clamp(c, 0, n_cells_ - 1);
}

double WarpParams::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool WarpParams::is_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

WarpParams WarpParams::clamped(double bound) const {
  const double m = max_abs();
  if (m <= bound || m == 0.0) return *this;
  WarpParams out = *this;
  for (double& v : out.values_) v *= bound / m;
  return out;
}

WarpParams inverse(const WarpParams& theta) {
  std::vector<double> neg(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) neg[i] = -theta[i];
  return WarpParams(std::move(neg));
}

VelocityField::VelocityField(Tessellation tess, std::vector<double> knot_velocities)
    : tess_(tess), knot_velocities_(std::move(knot_velocities)) {
  const int n = tess_.n_cells();
  const double h = tess_.width();
  pieces_.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    const double a = (knot_velocity(c + 1) - knot_velocity(c)) / h;
    pieces_[static_cast<std::size_t>(c)] = {a, knot_velocity(c) - a * tess_.knot(c)};
  }
}

double VelocityField::velocity_in_cell(int cell, double x) const {
  const double lo = tess_.knot(cell);
  if (x == lo) return knot_velocity(cell);
  if (x == tess_.knot(cell + 1)) return knot_velocity(cell + 1);
  return knot_velocity(cell) + pieces_[static_cast<std::size_t>(cell)].slope * (x - lo);
}

double VelocityField::operator()(double x) const { return velocity_in_cell(tess_.cell_of(x), x); }

VelocityField build_velocity_field(const WarpParams& theta, const Tessellation& tess) {
  if (theta.size() != tess.dim()) {
    throw std::invalid_argument("theta has dimension " + std::to_string(theta.size()) +
                                ", tessellation expects " + std::to_string(tess.dim()));
  }
  std::vector<double> knot_velocities(static_cast<std::size_t>(tess.n_cells()) + 1, 0.0);
  const double scale = knot_velocity_scale(tess);
  for (std::size_t j = 0; j < theta.size(); ++j) knot_velocities[j + 1] = theta[j] * scale;
  return VelocityField(tess, std::move(knot_velocities));
}

namespace {

// Closed-form flow inside one cell, psi(t) = x e^{at} + (b/a)(e^{at} - 1),
// with its partials in a and b.
struct CellFlow {
  double value;
  double d_slope;
  double d_intercept;
};

// (s e^s - (e^s - 1)) / s^2
double slope_kernel(double s) {
  if (std::abs(s) < 1e-3) {
    return 0.5 + s * (1.0 / 3.0 + s * (1.0 / 8.0 + s * (1.0 / 30.0 + s / 144.0)));
  }
  return (s * std::exp(s) - std::expm1(s)) / (s * s);
}

// v0 = a x + b is passed separately so that psi = x + v0 t (e^s - 1)/s stays
// exact at fixed points.
CellFlow cell_flow(double x, double v0, double t, double a, double b) {
  if (std::abs(a) < kSlopeEpsilon) {
    return {x + v0 * t, x * t + 0.5 * b * t * t, t};
  }
  const double s = a * t;
  const double e = std::exp(s);
  const double em1_over_s = s == 0.0 ? 1.0 : std::expm1(s) / s;
  return {x + v0 * t * em1_over_s, x * t * e + b * t * t * slope_kernel(s), t * em1_over_s};
}

// Time for the flow starting at x (velocity v0) to reach knot xc (velocity vc),
// assuming both velocities share a sign.
double hitting_time(double x, double xc, double a, double v0) {
  if (std::abs(a) < kSlopeEpsilon) return (xc - x) / v0;
  return std::log1p(a * (xc - x) / v0) / a;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("non-finite value during CPAB integration (") + what + ")");
  }
}

// Shared integration loop. When grad is non-empty it receives d phi / d theta.
double integrate_impl(const VelocityField& field, double x, double t, std::span<double> grad) {
  const Tessellation& tess = field.tessellation();
  const int n = tess.n_cells();
  const double h = tess.width();
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
  if (!(x >= 0.0 && x <= 1.0)) {
    throw std::invalid_argument("integration start point must lie in [0,1]");
  }
  if (x == 0.0 || x == 1.0) return x;  // v vanishes there for every theta

  // d(remaining time)/d theta, accumulated across crossings.
  std::vector<double> dt;
  if (want_grad) dt.assign(grad.size(), 0.0);

  // Adds coef_a * d a_c/d theta + coef_b * d b_c/d theta into out.
  const double vs = knot_velocity_scale(tess);
  auto scatter_cell = [&](int c, double coef_a, double coef_b, std::span<double> out) {
    const double kc = tess.knot(c);
    coef_a *= vs;
    coef_b *= vs;
    if (c >= 1) {  // left knot velocity is theta_{c-1}
      out[static_cast<std::size_t>(c - 1)] += coef_a * (-1.0 / h) + coef_b * (1.0 + kc / h);
    }
    if (c + 1 <= n - 1) {  // right knot velocity is theta_c
      out[static_cast<std::size_t>(c)] += coef_a * (1.0 / h) + coef_b * (-kc / h);
    }
  };

  int cell = tess.cell_of(x);
  double remaining = t;
  const int max_iter = 10 * n;
  for (int iter = 0; iter < max_iter; ++iter) {
    const AffinePiece& p = field.piece(cell);
    const double v0 = field.velocity_in_cell(cell, x);
    check_finite(v0, "velocity");

    bool exits = false;
    double xc = 0.0;
    double vc = 0.0;
    if (v0 != 0.0) {
      xc = v0 > 0.0 ? tess.knot(cell + 1) : tess.knot(cell);
      vc = field.velocity_in_cell(cell, xc);
      exits = (v0 > 0.0 && vc > 0.0) || (v0 < 0.0 && vc < 0.0);
    }
    double tau = 0.0;
    if (exits) {
      tau = hitting_time(x, xc, p.slope, v0);
      check_finite(tau, "exit time");
      exits = tau < remaining;
    }

    if (!exits) {
      const CellFlow f = cell_flow(x, v0, remaining, p.slope, p.intercept);
      check_finite(f.value, "flow");
      const double lo = tess.knot(cell);
      const double hi = tess.knot(cell + 1);
      const double value = std::clamp(f.value, lo, hi);
      if (want_grad) {
        const double v_end = p.slope * f.value + p.intercept;
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = v_end * dt[j];
        scatter_cell(cell, f.d_slope, f.d_intercept, grad);
      }
      return value;
    }

    if (want_grad) {
      // Implicit differentiation of psi(tau) = xc: d tau = -(psi_a da + psi_b db) / vc.
      const CellFlow f = cell_flow(x, v0, tau, p.slope, p.intercept);
      std::vector<double> dtau(grad.size(), 0.0);
      scatter_cell(cell, -f.d_slope / vc, -f.d_intercept / vc, dtau);
      for (std::size_t j = 0; j < grad.size(); ++j) dt[j] -= dtau[j];
    }
    remaining -= tau;
    x = xc;
    cell += v0 > 0.0 ? 1 : -1;
    if (cell < 0 || cell >= n) {
      throw std::runtime_error("CPAB integration left the unit interval");
    }
  }
  throw std::runtime_error("CPAB integration exceeded the cell-crossing cap");
}

}  // namespace

double integrate(const VelocityField& field, double x, double t) {
  return integrate_impl(field, x, t, {});
}

double integrate_with_grad(const VelocityField& field, double x, double t, std::span<double> grad) {
  if (grad.size() != field.tessellation().dim()) {
    throw std::invalid_argument("gradient buffer does not match theta dimension");
  }
  return integrate_impl(field, x, t, grad);
}

std::vector<double> unit_grid(std::size_t length) {
  if (length < 2) throw std::invalid_argument("grid length must be at least 2");
  std::vector<double> g(length);
  const double denom = static_cast<double>(length - 1);
  for (std::size_t k = 0; k < length; ++k) g[k] = static_cast<double>(k) / denom;
  g.back() = 1.0;
  return g;
}

std::vector<double> warp_points(const WarpParams& theta, const Tessellation& tess,
                                std::span<const double> points) {
  const VelocityField field = build_velocity_field(theta, tess);
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = integrate(field, points[i]);
  return out;
}

std::vector<double> warp_grid(const WarpParams& theta, const Tessellation& tess, std::size_t length) {
  const auto grid = unit_grid(length);
  return warp_points(theta, tess, grid);
}

WarpEvaluation evaluate_warp(const WarpParams& theta, const Tessellation& tess,
                             std::span<const double> points) {
  const VelocityField field = build_velocity_field(theta, tess);
  WarpEvaluation ev{std::vector<double>(points.size()), Matrix(points.size(), tess.dim())};
  for (std::size_t i = 0; i < points.size(); ++i) {
    ev.values[i] = integrate_impl(field, points[i], 1.0, ev.jacobian.row(i));
  }
  return ev;
}

Matrix grad_warp(const WarpParams& theta, const Tessellation& tess, std::span<const double> points) {
  return evaluate_warp(theta, tess, points).jacobian;
}

}  // namespace tpl::cpab
