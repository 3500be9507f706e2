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


// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset
// of criteria by number; the default runs all nine.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "tpl/baselines.hpp"
#include "tpl/cpab.hpp"
#include "tpl/dataio.hpp"
#include "tpl/dmtae.hpp"
#include "tpl/fileio.hpp"
#include "tpl/metrics.hpp"
#include "tpl/nn.hpp"
#include "tpl/pipeline.hpp"

using namespace tpl;
using tpl::testing::finite_difference;
using tpl::testing::random_matrix;
using tpl::testing::random_theta;
using tpl::testing::relative_error;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Collects named checks; the criterion passes when all of them do.
class Checks {
 public:
  void require(bool ok, const std::string& what) {
    ++count_;
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    std::string s = std::to_string(count_ - failures_.size()) + "/" + std::to_string(count_) + " checks";
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) s += "; FAILED " + f;
    return s;
  }

 private:
  std::vector<std::string> notes_, failures_;
  std::size_t count_ = 0;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. CPAB correctness

void cpab_suite(Checks& c) {
  const cpab::Tessellation tess(16);
  std::mt19937_64 rng(101);

  const auto zero = cpab::build_velocity_field(cpab::WarpParams(15), tess);
  bool identity = true;
  for (double x : cpab::unit_grid(101)) identity = identity && cpab::integrate(zero, x) == x;
  c.require(identity, "identity warp");

  bool monotone = true, fixed = true;
  double inverse_err = 0.0, rk4_err = 0.0, grad_err = 0.0;
  for (int r = 0; r < 100; ++r) {
    const auto theta = random_theta(15, rng, 3.0);
    const auto grid = cpab::warp_grid(theta, tess, 257);
    for (std::size_t i = 1; i < grid.size(); ++i) monotone = monotone && grid[i] > grid[i - 1];
    const auto field = cpab::build_velocity_field(theta, tess);
    fixed = fixed && std::abs(cpab::integrate(field, 0.0)) < 1e-12 && std::abs(cpab::integrate(field, 1.0) - 1.0) < 1e-12;
    const auto back = cpab::build_velocity_field(cpab::inverse(theta), tess);
    for (double x : cpab::unit_grid(101)) {
      inverse_err = std::max(inverse_err, std::abs(cpab::integrate(back, cpab::integrate(field, x)) - x));
    }
  }
  c.require(monotone, "monotonicity");
  c.require(fixed, "boundary fixed points");
  c.require(inverse_err < 1e-5, "inverse consistency");
  c.note("inverse err " + fmt(inverse_err, 3));

  for (int r = 0; r < 10; ++r) {
    const auto field = cpab::build_velocity_field(random_theta(15, rng, 3.0), tess);
    for (double x : {0.05, 0.3, 0.5, 0.81}) {
      rk4_err = std::max(rk4_err, std::abs(cpab::integrate(field, x) - tpl::testing::rk4_integrate(field, x, 1.0, 1e-5)));
    }
  }
  c.require(rk4_err < 1e-7, "integration vs RK4");
  c.note("rk4 err " + fmt(rk4_err, 3));

  for (int r = 0; r < 10; ++r) {
    const auto theta = random_theta(15, rng, 2.0);
    const std::vector<double> pts{0.02, 0.2, 0.37, 0.5, 0.66, 0.9};
    const Matrix jac = cpab::grad_warp(theta, tess, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto fd = finite_difference(
          [&](const std::vector<double>& v) {
            return cpab::integrate(cpab::build_velocity_field(cpab::WarpParams(v), tess), pts[i]);
          },
          std::vector<double>(theta.values().begin(), theta.values().end()));
      grad_err = std::max(grad_err, relative_error(jac.row(i), fd));
    }
  }
  c.require(grad_err < 1e-4, "gradient vs FD");
  c.note("grad rel err " + fmt(grad_err, 3));
}

// ---------------------------------------------------------------------------
// 2. Differentiation

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> flat(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

Matrix reshape(const std::vector<double>& v, std::size_t r, std::size_t c) { return Matrix(r, c, v); }

// Max relative error between an analytic gradient and central differences of f.
double fd_error(const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& x,
                const std::vector<double>& analytic) {
  return relative_error(analytic, finite_difference(f, x, 1e-6));
}

double layer_suite(Checks& c) {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  auto record = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    c.require(err < 1e-5, name + " (" + fmt(err, 3) + ")");
  };

  for (auto padding : {nn::Padding::zero, nn::Padding::replicate}) {
    const std::string name = padding == nn::Padding::zero ? "conv1d" : "conv1d replicate";
    nn::Conv1d conv("conv", 3, 4, 5, padding);
    conv.init(rng);
    const Matrix x = random_matrix(3, 11, rng), r = random_matrix(4, 11, rng);
    const Matrix gx = conv.backward(x, r);
    record(name + " input", fd_error([&](const std::vector<double>& v) {
             return dot(conv.forward(reshape(v, 3, 11)).data(), r.data());
           }, flat(x), flat(gx)));
    for (auto* p : {&conv.weight, &conv.bias}) {
      record(name + " " + p->name, fd_error([&](const std::vector<double>& v) {
               nn::Conv1d copy = conv;
               (p == &conv.weight ? copy.weight : copy.bias).value = v;
               return dot(copy.forward(x).data(), r.data());
             }, p->value, p->grad));
    }
  }

  {
    nn::Dense dense("dense", 6, 4);
    dense.init(rng);
    const auto x = tpl::testing::random_vector(6, rng), r = tpl::testing::random_vector(4, rng);
    const auto gx = dense.backward(x, r);
    record("dense input", fd_error([&](const std::vector<double>& v) { return dot(dense.forward(v), r); }, x, gx));
    for (auto* p : {&dense.weight, &dense.bias}) {
      record("dense " + p->name, fd_error([&](const std::vector<double>& v) {
               nn::Dense copy = dense;
               (p == &dense.weight ? copy.weight : copy.bias).value = v;
               return dot(copy.forward(x), r);
             }, p->value, p->grad));
    }
  }

  const Matrix x = random_matrix(3, 12, rng), r = random_matrix(3, 12, rng);
  record("relu", fd_error([&](const std::vector<double>& v) { return dot(nn::relu(reshape(v, 3, 12)).data(), r.data()); },
                          flat(x), flat(nn::relu_backward(x, r))));
  record("tanh", fd_error([&](const std::vector<double>& v) { return dot(nn::tanh(reshape(v, 3, 12)).data(), r.data()); },
                          flat(x), flat(nn::tanh_backward(nn::tanh(x), r))));
  const auto rg = tpl::testing::random_vector(3, rng);
  record("global average pool",
         fd_error([&](const std::vector<double>& v) { return dot(nn::global_avg_pool(reshape(v, 3, 12)), rg); }, flat(x),
                  flat(nn::global_avg_pool_backward(rg, 12))));
  const Matrix rb = random_matrix(3, 5, rng);
  record("binned average pool",
         fd_error([&](const std::vector<double>& v) {
           return dot(nn::binned_avg_pool(reshape(v, 3, 12), 5).data(), rb.data());
         }, flat(x), flat(nn::binned_avg_pool_backward(rb, 12))));

  for (double gamma : {0.01, 0.1, 1.0}) {
    const Matrix a = random_matrix(2, 9, rng), b = random_matrix(2, 13, rng);
    Matrix grad;
    baselines::soft_dtw(a, b, gamma, &grad);
    record("soft_dtw gamma " + fmt(gamma), fd_error([&](const std::vector<double>& v) {
             return baselines::soft_dtw(reshape(v, 2, 9), b, gamma);
           }, flat(a), flat(grad)));
  }
  return worst;
}

double end_to_end_error(dmtae::DmtaeModel& model, const std::vector<EmbeddingSequence>& seqs,
                        const dmtae::TrainConfig& cfg) {
  const std::uint64_t noise = 7;
  const double lambda = 0.7;
  model.zero_grad();
  dmtae::evaluate_batch(model, seqs, lambda, cfg, noise, true);
  std::mt19937_64 pick(3);
  double worst = 0.0;
  const auto params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<std::size_t> idx(params[p]->size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), pick);
    idx.resize(std::min<std::size_t>(idx.size(), 12));
    std::vector<double> analytic, x;
    for (std::size_t i : idx) {
      analytic.push_back(params[p]->grad[i]);
      x.push_back(params[p]->value[i]);
    }
    worst = std::max(worst, fd_error([&](const std::vector<double>& v) {
                       dmtae::DmtaeModel copy = model;
                       auto* t = copy.parameters()[p];
                       for (std::size_t k = 0; k < idx.size(); ++k) t->value[idx[k]] = v[k];
                       return dmtae::evaluate_batch(copy, seqs, lambda, cfg, noise, false).losses.total;
                     }, x, analytic));
  }
  return worst;
}

void differentiation_suite(Checks& c) {
  c.note("layers max rel err " + fmt(layer_suite(c), 3));

  std::mt19937_64 rng(203);
  std::vector<EmbeddingSequence> seqs;
  for (std::size_t i = 0; i < 3; ++i) seqs.push_back({"s" + std::to_string(i), random_matrix(2, 14 + 3 * i, rng), {}});
  auto masked = seqs;
  for (auto& s : masked) {
    Matrix mask(2, s.length(), 1.0);
    mask(0, 2) = mask(1, 6) = 0.0;
    s.mask = mask;
  }
  dmtae::TrainConfig cfg;
  cfg.rec_theta_gradient = true;
  cfg.beta = 0.3;
  cfg.gamma_smooth = 0.2;
  cfg.alpha_traj = 0.1;
  cfg.subsample = 6;
  double worst = 0.0;
  for (auto variant : {dmtae::Variant::standard, dmtae::Variant::vae}) {
    for (const auto* batch : {&seqs, &masked}) {
      dmtae::ModelConfig mc;
      mc.channels = 2;
      mc.hidden = 8;
      mc.loc_hidden = 8;
      mc.variant = variant;
      dmtae::DmtaeModel model(mc, 204);
      std::uniform_real_distribution<double> u(-0.3, 0.3);
      for (double& w : model.head.weight.value) w = u(rng);
      for (double& b : model.head.bias.value) b = u(rng);
      model.set_prototype_length(16);
      worst = std::max(worst, end_to_end_error(model, *batch, cfg));
    }
  }
  c.require(worst < 1e-4, "end-to-end total loss");
  c.note("end-to-end max rel err " + fmt(worst, 3));
}

// ---------------------------------------------------------------------------
// 3. Baseline oracles

double frame_cost(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double d = 0.0;
  for (std::size_t c = 0; c < a.rows(); ++c) d += (a(c, i) - b(c, j)) * (a(c, i) - b(c, j));
  return d;
}

// Minimum over every monotone, continuous path from (0,0) to the two ends.
double exhaustive_dtw(const Matrix& a, const Matrix& b, std::size_t i = 0, std::size_t j = 0) {
  const double here = frame_cost(a, i, b, j);
  if (i + 1 == a.cols() && j + 1 == b.cols()) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.cols()) best = std::min(best, exhaustive_dtw(a, b, i + 1, j));
  if (j + 1 < b.cols()) best = std::min(best, exhaustive_dtw(a, b, i, j + 1));
  if (i + 1 < a.cols() && j + 1 < b.cols()) best = std::min(best, exhaustive_dtw(a, b, i + 1, j + 1));
  return here + best;
}

void baseline_suite(Checks& c) {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> short_len(1, 4), ch(1, 3), mid_len(5, 25);
  double dtw_err = 0.0;
  for (int r = 0; r < 1000; ++r) {
    const std::size_t k = ch(rng);
    const Matrix a = random_matrix(k, short_len(rng), rng), b = random_matrix(k, short_len(rng), rng);
    dtw_err = std::max(dtw_err, std::abs(baselines::dtw_distance(a, b) - exhaustive_dtw(a, b)));
  }
  c.require(dtw_err < 1e-12, "dtw vs exhaustive enumeration");
  c.note("dtw max err " + fmt(dtw_err, 3));

  double soft_err = 0.0;
  for (int r = 0; r < 200; ++r) {
    const std::size_t k = ch(rng);
    const Matrix a = random_matrix(k, mid_len(rng), rng), b = random_matrix(k, mid_len(rng), rng);
    soft_err = std::max(soft_err, std::abs(baselines::soft_dtw(a, b, 1e-4) - baselines::dtw_distance(a, b)));
  }
  c.require(soft_err < 1e-2, "soft_dtw(1e-4) vs dtw");
  c.note("soft-dtw max gap " + fmt(soft_err, 3));

  std::size_t monotone = 0;
  for (int r = 0; r < 50; ++r) {
    std::vector<Matrix> seqs;
    const std::size_t n = 3 + r % 5, k = ch(rng);
    for (std::size_t i = 0; i < n; ++i) seqs.push_back(random_matrix(k, mid_len(rng), rng));
    const auto obj = baselines::dba(seqs).objective;
    bool ok = true;
    for (std::size_t i = 1; i < obj.size(); ++i) ok = ok && obj[i] <= obj[i - 1] * (1.0 + 1e-12);
    monotone += ok;
  }
  c.require(monotone == 50, "dba objective non-increasing");
  c.note("dba non-increasing on " + std::to_string(monotone) + "/50");
}

// ---------------------------------------------------------------------------
// 4. Synthetic end-to-end

data::SyntheticSpec synthetic_spec(std::uint64_t seed) {
  data::SyntheticSpec s;
  s.n_videos = 40;
  s.channels = 8;
  s.min_length = 60;
  s.max_length = 140;
  s.warp_scale = 1.0;
  s.noise_scale = 0.05;
  s.seed = seed;
  return s;
}

void end_to_end(Checks& c) {
  const auto cls = data::class_data(data::generate_synthetic(synthetic_spec(0)), "synthetic");
  auto config = pipeline::desk_run_config();
  const auto trained = pipeline::train_class(cls, config);
  const double ratio = trained.history.back().losses.icae / trained.history.front().losses.icae;
  const auto tpl_metrics = pipeline::class_metrics(cls, pipeline::align_class(cls, config, &trained.model));
  config.method = pipeline::Method::euclidean;
  const auto euclid = pipeline::class_metrics(cls, pipeline::align_class(cls, config));
  c.require(ratio < 0.2, "final ICAE < 0.2 x epoch-0 ICAE");
  c.require(*tpl_metrics.cbc >= 0.90, "CBC >= 0.90");
  c.require(*tpl_metrics.plp >= 0.85, "PLP >= 0.85");
  c.require(*tpl_metrics.cbc > *euclid.cbc, "TPL CBC > Euclidean CBC");
  c.note("train/val " + std::to_string(cls.train.size()) + "/" + std::to_string(cls.val.size()));
  c.note("ICAE ratio " + fmt(ratio, 3));
  c.note("CBC " + fmt(*tpl_metrics.cbc) + " (Euclidean " + fmt(*euclid.cbc) + ")");
  c.note("PLP " + fmt(*tpl_metrics.plp));
}

// ---------------------------------------------------------------------------
// 5. Ablation ordering

void ablation(Checks& c) {
  struct Row {
    std::uint64_t seed;
    double full, align_only, no_decoder;
  };
  std::vector<Row> rows;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto cls = data::class_data(data::generate_synthetic(synthetic_spec(seed)), "synthetic");
    auto cbc_of = [&](dmtae::Ablation a) {
      auto config = pipeline::desk_run_config();
      config.train.seed = seed;
      config.ablation = a;
      const auto trained = pipeline::train_class(cls, config);
      const auto align = pipeline::align_class(cls, config, &trained.model);
      return metrics::cbc(pipeline::labels_of(cls.train), align.train);
    };
    rows.push_back({seed, cbc_of({}), cbc_of({true, false, false}), cbc_of({false, true, false})});
  }
  std::ostringstream table;
  table << "| seed | full TPL | align-only | no-decoder | ordering |\n|---|---|---|---|---|\n";
  std::size_t held = 0;
  for (const auto& r : rows) {
    const bool ok = r.full >= r.align_only && r.full >= r.no_decoder;
    held += ok;
    table << "| " << r.seed << " | " << fmt(r.full) << " | " << fmt(r.align_only) << " | " << fmt(r.no_decoder)
          << " | " << (ok ? "holds" : "violated") << " |\n";
  }
  std::cout << "\nAblation table (CBC on the train split):\n" << table.str() << '\n';
  tpl::io::write_text_atomic("ablation_table.md", table.str());
  c.require(held >= 4, "ordering on >= 4 of 5 seeds");
  c.note("ordering holds on " + std::to_string(held) + "/5 seeds");
}

// ---------------------------------------------------------------------------
// 6. Retrieval scaling

void retrieval(Checks& c) {
  data::SyntheticSpec spec;
  spec.n_videos = 50;
  spec.min_length = spec.max_length = 500;
  const auto cls = data::class_data(data::generate_synthetic(spec), "synthetic");
  const auto trained = pipeline::train_class(cls, pipeline::desk_run_config());
  const auto r = pipeline::retrieval_benchmark(cls, trained.model, 1);
  const double share = static_cast<double>(r.synced_comparisons) / static_cast<double>(r.full_comparisons);
  const double speedup = r.full_seconds / r.synced_seconds;
  c.require(share <= 0.10, "synced comparisons <= 10% of full");
  c.require(speedup >= 10.0, "wall time >= 10x faster");
  c.require(std::abs(r.synced_accuracy - r.full_accuracy) <= 0.05, "accuracy within 5 points");
  c.note("comparisons " + std::to_string(r.synced_comparisons) + " vs " + std::to_string(r.full_comparisons) + " (" +
         fmt(100.0 * share, 3) + "%)");
  c.note("speedup " + fmt(speedup, 3) + "x");
  c.note("accuracy synced " + fmt(r.synced_accuracy) + " vs full " + fmt(r.full_accuracy));
}

// ---------------------------------------------------------------------------
// 7. Median-length prototype

void shrinking_guard(Checks& c) {
  std::mt19937_64 rng(707);
  std::uniform_int_distribution<std::size_t> count(2, 12), len(16, 200);
  std::size_t exact = 0;
  for (int r = 0; r < 20; ++r) {
    std::vector<EmbeddingSequence> seqs;
    std::vector<std::size_t> lengths;
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) {
      lengths.push_back(len(rng));
      seqs.push_back({"v" + std::to_string(i), random_matrix(1, lengths.back(), rng), {}});
    }
    auto sorted = lengths;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t median = sorted[(sorted.size() - 1) / 2];
    dmtae::ModelConfig mc;
    mc.channels = 1;
    mc.hidden = 4;
    mc.loc_hidden = 4;
    mc.loc_length = 16;
    mc.loc_bins = 4;
    dmtae::DmtaeModel model(mc, 1);
    dmtae::TrainConfig tc;
    tc.epochs = 1;
    dmtae::train(model, seqs, tc);
    exact += model.prototype_length() == median;
  }
  c.require(exact == 20, "prototype length equals the median");
  c.note("exact on " + std::to_string(exact) + "/20 multisets");
}

// ---------------------------------------------------------------------------
// 8. VAE variant

void vae_checks(Checks& c) {
  std::mt19937_64 rng(808);
  std::vector<EmbeddingSequence> seqs;
  for (std::size_t i = 0; i < 4; ++i) seqs.push_back({"s" + std::to_string(i), random_matrix(3, 20 + 4 * i, rng), {}});
  auto make = [&](dmtae::Variant v) {
    dmtae::ModelConfig mc;
    mc.channels = 3;
    mc.hidden = 8;
    mc.loc_hidden = 8;
    mc.variant = v;
    dmtae::DmtaeModel m(mc, 809);
    std::mt19937_64 head(810);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (double& w : m.head.weight.value) w = u(head);
    m.set_prototype_length(24);
    return m;
  };
  auto standard = make(dmtae::Variant::standard), vae = make(dmtae::Variant::vae);
  dmtae::TrainConfig cfg;
  cfg.beta = cfg.gamma_smooth = cfg.alpha_traj = 0.0;
  const auto a = dmtae::evaluate_batch(standard, seqs, 0.6, cfg, std::nullopt, false).losses;
  const auto b = dmtae::evaluate_batch(vae, seqs, 0.6, cfg, std::nullopt, false).losses;
  c.require(std::abs(a.total - b.total) < 1e-10, "zero-weight VAE equals standard");
  c.note("|total diff| " + fmt(std::abs(a.total - b.total), 3));

  const std::vector<Matrix> zeros(2, Matrix(1, 10, 0.0));
  const std::vector<Matrix> z{random_matrix(1, 10, rng), random_matrix(1, 10, rng)};
  const std::vector<std::vector<std::uint8_t>> all_valid(2);
  c.require(dmtae::vae_losses(zeros, zeros, z, all_valid, 4).kl == 0.0, "KL = 0 at mu = 0, sigma = 1");

  auto masked = seqs;
  for (auto& s : masked) {
    Matrix mask(3, s.length(), 1.0);
    for (std::size_t t = 3; t < 7; ++t) mask(0, t) = 0.0;
    for (std::size_t ch = 0; ch < 3; ++ch) mask(ch, s.length() - 2) = 0.0;
    s.mask = mask;
  }
  auto perturbed = masked;
  for (auto& s : perturbed) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        if (!s.valid(ch, t)) s.data(ch, t) = 1e3 * (1.0 + static_cast<double>(t));
      }
    }
  }
  dmtae::TrainConfig full;
  full.beta = 0.2;
  full.gamma_smooth = 0.1;
  full.alpha_traj = 0.05;
  full.subsample = 8;
  bool unchanged = true;
  for (auto* model : {&standard, &vae}) {
    const auto p = dmtae::evaluate_batch(*model, masked, 0.6, full, 11, false).losses;
    const auto q = dmtae::evaluate_batch(*model, perturbed, 0.6, full, 11, false).losses;
    unchanged = unchanged && p.icae == q.icae && p.rec == q.rec && p.kl == q.kl && p.smooth == q.smooth &&
                p.traj_var == q.traj_var && p.total == q.total;
  }
  c.require(unchanged, "masked entries leave every loss bit-unchanged");
}

// ---------------------------------------------------------------------------
// 9. Formats

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

void formats(Checks& c) {
  std::mt19937_64 rng(909);
  EmbeddingSequence seq{"clip", random_matrix(4, 33, rng), {}};
  for (double& v : seq.data.data()) v = static_cast<double>(static_cast<float>(v));
  const auto bytes = data::encode_embedding(seq);
  c.require(data::encode_embedding(data::decode_embedding(bytes)) == bytes, "embedding byte round trip");
  auto masked = seq;
  masked.mask = Matrix(4, 33, 1.0);
  (*masked.mask)(2, 7) = 0.0;
  masked.data(2, 7) = std::numeric_limits<double>::quiet_NaN();
  const auto mbytes = data::encode_embedding(masked);
  c.require(data::encode_embedding(data::decode_embedding(mbytes)) == mbytes, "masked embedding byte round trip");

  const auto dir = std::filesystem::temp_directory_path() / "tpl_acceptance_formats";
  std::filesystem::create_directories(dir);
  data::save_embedding(dir / "clip.tple", seq);
  c.require(tpl::io::read_file(dir / "clip.tple") == bytes, "embedding file bytes");
  c.require(data::load_embedding(dir / "clip.tple").data == seq.data, "embedding file values");

  data::PhaseAnnotation ann;
  ann.video_id = "clip";
  ann.action = "jump";
  ann.length = 6;
  ann.phase_labels.labels = {0, 0, 0, 1, 1, 1};
  ann.key_events = {{"start", 0}, {"takeoff", 3}, {"end", 5}};
  ann.split = "val";
  c.require(data::parse_annotation(data::annotation_to_json(ann)) == ann, "annotation semantic round trip");
  data::save_annotation(dir / "clip.json", ann);
  c.require(data::load_annotation(dir / "clip.json") == ann, "annotation file round trip");
  std::filesystem::remove_all(dir);

  auto corrupt = [&](std::size_t offset, std::uint8_t value) {
    auto b = bytes;
    b[offset] = value;
    return error_of([&] { data::decode_embedding(b); });
  };
  c.require(corrupt(0, 'X').find("magic") != std::string::npos, "bad magic rejected");
  c.require(corrupt(4, 9).find("version") != std::string::npos, "bad version rejected");
  auto zero_channels = bytes;
  std::fill(zero_channels.begin() + 6, zero_channels.begin() + 10, 0);
  c.require(error_of([&] { data::decode_embedding(zero_channels); }).find("zero channels") != std::string::npos,
            "C = 0 rejected");
  c.require(corrupt(14, 7).find("dtype") != std::string::npos, "bad dtype rejected");
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 5);
  c.require(error_of([&] { data::decode_embedding(truncated); }).find("truncated") != std::string::npos &&
                error_of([&] { data::decode_embedding(truncated); }).find("offset") != std::string::npos,
            "truncation reported with offset");
  auto nonfinite = seq;
  nonfinite.data(1, 4) = std::numeric_limits<double>::infinity();
  c.require(!error_of([&] { data::decode_embedding(data::encode_embedding(nonfinite)); }).empty(),
            "non-finite valid value rejected");
  c.require(!error_of([&] { data::parse_annotation(R"({"video_id":"a","length":3,"phase_labels":[0,1]})"); }).empty(),
            "annotation length mismatch rejected");
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  void (*run)(Checks&);
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "CPAB correctness suite", 30, cpab_suite},
      {2, "differentiation suite", 120, differentiation_suite},
      {3, "baseline oracles", 120, baseline_suite},
      {4, "synthetic end-to-end", 600, end_to_end},
      {5, "ablation ordering", 0, ablation},
      {6, "retrieval scaling", 0, retrieval},
      {7, "median-length prototype", 0, shrinking_guard},
      {8, "VAE variant", 0, vae_checks},
      {9, "format round trips", 0, formats},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failed = 0;
  for (const auto& cr : criteria) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    Checks checks;
    const auto start = Clock::now();
    try {
      cr.run(checks);
    } catch (const std::exception& e) {
      checks.require(false, std::string("exception: ") + e.what());
    }
    const double elapsed = seconds_since(start);
    if (cr.budget_seconds > 0) checks.require(elapsed < cr.budget_seconds, "runtime budget " + fmt(cr.budget_seconds) + " s");
    failed += !checks.ok();
    std::cout << (checks.ok() ? "PASS" : "FAIL") << "  criterion " << cr.id << ": " << cr.name << " | "
              << checks.summary() << " | " << fmt(elapsed, 3) << " s" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
