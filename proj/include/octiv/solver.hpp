#pragma once

// Variational inverse reconstruction: first-order optimization of the
// parameter maps against the composite loss, with the measured B-scan as
// data. Iterations are sequential; each iteration parallelizes across
// columns. All state is deterministic given the seeds, so runs are
// bit-reproducible for any thread count.
//
// Bounds are kept either by optimizing unconstrained fields u with
//   n = 1 + sigmoid(u_n), mu_s = 1e4 * softplus(u_mus), g = 0.999 * sigmoid(u_g)
// (default; keeps Adam unconstrained), or by clamping after each step.

#include "octiv/ehf.hpp"
#include "octiv/field.hpp"
#include "octiv/losses.hpp"
#include "octiv/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace octiv {

enum class BoundsMode { Clamp, SigmoidReparam };
enum class InitMode { Constants, FromMaps };

struct SolverConfig {
  int max_iters = 2000;
  double step_size = 1e-2;     // on the reparameterized fields
  double step_scale_n = 1.0;   // per-channel multipliers on step_size;
  double step_scale_mus = 1.0; // 0 freezes a channel at its initial value
  double step_scale_g = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999; // beta1 = beta2 = 0 degenerates to plain gradient descent
  double adam_eps = 1e-8;
  int patience = 20;                  // consecutive low-improvement iterations before stop
  double min_rel_improvement = 1e-9;
  BoundsMode bounds_mode = BoundsMode::SigmoidReparam;
  InitMode init_mode = InitMode::Constants;
  double init_n = 1.38;
  std::optional<double> init_mus; // unset: per-column Beer-Lambert slope estimate / 2
  double init_g = 0.9;
  bool normalize_input = true; // scale measured to max 1 before optimizing
  int diff_draws = 4;          // noise draws when none are supplied externally
  uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    require(max_iters >= 1, "SolverConfig: max_iters must be >= 1");
    require(std::isfinite(step_size) && step_size > 0.0, "SolverConfig: step_size must be > 0");
    require(std::isfinite(step_scale_n) && step_scale_n >= 0.0 && std::isfinite(step_scale_mus) &&
                step_scale_mus >= 0.0 && std::isfinite(step_scale_g) && step_scale_g >= 0.0,
            "SolverConfig: step scales must be >= 0");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
            "SolverConfig: Adam betas must be in [0, 1)");
    require(std::isfinite(adam_eps) && adam_eps > 0.0, "SolverConfig: adam_eps must be > 0");
    require(patience >= 1, "SolverConfig: patience must be >= 1");
    require(diff_draws >= 1, "SolverConfig: diff_draws must be >= 1");
  }
};

struct InversionResult {
  ParameterMaps maps;
  ScalarField denoised_intensity; // forward-model output at the returned maps
  std::vector<LossBreakdown> loss_history;
  int iterations_run = 0;
  bool converged = false;
};

namespace detail {

constexpr double kMusScale = 1e4; // softplus output scale: mu_s of O(1e4)/m maps to u of O(1)

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double inv_sigmoid(double p) { return std::log(p / (1.0 - p)); }

inline double inv_softplus(double y) { return y > 20.0 ? y : std::log(std::expm1(y)); }

inline double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// u <-> maps transforms for SigmoidReparam.
inline void encode_maps(const ParameterMaps& m, ParameterMaps& u) {
  for (size_t i = 0; i < m.n.size(); ++i) {
    u.n[i] = inv_sigmoid(clamp(m.n[i] - 1.0, 1e-9, 1.0 - 1e-9));
    u.mu_s[i] = inv_softplus(std::max(m.mu_s[i] / kMusScale, 1e-9));
    u.g[i] = inv_sigmoid(clamp(m.g[i] / MapBounds::g_max, 1e-9, 1.0 - 1e-9));
  }
}

inline void decode_maps(const ParameterMaps& u, ParameterMaps& m) {
  for (size_t i = 0; i < u.n.size(); ++i) {
    m.n[i] = 1.0 + sigmoid(u.n[i]);
    m.mu_s[i] = kMusScale * softplus(u.mu_s[i]);
    m.g[i] = MapBounds::g_max * sigmoid(u.g[i]);
  }
}

// dL/du from dL/dmaps at u (elementwise chain through the reparameterization).
inline void chain_to_u(const ParameterMaps& u, const ParameterMaps& g_maps, ParameterMaps& g_u) {
  for (size_t i = 0; i < u.n.size(); ++i) {
    const double sn = sigmoid(u.n[i]);
    const double sg = sigmoid(u.g[i]);
    g_u.n[i] = g_maps.n[i] * sn * (1.0 - sn);
    g_u.mu_s[i] = g_maps.mu_s[i] * kMusScale * sigmoid(u.mu_s[i]);
    g_u.g[i] = g_maps.g[i] * MapBounds::g_max * sg * (1.0 - sg);
  }
}

// Per-column scattering seed from the Beer-Lambert decay of the measured
// A-line: fit ln I against depth, mu_s ~ -slope/2.
inline std::vector<double> estimate_mus_columns(const ScalarField& measured) {
  const int w = measured.width(), h = measured.height();
  std::vector<double> out(static_cast<size_t>(w), 1e3);
  for (int x = 0; x < w; ++x) {
    double cmax = 0.0;
    for (int k = 0; k < h; ++k) cmax = std::max(cmax, measured(x, k));
    if (cmax <= 0.0) continue;
    double sz = 0.0, sy = 0.0, szz = 0.0, szy = 0.0;
    int m = 0;
    for (int k = 0; k < h; ++k) {
      const double v = measured(x, k);
      if (v <= 1e-6 * cmax) continue;
      const double z = (k + 1) * measured.pitch_z();
      const double y = std::log(v);
      sz += z;
      sy += y;
      szz += z * z;
      szy += z * y;
      ++m;
    }
    if (m < 3) continue;
    const double denom = m * szz - sz * sz;
    if (denom <= 0.0) continue;
    const double slope = (m * szy - sz * sy) / denom;
    out[static_cast<size_t>(x)] = clamp(-slope / 2.0, 10.0, 5e4);
  }
  return out;
}

} // namespace detail

/// Runs the inversion. When lambda1 > 0 truth must be given; when lambda4 > 0
/// providers must be given (noise draws are generated from cfg.seed when not
/// supplied). init_maps is required in FromMaps mode. Throws
/// std::runtime_error with the iteration index if the loss turns non-finite.
inline InversionResult invert(const ScalarField& measured, const SolverConfig& cfg,
                              const ForwardConfig& fwd_cfg, const LossWeights& weights,
                              const ParameterMaps* truth = nullptr,
                              const std::array<const ScoreProvider*, 3>& providers = {},
                              const DiffDraws* draws = nullptr,
                              const ParameterMaps* init_maps = nullptr) {
  cfg.validate();
  weights.validate();
  require(measured.min() >= 0.0, "invert: measured intensities must be >= 0");
  if (weights.lambda1 > 0.0)
    require(truth != nullptr, "invert: lambda1 > 0 requires ground-truth maps");
  if (weights.lambda4 > 0.0) {
    for (int c = 0; c < 3; ++c) {
      const double om = c == 0 ? weights.omega_n : (c == 1 ? weights.omega_mus : weights.omega_g);
      if (om > 0.0)
        require(providers[static_cast<size_t>(c)] != nullptr,
                "invert: lambda4 > 0 requires score providers");
    }
  }
  if (cfg.init_mode == InitMode::FromMaps)
    require(init_maps != nullptr, "invert: FromMaps initialization requires maps");

  // Work on a max-normalized copy so the forward-consistency term is O(1).
  ScalarField work = measured;
  if (cfg.normalize_input) {
    const double mx = measured.max();
    if (mx > 0.0)
      for (size_t i = 0; i < work.size(); ++i) work[i] /= mx;
  }

  DiffDraws local_draws;
  if (weights.lambda4 > 0.0 && draws == nullptr) {
    local_draws = make_noise_draws(derive_stream(cfg.seed, 0x64726177ULL), cfg.diff_draws);
    draws = &local_draws;
  }

  // Initial maps.
  const int w = measured.width(), h = measured.height();
  ParameterMaps maps;
  if (cfg.init_mode == InitMode::FromMaps) {
    require(init_maps->width() == w && init_maps->height() == h,
            "invert: initial maps shape mismatch");
    maps = maps_clamp(*init_maps);
  } else {
    maps = ParameterMaps::filled(w, h, measured.pitch_x(), measured.pitch_z(), cfg.init_n,
                                 0.0, cfg.init_g);
    if (cfg.init_mus) {
      for (size_t i = 0; i < maps.mu_s.size(); ++i) maps.mu_s[i] = *cfg.init_mus;
    } else {
      const auto est = detail::estimate_mus_columns(work);
      for (int k = 0; k < h; ++k)
        for (int x = 0; x < w; ++x) maps.mu_s(x, k) = est[static_cast<size_t>(x)];
    }
  }

  // Optimization state: u is the maps themselves (Clamp) or their
  // reparameterization (SigmoidReparam).
  const bool reparam = cfg.bounds_mode == BoundsMode::SigmoidReparam;
  ParameterMaps u = zero_maps_like(measured);
  if (reparam) {
    detail::encode_maps(maps, u);
    detail::decode_maps(u, maps);
  } else {
    u.n = maps.n;
    u.mu_s = maps.mu_s;
    u.g = maps.g;
  }

  LossInputs inputs;
  inputs.truth = truth;
  inputs.measured = &work;
  inputs.forward = fwd_cfg;
  inputs.providers = providers;
  inputs.draws = weights.lambda4 > 0.0 ? draws : nullptr;
  inputs.threads = cfg.threads;

  ParameterMaps adam_m = zero_maps_like(measured);
  ParameterMaps adam_v = zero_maps_like(measured);
  ParameterMaps g_u = zero_maps_like(measured);
  const bool plain_gd = cfg.adam_beta1 == 0.0 && cfg.adam_beta2 == 0.0;

  InversionResult result;
  ParameterMaps best_u = u;
  double best_total = std::numeric_limits<double>::infinity();
  double prev_total = std::numeric_limits<double>::infinity();
  int low_improvement_streak = 0;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    if (reparam) {
      detail::decode_maps(u, maps);
    } else {
      // u is kept inside the bounds by the projection after each step.
      maps.n = u.n;
      maps.mu_s = u.mu_s;
      maps.g = u.g;
    }
#ifndef NDEBUG
    maps.validate();
#endif
    const LossResult res = loss_total(maps, weights, inputs);
    const double total = res.breakdown.total;
    if (!std::isfinite(total))
      throw std::runtime_error("invert: non-finite loss at iteration " + std::to_string(iter));
    result.loss_history.push_back(res.breakdown);
    if (total < best_total) {
      best_total = total;
      best_u = u;
    }

    if (total <= 1e-30) { // exact fixed point, nothing left to improve
      result.converged = true;
      break;
    }
    if (std::isfinite(prev_total)) {
      const double rel = (prev_total - total) / std::max(std::abs(prev_total), 1e-300);
      low_improvement_streak = rel < cfg.min_rel_improvement ? low_improvement_streak + 1 : 0;
      if (low_improvement_streak >= cfg.patience) {
        result.converged = true;
        break;
      }
    }
    prev_total = total;

    if (reparam)
      detail::chain_to_u(u, res.gradient, g_u);
    else
      g_u = res.gradient;

    const std::array<ScalarField*, 3> us{&u.n, &u.mu_s, &u.g};
    const std::array<const ScalarField*, 3> gs{&g_u.n, &g_u.mu_s, &g_u.g};
    const std::array<ScalarField*, 3> ms{&adam_m.n, &adam_m.mu_s, &adam_m.g};
    const std::array<ScalarField*, 3> vs{&adam_v.n, &adam_v.mu_s, &adam_v.g};
    const std::array<double, 3> steps{cfg.step_size * cfg.step_scale_n,
                                      cfg.step_size * cfg.step_scale_mus,
                                      cfg.step_size * cfg.step_scale_g};
    if (plain_gd) {
      for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < us[c]->size(); ++i) (*us[c])[i] -= steps[c] * (*gs[c])[i];
    } else {
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, iter + 1);
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, iter + 1);
      for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < us[c]->size(); ++i) {
          const double g = (*gs[c])[i];
          double& m = (*ms[c])[i];
          double& v = (*vs[c])[i];
          m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
          v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
          (*us[c])[i] -= steps[c] * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
    }
    if (!reparam) { // projected step
      for (size_t i = 0; i < u.n.size(); ++i) {
        u.n[i] = detail::clamp(u.n[i], MapBounds::n_min, MapBounds::n_max);
        u.mu_s[i] = std::max(u.mu_s[i], MapBounds::mus_min);
        u.g[i] = detail::clamp(u.g[i], MapBounds::g_min, MapBounds::g_max);
      }
    }
  }
  result.iterations_run = static_cast<int>(result.loss_history.size());

  if (reparam) {
    detail::decode_maps(best_u, maps);
  } else {
    maps.n = best_u.n;
    maps.mu_s = best_u.mu_s;
    maps.g = best_u.g;
  }
  result.maps = maps;
  result.denoised_intensity =
      forward_bscan(maps, fwd_cfg, &work, cfg.threads).intensity;
  return result;
}

// ---------------------------------------------------------------------------
// Ablation: the same inversion under named loss-weight variants.

struct AblationVariant {
  std::string name;
  LossWeights weights;
};

/// Maps a variant name onto the base weights: full (unchanged), no_tv
/// (lambda3 = 0), no_physics (lambda2 = 0), no_diff (lambda4 = 0), baseline
/// (supervised MSE only).
inline LossWeights ablation_weights(const std::string& name, const LossWeights& base) {
  LossWeights w = base;
  if (name == "full") return w;
  if (name == "no_tv") {
    w.lambda3 = 0.0;
    return w;
  }
  if (name == "no_physics") {
    w.lambda2 = 0.0;
    return w;
  }
  if (name == "no_diff") {
    w.lambda4 = 0.0;
    return w;
  }
  if (name == "baseline") {
    w.lambda1 = base.lambda1 > 0.0 ? base.lambda1 : 1.0;
    w.lambda2 = w.lambda3 = w.lambda4 = 0.0;
    return w;
  }
  throw std::invalid_argument("unknown ablation variant: " + name);
}

struct AblationInputs {
  ScalarField measured;
  SolverConfig solver;
  ForwardConfig forward;
  const ParameterMaps* truth = nullptr;           // enables per-channel metrics
  const ScalarField* clean_intensity = nullptr;   // reference for intensity metrics
  std::array<const ScoreProvider*, 3> providers{};
  const DiffDraws* draws = nullptr;
};

struct AblationRow {
  std::string name;
  InversionResult result;
  double maps_tv = 0.0;               // TV of the recovered maps
  std::vector<MetricReport> metrics;  // intensity first (if reference), then n, mu_s, g
};

/// data_range conventions for map metrics: n spans its bound width 1, g spans
/// 0.999, mu_s spans the truth channel's value range (floored at 1 to guard
/// constant truth).
inline std::vector<MetricReport> evaluate_maps(const ParameterMaps& got,
                                               const ParameterMaps& want) {
  const double mus_span = std::max(want.mu_s.max() - want.mu_s.min(), 1.0);
  return {evaluate_channel(Channel::N, got.n, want.n, MapBounds::n_max - MapBounds::n_min),
          evaluate_channel(Channel::MuS, got.mu_s, want.mu_s, mus_span),
          evaluate_channel(Channel::G, got.g, want.g, MapBounds::g_max)};
}

/// Intensity compared after each image is scaled to [0, 1] by its own max, so
/// the comparison is insensitive to global gain.
inline MetricReport evaluate_intensity(const ScalarField& got, const ScalarField& want) {
  auto unit = [](const ScalarField& f) {
    ScalarField out = f;
    const double mx = f.max();
    if (mx > 0.0)
      for (size_t i = 0; i < out.size(); ++i) out[i] /= mx;
    return out;
  };
  return evaluate_channel(Channel::Intensity, unit(got), unit(want), 1.0);
}

inline std::vector<AblationRow> ablate(const std::vector<AblationVariant>& variants,
                                       const AblationInputs& in) {
  require(variants.size() >= 2, "ablate: need at least two variants");
  std::vector<AblationRow> rows;
  rows.reserve(variants.size());
  for (const auto& v : variants) {
    AblationRow row;
    row.name = v.name;
    row.result =
        invert(in.measured, in.solver, in.forward, v.weights, in.truth, in.providers, in.draws);
    row.maps_tv = loss_tv(row.result.maps).value;
    if (in.clean_intensity != nullptr)
      row.metrics.push_back(evaluate_intensity(row.result.denoised_intensity, *in.clean_intensity));
    if (in.truth != nullptr) {
      auto mm = evaluate_maps(row.result.maps, *in.truth);
      row.metrics.insert(row.metrics.end(), mm.begin(), mm.end());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace octiv
