#pragma once

// The four terms of the composite objective and their gradients with respect
// to the parameter maps:
//
//   total = lambda1 * mse(maps, truth)                 supervised channel MSE
//         + lambda2 * fwd(forward(maps), measured)     forward consistency
//         + lambda3 * tv(maps)                         anisotropic TV
//         + lambda4 * diff(maps)                       score-prior penalty
//
// Every "gradient maps" return is a ParameterMaps used as plain per-channel
// storage (signed values, no bounds). LossBreakdown stores the raw term
// values; the weights enter only in total.

#include "octiv/ehf.hpp"
#include "octiv/field.hpp"
#include "octiv/rng.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace octiv {

struct LossBreakdown {
  double mse = 0.0;
  double fwd = 0.0;
  double tv = 0.0;
  double diff = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Supervised MSE over the three channels, averaged over pixels.

struct MseLoss {
  double value = 0.0;
  ParameterMaps gradient;
};

inline MseLoss loss_mse(const ParameterMaps& pred, const ParameterMaps& truth) {
  require(pred.n.same_shape(truth.n) && pred.mu_s.same_shape(truth.mu_s) &&
              pred.g.same_shape(truth.g),
          "loss_mse: shape mismatch");
  MseLoss out;
  out.gradient = zero_maps_like(pred.n);
  const double inv_n = 1.0 / static_cast<double>(pred.n.size());
  const std::array<const ScalarField*, 3> a{&pred.n, &pred.mu_s, &pred.g};
  const std::array<const ScalarField*, 3> b{&truth.n, &truth.mu_s, &truth.g};
  const std::array<ScalarField*, 3> g{&out.gradient.n, &out.gradient.mu_s, &out.gradient.g};
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < a[c]->size(); ++i) {
      const double d = (*a[c])[i] - (*b[c])[i];
      out.value += d * d * inv_n;
      (*g[c])[i] = 2.0 * d * inv_n;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Forward-consistency MSE in intensity space. The returned sensitivity is
// with respect to the predicted intensity; the caller chains it through the
// forward-model adjoint.

struct FwdLoss {
  double value = 0.0;
  ScalarField d_intensity;
};

inline FwdLoss loss_fwd(const ScalarField& pred_intensity, const ScalarField& measured) {
  require(pred_intensity.same_shape(measured), "loss_fwd: shape mismatch");
  FwdLoss out;
  out.d_intensity = ScalarField(pred_intensity.width(), pred_intensity.height(),
                                pred_intensity.pitch_x(), pred_intensity.pitch_z(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(pred_intensity.size());
  for (size_t i = 0; i < pred_intensity.size(); ++i) {
    const double r = pred_intensity[i] - measured[i];
    out.value += r * r * inv_n;
    out.d_intensity[i] = 2.0 * r * inv_n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Anisotropic total variation: sum over channels of |forward x-diff| +
// |forward z-diff| with replicate boundary (no wraparound; the last
// row/column contributes no difference). The subgradient uses sign(0) = 0.
// The plain sum is the default; normalize divides by the pixel count.

struct TvLoss {
  double value = 0.0;
  ParameterMaps gradient;
};

namespace detail {
inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
} // namespace detail

inline TvLoss loss_tv(const ParameterMaps& maps, bool normalize = false) {
  require(maps.n.same_shape(maps.mu_s) && maps.n.same_shape(maps.g),
          "loss_tv: channels must share shape");
  TvLoss out;
  out.gradient = zero_maps_like(maps.n);
  const int w = maps.width(), h = maps.height();
  const std::array<const ScalarField*, 3> chan{&maps.n, &maps.mu_s, &maps.g};
  const std::array<ScalarField*, 3> grad{&out.gradient.n, &out.gradient.mu_s, &out.gradient.g};
  for (int c = 0; c < 3; ++c) {
    const ScalarField& p = *chan[c];
    ScalarField& gp = *grad[c];
    for (int z = 0; z < h; ++z)
      for (int x = 0; x < w; ++x) {
        if (x + 1 < w) {
          const double d = p(x + 1, z) - p(x, z);
          out.value += std::abs(d);
          const double s = detail::sign(d);
          gp(x + 1, z) += s;
          gp(x, z) -= s;
        }
        if (z + 1 < h) {
          const double d = p(x, z + 1) - p(x, z);
          out.value += std::abs(d);
          const double s = detail::sign(d);
          gp(x, z + 1) += s;
          gp(x, z) -= s;
        }
      }
  }
  if (normalize) {
    const double inv_n = 1.0 / static_cast<double>(maps.n.size());
    out.value *= inv_n;
    for (int c = 0; c < 3; ++c)
      for (size_t i = 0; i < grad[c]->size(); ++i) (*grad[c])[i] *= inv_n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Score-prior penalty. Each channel is normalized to zero mean / unit
// variance, bilinearly resampled to a fixed working resolution, perturbed by
// Gaussian noise at sampled levels sigma, and the provider's score at the
// perturbed field is penalized against the analytic perturbation-kernel score
// -eps/sigma. Gradients flow back through the provider, the resampling and
// the normalization.

/// Pluggable score model s(x_t, sigma) with the input-Jacobian action needed
/// for differentiation.
class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;
  /// Score field at the perturbed input; same shape as x_t, finite values.
  virtual ScalarField score(const ScalarField& x_t, double sigma) const = 0;
  /// v -> (d score / d x_t)^T v.
  virtual ScalarField score_input_vjp(const ScalarField& x_t, double sigma,
                                      const ScalarField& v) const = 0;
};

/// Analytic score of a Gaussian prior N(mean, variance I) seen through the
/// perturbation kernel: the marginal of x + sigma*eps is
/// N(mean, (variance + sigma^2) I), whose score is -(x_t - mean)/(variance +
/// sigma^2). The default (mean 0, variance 1) is the standard-normal prior in
/// normalized space.
class GaussianScoreProvider final : public ScoreProvider {
 public:
  explicit GaussianScoreProvider(double mean = 0.0, double variance = 1.0)
      : scalar_mean_(mean), variance_(variance) {
    require(std::isfinite(mean), "GaussianScoreProvider: mean must be finite");
    require(std::isfinite(variance) && variance > 0.0,
            "GaussianScoreProvider: variance must be > 0");
  }

  GaussianScoreProvider(ScalarField mean, double variance)
      : mean_field_(std::move(mean)), has_field_(true), variance_(variance) {
    require(std::isfinite(variance) && variance > 0.0,
            "GaussianScoreProvider: variance must be > 0");
  }

  ScalarField score(const ScalarField& x_t, double sigma) const override {
    const double inv = 1.0 / (variance_ + sigma * sigma);
    ScalarField out = x_t;
    if (has_field_) {
      require(mean_field_.width() == x_t.width() && mean_field_.height() == x_t.height(),
              "GaussianScoreProvider: mean field shape mismatch");
      for (size_t i = 0; i < out.size(); ++i) out[i] = -(x_t[i] - mean_field_[i]) * inv;
    } else {
      for (size_t i = 0; i < out.size(); ++i) out[i] = -(x_t[i] - scalar_mean_) * inv;
    }
    return out;
  }

  ScalarField score_input_vjp(const ScalarField& /*x_t*/, double sigma,
                              const ScalarField& v) const override {
    const double inv = 1.0 / (variance_ + sigma * sigma);
    ScalarField out = v;
    for (size_t i = 0; i < out.size(); ++i) out[i] = -v[i] * inv;
    return out;
  }

 private:
  ScalarField mean_field_;
  bool has_field_ = false;
  double scalar_mean_ = 0.0;
  double variance_ = 1.0;
};

/// Noise-level distribution: sigma log-uniform in [sigma_min, sigma_max].
struct NoiseSchedule {
  double sigma_min = 0.002;
  double sigma_max = 80.0;

  void validate() const {
    require(std::isfinite(sigma_min) && sigma_min > 0.0 && sigma_max > sigma_min,
            "NoiseSchedule: need 0 < sigma_min < sigma_max");
  }
};

/// Pre-drawn noise for the score penalty: per channel and draw, one sigma and
/// one standard-normal field at the working resolution. Drawing once up front
/// keeps the penalty a fixed deterministic function of the maps, which the
/// finite-difference checks (and reproducible runs) rely on.
struct DiffDraws {
  int target = 256; // working resolution (target x target)
  int n_draws = 0;
  std::array<std::vector<double>, 3> sigma;            // [channel][draw]
  std::array<std::vector<std::vector<double>>, 3> eps; // [channel][draw][pixel]
};

inline DiffDraws make_noise_draws(uint64_t seed, int n_draws,
                                  const NoiseSchedule& schedule = {}, int target = 256) {
  schedule.validate();
  require(n_draws >= 1, "make_noise_draws: need at least one noise draw");
  require(target >= 2, "make_noise_draws: target resolution must be >= 2");
  DiffDraws d;
  d.target = target;
  d.n_draws = n_draws;
  const double lo = std::log(schedule.sigma_min), hi = std::log(schedule.sigma_max);
  const size_t npx = static_cast<size_t>(target) * target;
  for (uint64_t c = 0; c < 3; ++c) {
    d.sigma[c].resize(static_cast<size_t>(n_draws));
    d.eps[c].resize(static_cast<size_t>(n_draws));
    for (uint64_t k = 0; k < static_cast<uint64_t>(n_draws); ++k) {
      Rng rs(derive_stream(seed, 0x7369676dULL, c, k));
      d.sigma[c][k] = std::exp(rs.uniform(lo, hi));
      Rng re(derive_stream(seed, 0x65707364ULL, c, k));
      auto& field = d.eps[c][k];
      field.resize(npx);
      for (auto& v : field) v = re.normal();
    }
  }
  return d;
}

namespace detail {

struct Normalized {
  ScalarField x;      // (p - mean) / scale
  double mean = 0.0;
  double scale = 1.0; // sqrt(var + 1e-12); the epsilon keeps constant maps differentiable
};

inline Normalized normalize_field(const ScalarField& p) {
  Normalized out;
  double mu = 0.0;
  for (size_t i = 0; i < p.size(); ++i) mu += p[i];
  mu /= static_cast<double>(p.size());
  double var = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - mu;
    var += d * d;
  }
  var /= static_cast<double>(p.size());
  out.mean = mu;
  out.scale = std::sqrt(var + 1e-12);
  out.x = p;
  for (size_t i = 0; i < p.size(); ++i) out.x[i] = (p[i] - mu) / out.scale;
  return out;
}

// d/dp of a function of x = (p - mean(p))/sqrt(var(p) + eps):
// g_p = (g_x - mean(g_x) - x * mean(g_x . x)) / scale.
inline ScalarField normalize_backward(const Normalized& nz, const ScalarField& g_x) {
  const size_t n = nz.x.size();
  double m1 = 0.0, m2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    m1 += g_x[i];
    m2 += g_x[i] * nz.x[i];
  }
  m1 /= static_cast<double>(n);
  m2 /= static_cast<double>(n);
  ScalarField out = g_x;
  for (size_t i = 0; i < n; ++i) out[i] = (g_x[i] - m1 - nz.x[i] * m2) / nz.scale;
  return out;
}

// Bilinear resample with half-pixel-center alignment and edge clamping. The
// output keeps the physical extent (pitch scales by in/out).
inline void bilinear_weights(int out_i, int in_n, double scale, int& i0, int& i1, double& f) {
  const double src = (out_i + 0.5) * scale - 0.5;
  const double fl = std::floor(src);
  f = src - fl;
  const int base = static_cast<int>(fl);
  i0 = base < 0 ? 0 : (base > in_n - 1 ? in_n - 1 : base);
  i1 = base + 1 < 0 ? 0 : (base + 1 > in_n - 1 ? in_n - 1 : base + 1);
}

inline ScalarField bilinear_resize(const ScalarField& in, int ow, int oh) {
  const int iw = in.width(), ih = in.height();
  ScalarField out(ow, oh, in.pitch_x() * iw / ow, in.pitch_z() * ih / oh, 0.0);
  const double sx = static_cast<double>(iw) / ow, sz = static_cast<double>(ih) / oh;
  for (int z = 0; z < oh; ++z) {
    int z0, z1;
    double fz;
    bilinear_weights(z, ih, sz, z0, z1, fz);
    for (int x = 0; x < ow; ++x) {
      int x0, x1;
      double fx;
      bilinear_weights(x, iw, sx, x0, x1, fx);
      out(x, z) = (1.0 - fx) * (1.0 - fz) * in(x0, z0) + fx * (1.0 - fz) * in(x1, z0) +
                  (1.0 - fx) * fz * in(x0, z1) + fx * fz * in(x1, z1);
    }
  }
  return out;
}

inline ScalarField bilinear_resize_adjoint(const ScalarField& g_out, int iw, int ih,
                                           double pitch_x, double pitch_z) {
  ScalarField g_in(iw, ih, pitch_x, pitch_z, 0.0);
  const int ow = g_out.width(), oh = g_out.height();
  const double sx = static_cast<double>(iw) / ow, sz = static_cast<double>(ih) / oh;
  for (int z = 0; z < oh; ++z) {
    int z0, z1;
    double fz;
    bilinear_weights(z, ih, sz, z0, z1, fz);
    for (int x = 0; x < ow; ++x) {
      int x0, x1;
      double fx;
      bilinear_weights(x, iw, sx, x0, x1, fx);
      const double g = g_out(x, z);
      g_in(x0, z0) += (1.0 - fx) * (1.0 - fz) * g;
      g_in(x1, z0) += fx * (1.0 - fz) * g;
      g_in(x0, z1) += (1.0 - fx) * fz * g;
      g_in(x1, z1) += fx * fz * g;
    }
  }
  return g_in;
}

} // namespace detail

struct DiffLoss {
  double value = 0.0;
  ParameterMaps gradient;
};

inline DiffLoss loss_diff(const ParameterMaps& maps,
                          const std::array<const ScoreProvider*, 3>& providers,
                          double omega_n, double omega_mus, double omega_g,
                          const DiffDraws& draws) {
  require(maps.n.same_shape(maps.mu_s) && maps.n.same_shape(maps.g),
          "loss_diff: channels must share shape");
  require(maps.width() >= 2 && maps.height() >= 2, "loss_diff: maps smaller than 2x2");
  require(draws.n_draws >= 1, "loss_diff: zero noise draws");

  DiffLoss out;
  out.gradient = zero_maps_like(maps.n);
  const std::array<const ScalarField*, 3> chan{&maps.n, &maps.mu_s, &maps.g};
  const std::array<ScalarField*, 3> grad{&out.gradient.n, &out.gradient.mu_s, &out.gradient.g};
  const std::array<double, 3> omega{omega_n, omega_mus, omega_g};
  const int t = draws.target;
  const size_t npx = static_cast<size_t>(t) * t;

  for (int c = 0; c < 3; ++c) {
    static const char* kChannelNames[3] = {"n", "mu_s", "g"};
    if (omega[c] == 0.0) continue;
    require(providers[c] != nullptr,
            std::string("loss_diff: missing score provider for channel ") + kChannelNames[c]);
    const auto nz = detail::normalize_field(*chan[c]);
    const ScalarField y = detail::bilinear_resize(nz.x, t, t);

    ScalarField g_y(t, t, y.pitch_x(), y.pitch_z(), 0.0);
    double value_c = 0.0;
    for (int d = 0; d < draws.n_draws; ++d) {
      const double sigma = draws.sigma[c][static_cast<size_t>(d)];
      const auto& eps = draws.eps[c][static_cast<size_t>(d)];
      require(eps.size() == npx, "loss_diff: draw resolution mismatch");
      ScalarField x_t = y;
      for (size_t i = 0; i < npx; ++i) x_t[i] += sigma * eps[i];
      const ScalarField s = providers[c]->score(x_t, sigma);
      require(s.width() == t && s.height() == t, "loss_diff: provider returned wrong shape");
      ScalarField resid = s;
      for (size_t i = 0; i < npx; ++i) {
        resid[i] = s[i] + eps[i] / sigma; // s - (-eps/sigma)
        value_c += resid[i] * resid[i];
      }
      const ScalarField vjp = providers[c]->score_input_vjp(x_t, sigma, resid);
      require(vjp.width() == t && vjp.height() == t, "loss_diff: vjp returned wrong shape");
      for (size_t i = 0; i < npx; ++i) g_y[i] += vjp[i];
    }
    const double inv_m = 1.0 / static_cast<double>(draws.n_draws);
    value_c *= inv_m;
    for (size_t i = 0; i < npx; ++i) g_y[i] *= 2.0 * inv_m;

    const ScalarField g_x = detail::bilinear_resize_adjoint(
        g_y, chan[c]->width(), chan[c]->height(), chan[c]->pitch_x(), chan[c]->pitch_z());
    const ScalarField g_p = detail::normalize_backward(nz, g_x);

    out.value += omega[c] * value_c;
    for (size_t i = 0; i < g_p.size(); ++i) (*grad[c])[i] += omega[c] * g_p[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weighted combination.

struct LossInputs {
  const ParameterMaps* truth = nullptr;            // required when lambda1 > 0
  const ScalarField* measured = nullptr;           // required when lambda2 > 0
  ForwardConfig forward;                           // used when lambda2 > 0
  std::array<const ScoreProvider*, 3> providers{}; // required when lambda4 > 0
  const DiffDraws* draws = nullptr;                // required when lambda4 > 0
  bool tv_normalize = false;
  int threads = 1;
};

struct LossResult {
  LossBreakdown breakdown;
  ParameterMaps gradient;
  bool has_prediction = false;
  ScalarField predicted_intensity;      // valid when lambda2 > 0
  std::vector<double> per_column_gain;  // valid when lambda2 > 0
};

inline LossResult loss_total(const ParameterMaps& maps, const LossWeights& w,
                             const LossInputs& in) {
  w.validate();
  LossResult out;
  out.gradient = zero_maps_like(maps.n);
  auto accumulate = [&](const ParameterMaps& g, double lambda) {
    for (size_t i = 0; i < g.n.size(); ++i) {
      out.gradient.n[i] += lambda * g.n[i];
      out.gradient.mu_s[i] += lambda * g.mu_s[i];
      out.gradient.g[i] += lambda * g.g[i];
    }
  };

  if (w.lambda1 > 0.0) {
    require(in.truth != nullptr, "loss_total: lambda1 > 0 requires ground-truth maps");
    const auto m = loss_mse(maps, *in.truth);
    out.breakdown.mse = m.value;
    accumulate(m.gradient, w.lambda1);
  }
  if (w.lambda2 > 0.0) {
    require(in.measured != nullptr, "loss_total: lambda2 > 0 requires a measured B-scan");
    const auto f = forward_gradients(maps, in.forward, in.measured, in.threads);
    const auto fl = loss_fwd(f.intensity, *in.measured);
    out.breakdown.fwd = fl.value;
    accumulate(f.adjoint(fl.d_intensity, in.threads), w.lambda2);
    out.has_prediction = true;
    out.predicted_intensity = f.intensity;
    out.per_column_gain = f.per_column_gain;
  }
  if (w.lambda3 > 0.0) {
    const auto tv = loss_tv(maps, in.tv_normalize);
    out.breakdown.tv = tv.value;
    accumulate(tv.gradient, w.lambda3);
  }
  if (w.lambda4 > 0.0) {
    require(in.draws != nullptr, "loss_total: lambda4 > 0 requires noise draws");
    const auto df = loss_diff(maps, in.providers, w.omega_n, w.omega_mus, w.omega_g, *in.draws);
    out.breakdown.diff = df.value;
    accumulate(df.gradient, w.lambda4);
  }
  out.breakdown.total = w.lambda1 * out.breakdown.mse + w.lambda2 * out.breakdown.fwd +
                        w.lambda3 * out.breakdown.tv + w.lambda4 * out.breakdown.diff;
  return out;
}

} // namespace octiv
