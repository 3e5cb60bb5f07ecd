#pragma once

// Differentiable extended Huygens-Fresnel forward model for OCT intensity.
//
// The mean squared amplitude at depth z in a medium with scattering
// coefficient mu_s, refractive index n and anisotropy g is modeled as the sum
// of a single-scattering term, a multiple-forward-scattering term and their
// coherent cross term, normalized by the focused beam area:
//
//   I(z) = (1/wH^2) * [ exp(-2 mu_s z)
//                       + 4 exp(-mu_s z)(1 - exp(-mu_s z)) / (1 + wS^2/wH^2)
//                       + (1 - exp(-mu_s z))^2 * wH^2/wS^2 ]
//   wH^2(z) = w0^2 [ ((z - z_f)/(2 n z_R))^2 + 1 ]
//   wS^2(z) = wH^2(z) + (1/3)(mu_s z) thetaRMS^2 (z/n)^2,  thetaRMS = sqrt(2(1-g))
//
// For depth-varying media the product mu_s*z generalizes to the cumulative
// optical thickness tau(z) accumulated down the A-line, with the local n and g
// at each pixel entering wH and wS. In a homogeneous column tau == mu_s*z and
// the column reduces exactly to the scalar formula. Depths are geometric; no
// interface refraction enters the beam geometry.

#include "octiv/field.hpp"
#include "octiv/parallel.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace octiv {

/// RMS forward-scattering angle sqrt(2(1-g)); monotone decreasing in g.
inline double theta_rms(double g) {
  require(std::isfinite(g) && g >= 0.0 && g <= 1.0, "theta_rms: g must be in [0, 1]");
  return std::sqrt(2.0 * (1.0 - g));
}

/// Squared beam waist without forward scattering, wH^2(z).
inline double w_h_sq(double z, double n, const BeamParams& beam) {
  beam.validate();
  require(std::isfinite(z), "w_h_sq: z must be finite");
  require(std::isfinite(n) && n >= 1.0, "w_h_sq: n must be >= 1");
  const double u = (z - beam.z_f) / (2.0 * n * beam.z_r);
  return beam.w0 * beam.w0 * (u * u + 1.0);
}

/// Squared beam waist broadened by multiple forward scattering, wS^2(z).
inline double w_s_sq(double z, double n, double mu_s, double g, const BeamParams& beam) {
  require(std::isfinite(mu_s) && mu_s >= 0.0, "w_s_sq: mu_s must be >= 0");
  const double th = theta_rms(g);
  const double zn = z / n;
  return w_h_sq(z, n, beam) + (1.0 / 3.0) * (mu_s * z) * th * th * zn * zn;
}

namespace detail {

// tau-parameterized pixel model: value and partials w.r.t. (tau, n, g) at
// fixed depth z. Written with S expanded as H + (2/3) tau (1-g) (z/n)^2 so a
// single chain covers both the homogeneous and the cumulative case.
struct EhfPoint {
  double value;
  double d_tau;
  double d_n;
  double d_g;
};

inline EhfPoint ehf_point(double tau, double n, double g, double z, const BeamParams& beam) {
  const double w0 = beam.w0, zr = beam.z_r, zf = beam.z_f;
  const double u = (z - zf) / (2.0 * n * zr);
  const double H = w0 * w0 * (u * u + 1.0);
  const double zn2 = (z / n) * (z / n);
  const double S = H + (2.0 / 3.0) * tau * (1.0 - g) * zn2;
  const double E = std::exp(-tau);
  const double omE = 1.0 - E;
  const double HS = H + S;

  EhfPoint p;
  p.value = E * E / H + 4.0 * E * omE / HS + omE * omE / S;

  const double fE = 2.0 * E / H + 4.0 * (1.0 - 2.0 * E) / HS - 2.0 * omE / S;
  const double fH = -E * E / (H * H) - 4.0 * E * omE / (HS * HS);
  const double fS = -4.0 * E * omE / (HS * HS) - omE * omE / (S * S);

  const double dH_dn = -w0 * w0 * (z - zf) * (z - zf) / (2.0 * n * n * n * zr * zr);
  const double dS_dn = dH_dn - (4.0 / 3.0) * tau * (1.0 - g) * z * z / (n * n * n);
  const double dS_dtau = (2.0 / 3.0) * (1.0 - g) * zn2;
  const double dS_dg = -(2.0 / 3.0) * tau * zn2;

  p.d_tau = -E * fE + dS_dtau * fS;
  p.d_n = fH * dH_dn + fS * dS_dn;
  p.d_g = fS * dS_dg;
  return p;
}

} // namespace detail

/// Scalar forward model for a homogeneous medium. Strictly positive; reduces
/// to 1/wH^2(z) at mu_s = 0 or z = 0.
inline double ehf_intensity_homogeneous(double z, double n, double mu_s, double g,
                                        const BeamParams& beam) {
  beam.validate();
  require(std::isfinite(z) && z >= 0.0, "ehf_intensity_homogeneous: z must be >= 0");
  require(std::isfinite(n) && n >= 1.0, "ehf_intensity_homogeneous: n must be >= 1");
  require(std::isfinite(mu_s) && mu_s >= 0.0, "ehf_intensity_homogeneous: mu_s must be >= 0");
  require(std::isfinite(g) && g >= 0.0 && g <= 1.0, "ehf_intensity_homogeneous: g must be in [0, 1]");
  return detail::ehf_point(mu_s * z, n, g, z, beam).value;
}

enum class GainMode {
  FixedUnit,             // gain = 1 for every column
  PerColumnLeastSquares, // gain = argmin_c sum_k (c p_k - m_k)^2, floored at eps
};

/// Configuration of the B-scan forward evaluation. depth_origin is the depth
/// of the first pixel row; when unset it defaults to one pitch_z, which makes
/// the per-row cumulative optical thickness equal mu_s*z exactly in
/// homogeneous columns.
struct ForwardConfig {
  BeamParams beam;
  GainMode gain_mode = GainMode::FixedUnit;
  std::optional<double> depth_origin; // meters; nullopt -> pitch_z

  double resolve_depth_origin(double pitch_z) const {
    if (!depth_origin) return pitch_z;
    require(std::isfinite(*depth_origin) && *depth_origin >= 0.0,
            "ForwardConfig: depth_origin must be >= 0");
    return *depth_origin;
  }
};

constexpr double kGainFloor = 1e-12;

struct ForwardOutput {
  ScalarField intensity;             // gain-scaled prediction, >= 0
  std::vector<double> per_column_gain; // length = width, > 0
};

namespace detail {

inline void check_forward_inputs(const ParameterMaps& maps, const ForwardConfig& cfg,
                                 const ScalarField* measured) {
  require(maps.n.same_shape(maps.mu_s) && maps.n.same_shape(maps.g),
          "forward: parameter channels must share shape");
  cfg.beam.validate();
  if (cfg.gain_mode == GainMode::PerColumnLeastSquares) {
    require(measured != nullptr,
            "forward: PerColumnLeastSquares gain requires a measured B-scan");
    require(measured->same_shape(maps.n), "forward: measured shape mismatch");
  }
}

} // namespace detail

/// Evaluates the forward model down every A-line. Row k of column x sits at
/// z_k = depth_origin + k*pitch_z and sees the optical thickness
/// tau_k = sum_{j<=k} mu_s(x,j)*pitch_z.
inline ForwardOutput forward_bscan(const ParameterMaps& maps, const ForwardConfig& cfg,
                                   const ScalarField* measured = nullptr, int threads = 1) {
  detail::check_forward_inputs(maps, cfg, measured);
  const int w = maps.width(), h = maps.height();
  const double pitch_z = maps.n.pitch_z();
  const double z0 = cfg.resolve_depth_origin(pitch_z);

  ForwardOutput out;
  out.intensity = ScalarField(w, h, maps.n.pitch_x(), pitch_z, 0.0);
  out.per_column_gain.assign(w, 1.0);

  parallel_for(static_cast<size_t>(w), threads, [&](size_t xi) {
    const int x = static_cast<int>(xi);
    double tau = 0.0;
    for (int k = 0; k < h; ++k) {
      tau += maps.mu_s(x, k) * pitch_z;
      const double z = z0 + k * pitch_z;
      out.intensity(x, k) =
          detail::ehf_point(tau, maps.n(x, k), maps.g(x, k), z, cfg.beam).value;
    }
    if (cfg.gain_mode == GainMode::PerColumnLeastSquares) {
      double pm = 0.0, pp = 0.0;
      for (int k = 0; k < h; ++k) {
        pm += out.intensity(x, k) * (*measured)(x, k);
        pp += out.intensity(x, k) * out.intensity(x, k);
      }
      const double gain = std::max(pp > 0.0 ? pm / pp : kGainFloor, kGainFloor);
      out.per_column_gain[x] = gain;
      for (int k = 0; k < h; ++k) out.intensity(x, k) *= gain;
    }
  });
  return out;
}

/// Per-pixel partial derivatives of the gain-scaled prediction. d_n and d_g
/// are the full (local) derivatives; mu_s acts through the cumulative
/// thickness, so its diagonal part d_mus_local covers only j == k and
/// adjoint() folds the j < k coupling down each column.
///
/// With least-squares gain the gain itself is treated as held at its
/// closed-form optimum; for the forward-consistency loss this is exact (the
/// gain sits at a stationary point of that loss).
struct ForwardGradients {
  ScalarField intensity;   // gain-scaled prediction (same as forward_bscan)
  ScalarField d_n;         // dI(x,k)/dn(x,k)
  ScalarField d_g;         // dI(x,k)/dg(x,k)
  ScalarField d_tau;       // dI(x,k)/dtau(x,k), gain included
  ScalarField d_mus_local; // dI(x,k)/dmu_s(x,k) = d_tau * pitch_z
  std::vector<double> per_column_gain;

  /// Chains an intensity-space sensitivity into parameter space, accumulating
  /// the mu_s dependence bottom-up: dL/dmu_s(x,j) = pitch * sum_{k>=j} dL/dI(x,k) * d_tau(x,k).
  ParameterMaps adjoint(const ScalarField& d_intensity, int threads = 1) const {
    require(d_intensity.same_shape(d_n), "adjoint: sensitivity shape mismatch");
    const int w = d_n.width(), h = d_n.height();
    const double pitch_z = d_n.pitch_z();
    ParameterMaps out = zero_maps_like(d_n);
    parallel_for(static_cast<size_t>(w), threads, [&](size_t xi) {
      const int x = static_cast<int>(xi);
      double acc = 0.0;
      for (int k = h - 1; k >= 0; --k) {
        out.n(x, k) = d_intensity(x, k) * d_n(x, k);
        out.g(x, k) = d_intensity(x, k) * d_g(x, k);
        acc += d_intensity(x, k) * d_tau(x, k);
        out.mu_s(x, k) = pitch_z * acc;
      }
    });
    return out;
  }
};

inline ForwardGradients forward_gradients(const ParameterMaps& maps, const ForwardConfig& cfg,
                                          const ScalarField* measured = nullptr,
                                          int threads = 1) {
  detail::check_forward_inputs(maps, cfg, measured);
  const int w = maps.width(), h = maps.height();
  const double pitch_x = maps.n.pitch_x(), pitch_z = maps.n.pitch_z();
  const double z0 = cfg.resolve_depth_origin(pitch_z);

  ForwardGradients out;
  out.intensity = ScalarField(w, h, pitch_x, pitch_z, 0.0);
  out.d_n = ScalarField(w, h, pitch_x, pitch_z, 0.0);
  out.d_g = ScalarField(w, h, pitch_x, pitch_z, 0.0);
  out.d_tau = ScalarField(w, h, pitch_x, pitch_z, 0.0);
  out.d_mus_local = ScalarField(w, h, pitch_x, pitch_z, 0.0);
  out.per_column_gain.assign(w, 1.0);

  parallel_for(static_cast<size_t>(w), threads, [&](size_t xi) {
    const int x = static_cast<int>(xi);
    double tau = 0.0;
    std::vector<double> pred(h);
    for (int k = 0; k < h; ++k) {
      tau += maps.mu_s(x, k) * pitch_z;
      const double z = z0 + k * pitch_z;
      const auto p = detail::ehf_point(tau, maps.n(x, k), maps.g(x, k), z, cfg.beam);
      pred[k] = p.value;
      out.d_n(x, k) = p.d_n;
      out.d_g(x, k) = p.d_g;
      out.d_tau(x, k) = p.d_tau;
    }
    double gain = 1.0;
    if (cfg.gain_mode == GainMode::PerColumnLeastSquares) {
      double pm = 0.0, pp = 0.0;
      for (int k = 0; k < h; ++k) {
        pm += pred[k] * (*measured)(x, k);
        pp += pred[k] * pred[k];
      }
      gain = std::max(pp > 0.0 ? pm / pp : kGainFloor, kGainFloor);
    }
    out.per_column_gain[x] = gain;
    for (int k = 0; k < h; ++k) {
      out.intensity(x, k) = pred[k] * gain;
      out.d_n(x, k) *= gain;
      out.d_g(x, k) *= gain;
      out.d_tau(x, k) *= gain;
      out.d_mus_local(x, k) = out.d_tau(x, k) * pitch_z;
    }
  });
  return out;
}

} // namespace octiv
