#pragma once

// Core value types shared by every other header: scalar fields on a physical
// grid, the (n, mu_s, g) parameter triple, beam constants and loss weights.
//
// Storage convention (used consistently across the library): row-major with x
// fastest, so index(x, z) = z * width + x. z is the depth row index and
// increases downward; an A-line is one column x. All arithmetic is float64;
// the on-disk format narrows to float32 (see io.hpp).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace octiv {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

/// A 2-D grid of one physical quantity with per-axis pixel pitch in meters.
/// All public constructors validate shape, pitch and finiteness; downstream
/// code may assume every stored value is finite.
class ScalarField {
 public:
  ScalarField() : width_(1), height_(1), pitch_x_(1e-6), pitch_z_(1e-6), data_(1, 0.0) {}

  ScalarField(int width, int height, double pitch_x, double pitch_z, double fill = 0.0)
      : width_(width), height_(height), pitch_x_(pitch_x), pitch_z_(pitch_z) {
    validate_shape();
    require(std::isfinite(fill), "ScalarField: fill value must be finite");
    data_.assign(static_cast<size_t>(width_) * height_, fill);
  }

  static ScalarField from_data(int width, int height, double pitch_x, double pitch_z,
                               std::vector<double> values) {
    ScalarField f;
    f.width_ = width;
    f.height_ = height;
    f.pitch_x_ = pitch_x;
    f.pitch_z_ = pitch_z;
    f.validate_shape();
    require(values.size() == static_cast<size_t>(width) * height,
            "ScalarField: data length must equal width*height");
    f.data_ = std::move(values);
    f.validate_values();
    return f;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double pitch_x() const { return pitch_x_; }
  double pitch_z() const { return pitch_z_; }
  size_t size() const { return data_.size(); }

  double& operator()(int x, int z) { return data_[static_cast<size_t>(z) * width_ + x]; }
  double operator()(int x, int z) const { return data_[static_cast<size_t>(z) * width_ + x]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const ScalarField& o) const {
    return width_ == o.width_ && height_ == o.height_ &&
           pitch_x_ == o.pitch_x_ && pitch_z_ == o.pitch_z_;
  }

  double min() const { return *std::min_element(data_.begin(), data_.end()); }
  double max() const { return *std::max_element(data_.begin(), data_.end()); }

  void validate_values() const {
    for (double v : data_)
      require(std::isfinite(v), "ScalarField: non-finite value");
  }

 private:
  void validate_shape() const {
    require(width_ >= 1 && height_ >= 1, "ScalarField: width and height must be >= 1");
    require(pitch_x_ > 0 && pitch_z_ > 0 && std::isfinite(pitch_x_) && std::isfinite(pitch_z_),
            "ScalarField: pitches must be positive and finite");
  }

  int width_, height_;
  double pitch_x_, pitch_z_;
  std::vector<double> data_;
};

/// Bounds enforced on parameter maps. g stops short of 1 so the forward
/// model's scattering-angle factor stays away from its degenerate corner.
struct MapBounds {
  static constexpr double n_min = 1.0;
  static constexpr double n_max = 2.0;
  static constexpr double mus_min = 0.0;
  static constexpr double g_min = 0.0;
  static constexpr double g_max = 0.999;
};

/// The unknown of the inverse problem: refractive index n (dimensionless),
/// scattering coefficient mu_s (1/m) and anisotropy g (dimensionless) on a
/// shared grid.
struct ParameterMaps {
  ScalarField n, mu_s, g;

  ParameterMaps() = default;
  ParameterMaps(ScalarField n_, ScalarField mus_, ScalarField g_)
      : n(std::move(n_)), mu_s(std::move(mus_)), g(std::move(g_)) {
    validate();
  }

  static ParameterMaps filled(int w, int h, double px, double pz,
                              double n0, double mus0, double g0) {
    return ParameterMaps(ScalarField(w, h, px, pz, n0),
                         ScalarField(w, h, px, pz, mus0),
                         ScalarField(w, h, px, pz, g0));
  }

  int width() const { return n.width(); }
  int height() const { return n.height(); }

  void validate() const {
    require(n.same_shape(mu_s) && n.same_shape(g),
            "ParameterMaps: channels must share shape and pitch");
    for (size_t i = 0; i < n.size(); ++i) {
      require(n[i] >= MapBounds::n_min && n[i] <= MapBounds::n_max,
              "ParameterMaps: n out of [1, 2]");
      require(mu_s[i] >= MapBounds::mus_min, "ParameterMaps: mu_s must be >= 0");
      require(g[i] >= MapBounds::g_min && g[i] <= MapBounds::g_max,
              "ParameterMaps: g out of [0, 0.999]");
    }
  }
};

/// Zero-filled channel triple on the same grid as ref. Plain storage for
/// per-channel gradients and accumulators; deliberately bypasses the
/// physical-bounds validation (gradients are signed).
inline ParameterMaps zero_maps_like(const ScalarField& ref) {
  ParameterMaps g;
  g.n = ScalarField(ref.width(), ref.height(), ref.pitch_x(), ref.pitch_z(), 0.0);
  g.mu_s = g.n;
  g.g = g.n;
  return g;
}

/// Clamps each channel into its physical range. Idempotent; values already in
/// range pass through unchanged.
inline ParameterMaps maps_clamp(const ParameterMaps& maps) {
  require(maps.n.same_shape(maps.mu_s) && maps.n.same_shape(maps.g),
          "maps_clamp: channels must share shape and pitch");
  ParameterMaps out = maps;
  for (size_t i = 0; i < out.n.size(); ++i) {
    out.n[i] = std::clamp(out.n[i], MapBounds::n_min, MapBounds::n_max);
    out.mu_s[i] = std::max(out.mu_s[i], MapBounds::mus_min);
    out.g[i] = std::clamp(out.g[i], MapBounds::g_min, MapBounds::g_max);
  }
  return out;
}

/// OCT system constants entering the beam-waist model.
struct BeamParams {
  double w0 = 8e-6;    // beam waist radius [m]
  double z_r = 80e-6;  // Rayleigh length [m]
  double z_f = 250e-6; // focal depth [m]

  void validate() const {
    require(std::isfinite(w0) && w0 > 0, "BeamParams: w0 must be > 0");
    require(std::isfinite(z_r) && z_r > 0, "BeamParams: z_R must be > 0");
    require(std::isfinite(z_f) && z_f >= 0, "BeamParams: z_f must be >= 0");
  }
};

/// Weights of the composite objective: lambda1..4 scale the MSE, forward
/// consistency, TV and score-prior terms; omega_* balance the score prior
/// across channels.
struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1e-4;
  double lambda4 = 1e-3;
  double omega_n = 1.0;
  double omega_mus = 1.0;
  double omega_g = 0.3;

  void validate() const {
    const double all[] = {lambda1, lambda2, lambda3, lambda4, omega_n, omega_mus, omega_g};
    for (double v : all)
      require(std::isfinite(v) && v >= 0, "LossWeights: weights must be non-negative");
    require(lambda1 > 0 || lambda2 > 0 || lambda3 > 0 || lambda4 > 0,
            "LossWeights: at least one lambda must be positive");
  }
};

} // namespace octiv
