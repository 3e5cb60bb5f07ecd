#pragma once

// Multiplicative speckle for OCT intensity images.
//
// Fully developed speckle on an intensity image is exponentially distributed
// with unit mean (Goodman), so I_speckled = I * X with X ~ Exp(1). Averaging
// L independent looks replaces X by a Gamma(L, 1/L) variate, still unit mean,
// variance 1/L.

#include "octiv/field.hpp"
#include "octiv/parallel.hpp"
#include "octiv/rng.hpp"

#include <cmath>
#include <cstdint>

namespace octiv {

enum class SpeckleDistribution {
  ExponentialIntensity, // fully developed speckle, Exp(1)
  GammaIntensity,       // L-look averaged, Gamma(looks, 1/looks)
};

struct SpeckleConfig {
  SpeckleDistribution distribution = SpeckleDistribution::ExponentialIntensity;
  double looks = 1.0; // shape L for GammaIntensity, >= 1
  uint64_t seed = 0;

  void validate() const {
    if (distribution == SpeckleDistribution::GammaIntensity)
      require(std::isfinite(looks) && looks >= 1.0, "SpeckleConfig: looks must be >= 1");
  }
};

/// Draws one unit-mean speckle factor. Deterministic in (cfg.seed, x, z)
/// alone, so the factor at a pixel does not depend on image shape, traversal
/// order, or thread count.
inline double speckle_factor(const SpeckleConfig& cfg, int x, int z) {
  Rng rng(derive_stream(cfg.seed, 0x73706b6cULL, static_cast<uint64_t>(static_cast<uint32_t>(x)),
                        static_cast<uint64_t>(static_cast<uint32_t>(z))));
  if (cfg.distribution == SpeckleDistribution::ExponentialIntensity) return rng.exponential();
  return rng.gamma(cfg.looks, 1.0 / cfg.looks);
}

/// Applies multiplicative speckle: out(x,z) = in(x,z) * X(x,z), X unit mean.
/// Input must be non-negative (it is an intensity image).
inline ScalarField apply_speckle(const ScalarField& in, const SpeckleConfig& cfg,
                                 int threads = 1) {
  cfg.validate();
  require(in.min() >= 0.0, "apply_speckle: input intensities must be >= 0");
  ScalarField out(in.width(), in.height(), in.pitch_x(), in.pitch_z(), 0.0);
  parallel_for(static_cast<size_t>(in.height()), threads, [&](size_t zi) {
    const int z = static_cast<int>(zi);
    for (int x = 0; x < in.width(); ++x)
      out(x, z) = in(x, z) * speckle_factor(cfg, x, z);
  });
  return out;
}

} // namespace octiv
