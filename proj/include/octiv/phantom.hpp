#pragma once

// Layered corneal phantom scenes: an ordered stack of homogeneous layers under
// an optionally curved top surface, rasterized onto the acquisition grid as
// ground-truth parameter maps.
//
// Geometry: depth z grows downward from the top of the grid. The anterior
// surface is a circular arc of radius R (0 or +inf = flat) whose apex sits at
// apex_depth below the grid top; at lateral offset dx from the grid center the
// surface is displaced downward by the sag R - sqrt(R^2 - dx^2). Deeper layer
// boundaries follow the surface at constant vertical thickness. Everything
// outside the stack (above the surface, below the last layer) is air/vacuum
// (n=1, mu_s=0, mu_a=0, g=0).

#include "octiv/field.hpp"
#include "octiv/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace octiv {

struct LayerSpec {
  std::string name;
  double thickness = 0.0; // meters
  double n = 1.38;
  double mu_s = 0.0; // 1/m
  double mu_a = 0.0; // 1/m, photon transport only
  double g = 0.9;

  void validate() const {
    require(std::isfinite(thickness) && thickness > 0.0,
            "LayerSpec(" + name + "): thickness must be > 0");
    require(std::isfinite(n) && n >= 1.0 && n <= 2.0, "LayerSpec(" + name + "): n must be in [1, 2]");
    require(std::isfinite(mu_s) && mu_s >= 0.0, "LayerSpec(" + name + "): mu_s must be >= 0");
    require(std::isfinite(mu_a) && mu_a >= 0.0, "LayerSpec(" + name + "): mu_a must be >= 0");
    require(std::isfinite(g) && g >= 0.0 && g <= 0.999,
            "LayerSpec(" + name + "): g must be in [0, 0.999]");
  }
};

struct PhantomScene {
  int width = 0, height = 0;
  double pitch_x = 0.0, pitch_z = 0.0; // meters
  double curvature_radius = 0.0;       // meters; 0 or +inf = flat surface
  double apex_depth = 0.0;             // surface depth at the central column
  std::vector<LayerSpec> layers;
  uint64_t seed = 0;

  bool flat() const { return curvature_radius == 0.0 || std::isinf(curvature_radius); }

  double total_thickness() const {
    double t = 0.0;
    for (const auto& l : layers) t += l.thickness;
    return t;
  }

  double depth_extent() const { return height * pitch_z; }

  /// Downward displacement of the surface at column x relative to the apex.
  double sag(int x) const {
    if (flat()) return 0.0;
    const double dx = (x - 0.5 * (width - 1)) * pitch_x;
    const double r = curvature_radius;
    require(std::abs(dx) < r, "PhantomScene: curvature radius smaller than lateral half-extent");
    return r - std::sqrt(r * r - dx * dx);
  }

  /// Depth of the anterior surface at column x.
  double surface_depth(int x) const { return apex_depth + sag(x); }

  void validate() const {
    require(width > 0 && height > 0, "PhantomScene: grid must be positive");
    require(std::isfinite(pitch_x) && pitch_x > 0.0 && std::isfinite(pitch_z) && pitch_z > 0.0,
            "PhantomScene: pitches must be > 0");
    require(!layers.empty(), "PhantomScene: at least one layer required");
    require(curvature_radius >= 0.0, "PhantomScene: curvature radius must be >= 0");
    require(std::isfinite(apex_depth) && apex_depth >= 0.0,
            "PhantomScene: apex depth must be >= 0");
    for (const auto& l : layers) l.validate();
    // Deepest point of the stack must stay on the grid (edge columns sag most).
    double max_sag = 0.0;
    if (!flat()) max_sag = std::max(sag(0), sag(width - 1));
    require(apex_depth + max_sag + total_thickness() <= depth_extent() + 1e-12,
            "PhantomScene: layers exceed grid depth");
  }
};

/// Rasterizes the scene: each pixel takes the (n, mu_s, g) of the layer
/// containing its center depth (k + 1/2) * pitch_z; air elsewhere.
inline ParameterMaps scene_to_maps(const PhantomScene& scene) {
  scene.validate();
  ParameterMaps maps = ParameterMaps::filled(scene.width, scene.height, scene.pitch_x,
                                             scene.pitch_z, 1.0, 0.0, 0.0);
  for (int x = 0; x < scene.width; ++x) {
    double top = scene.surface_depth(x);
    size_t li = 0;
    double bot = top + scene.layers[0].thickness;
    for (int k = 0; k < scene.height; ++k) {
      const double zc = (k + 0.5) * scene.pitch_z;
      if (zc < top) continue; // air above the surface
      while (li < scene.layers.size() && zc >= bot) {
        top = bot;
        ++li;
        if (li < scene.layers.size()) bot += scene.layers[li].thickness;
      }
      if (li >= scene.layers.size()) break; // air below the stack
      maps.n(x, k) = scene.layers[li].n;
      maps.mu_s(x, k) = scene.layers[li].mu_s;
      maps.g(x, k) = scene.layers[li].g;
    }
  }
  return maps;
}

/// Derives a randomized variant of a base scene for dataset generation.
/// Ranges: thickness x U[0.8, 1.2]; mu_s x U[0.7, 1.3]; g +/- 0.03;
/// n +/- 0.01; curvature radius x U[0.9, 1.1] (flat stays flat). Values are
/// clamped back to their legal ranges. Deterministic in (scene.seed, index).
inline PhantomScene perturb_scene(const PhantomScene& base, uint64_t index) {
  PhantomScene out = base;
  Rng rng(derive_stream(base.seed, 0x7363656eULL, index));
  auto clamp = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };
  for (auto& l : out.layers) {
    l.thickness *= rng.uniform(0.8, 1.2);
    l.mu_s *= rng.uniform(0.7, 1.3);
    l.g = clamp(l.g + rng.uniform(-0.03, 0.03), 0.0, 0.999);
    l.n = clamp(l.n + rng.uniform(-0.01, 0.01), 1.0, 2.0);
  }
  if (!out.flat()) out.curvature_radius *= rng.uniform(0.9, 1.1);
  // Thickened stacks may overrun the grid; shrink uniformly to keep the
  // deepest boundary on it (proportions set by the draws are preserved).
  double max_sag = 0.0;
  if (!out.flat()) max_sag = std::max(out.sag(0), out.sag(out.width - 1));
  const double budget = out.depth_extent() - out.apex_depth - max_sag;
  const double total = out.total_thickness();
  if (total > budget && budget > 0.0)
    for (auto& l : out.layers) l.thickness *= budget / total;
  out.seed = derive_stream(base.seed, 0x76617269ULL, index);
  out.validate();
  return out;
}

} // namespace octiv
