#pragma once

// Monte Carlo photon transport through the layered phantom, MCML style, with
// depth-resolved backscatter recording to synthesize "measured" B-scans.
//
// Each column of the grid is treated as an independent plane-parallel stack
// (the curved surface enters as a per-column depth offset). Photons are
// launched straight down at the top of the grid, hop by sampled optical path
// -ln(U) consumed across media, deposit w*mu_a/mu_t at each interaction,
// scatter by Henyey-Greenstein, reflect/refract stochastically by unpolarized
// Fresnel at index steps, and die by Russian roulette. A scattering event
// that redirects a photon into the detection cone (upward, sin(theta) <= NA)
// while the photon is still within its A-line's lateral footprint (half a
// pitch off the launch axis, the confocal gate) contributes w*exp(-tau_return) to
// the backscatter bin at its depth, where tau_return is the extinction
// thickness straight up to the surface; the record is an estimator tally,
// not an energy sink. Without the footprint test, multiply scattered light
// that has wandered far off axis would swamp the ballistic exp(-2 mu_s z)
// decay that depth-resolved detection actually sees.
//
// Determinism: photon i uses the counter-based stream (seed, i), and every
// tally is accumulated in 64-bit fixed point, so sums commute and results are
// bit-identical for any thread count.

#include "octiv/field.hpp"
#include "octiv/parallel.hpp"
#include "octiv/phantom.hpp"
#include "octiv/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

namespace octiv {

constexpr double kPi = 3.14159265358979323846;

struct McConfig {
  uint64_t photons = 100000;
  double roulette_threshold = 1e-4; // start roulette below this weight
  double roulette_survival = 0.1;
  double record_na = 0.9; // detection cone: sin(theta) <= NA, upward
  uint64_t seed = 0;
  uint64_t max_events = 10000000; // per-photon safety cap

  void validate() const {
    require(photons >= 1, "McConfig: photons must be >= 1");
    require(std::isfinite(roulette_threshold) && roulette_threshold > 0.0 &&
                roulette_threshold < 1.0,
            "McConfig: roulette threshold must be in (0, 1)");
    require(std::isfinite(roulette_survival) && roulette_survival > 0.0 &&
                roulette_survival < 1.0,
            "McConfig: roulette survival must be in (0, 1)");
    require(std::isfinite(record_na) && record_na > 0.0 && record_na < 1.0,
            "McConfig: recording NA must be in (0, 1)");
    require(max_events >= 1, "McConfig: max_events must be >= 1");
  }
};

/// Weight bookkeeping over a whole run. Conservation:
/// launched = absorbed + reflected + transmitted + terminated (roulette net
/// plus safety-cap kills). backscatter_recorded is a detector tally outside
/// the energy balance.
struct McAudit {
  double launched_weight = 0.0;
  double absorbed = 0.0;
  double reflected = 0.0;
  double transmitted = 0.0;
  double terminated = 0.0;
  double backscatter_recorded = 0.0;

  double conservation_error() const {
    const double out = absorbed + reflected + transmitted + terminated;
    return std::abs(launched_weight - out) / launched_weight;
  }
};

struct McResult {
  ScalarField bscan; // per-column mean recorded weight per launched photon
  McAudit audit;
};

namespace detail {

// Fixed-point accumulation scales. Grid sums stay below 2^63 / 2^32 ~ 2e9
// photon-weights per bin; audit sums below 2^63 / 2^40 ~ 8e6 total weight.
constexpr double kGridScale = 4294967296.0;        // 2^32
constexpr double kAuditScale = 1099511627776.0;    // 2^40

struct Segment {
  double top, bot; // depth interval [top, bot)
  double n, mu_s, mu_a, g;
  double mu_t() const { return mu_s + mu_a; }
};

// Per-column stack: air gap above the surface, the layers, air below,
// truncated at the grid bottom. cum_ext[i] = extinction thickness above
// segment i, for O(1) straight-up return attenuation.
struct ColumnStack {
  std::vector<Segment> segs;
  std::vector<double> cum_ext;

  double tau_up(size_t seg_index, double z) const {
    const Segment& s = segs[seg_index];
    return cum_ext[seg_index] + (z - s.top) * s.mu_t();
  }
};

inline ColumnStack build_column_stack(const PhantomScene& scene, int x) {
  ColumnStack st;
  const double bottom = scene.depth_extent();
  double top = scene.surface_depth(x);
  if (top > 0.0) st.segs.push_back({0.0, top, 1.0, 0.0, 0.0, 0.0});
  for (const auto& l : scene.layers) {
    st.segs.push_back({top, top + l.thickness, l.n, l.mu_s, l.mu_a, l.g});
    top += l.thickness;
  }
  if (top < bottom) st.segs.push_back({top, bottom, 1.0, 0.0, 0.0, 0.0});
  st.segs.back().bot = bottom;

  st.cum_ext.resize(st.segs.size());
  double acc = 0.0;
  for (size_t i = 0; i < st.segs.size(); ++i) {
    st.cum_ext[i] = acc;
    acc += (st.segs[i].bot - st.segs[i].top) * st.segs[i].mu_t();
  }
  return st;
}

// Unpolarized Fresnel reflectance for incidence cosine ci in (0, 1] at an
// n1 -> n2 step. Returns 1 on total internal reflection.
inline double fresnel_reflectance(double n1, double n2, double ci, double& ct_out) {
  if (n1 == n2) {
    ct_out = ci;
    return 0.0;
  }
  const double si = std::sqrt(std::max(0.0, 1.0 - ci * ci));
  const double st = si * n1 / n2;
  if (st >= 1.0) {
    ct_out = 0.0;
    return 1.0;
  }
  const double ct = std::sqrt(1.0 - st * st);
  ct_out = ct;
  const double rs = (n1 * ci - n2 * ct) / (n1 * ci + n2 * ct);
  const double rp = (n1 * ct - n2 * ci) / (n1 * ct + n2 * ci);
  return 0.5 * (rs * rs + rp * rp);
}

// Henyey-Greenstein polar cosine; isotropic when g ~ 0.
inline double sample_hg_cosine(double g, Rng& rng) {
  const double u = rng.uniform();
  if (std::abs(g) < 1e-6) return 2.0 * u - 1.0;
  const double frac = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
  double c = (1.0 + g * g - frac * frac) / (2.0 * g);
  return c < -1.0 ? -1.0 : (c > 1.0 ? 1.0 : c);
}

// Rotates direction (ux,uy,uz) by polar angle (cos ct) and azimuth phi.
inline void spin_direction(double& ux, double& uy, double& uz, double ct, double phi) {
  const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
  const double cp = std::cos(phi), sp = std::sin(phi);
  if (std::abs(uz) > 0.99999) {
    ux = st * cp;
    uy = st * sp;
    uz = ct * (uz >= 0.0 ? 1.0 : -1.0);
    return;
  }
  const double t = std::sqrt(1.0 - uz * uz);
  const double nx = st * (ux * uz * cp - uy * sp) / t + ux * ct;
  const double ny = st * (uy * uz * cp + ux * sp) / t + uy * ct;
  const double nz = -st * cp * t + uz * ct;
  ux = nx;
  uy = ny;
  uz = nz;
}

struct Tallies {
  std::vector<int64_t> grid; // width*height backscatter records
  int64_t absorbed = 0, reflected = 0, transmitted = 0, terminated = 0, recorded = 0;

  void merge(const Tallies& o) {
    for (size_t i = 0; i < grid.size(); ++i) grid[i] += o.grid[i];
    absorbed += o.absorbed;
    reflected += o.reflected;
    transmitted += o.transmitted;
    terminated += o.terminated;
    recorded += o.recorded;
  }
};

inline int64_t fx_audit(double w) { return llround(w * kAuditScale); }
inline int64_t fx_grid(double w) { return llround(w * kGridScale); }

inline void trace_photon(const PhantomScene& scene, const McConfig& mc,
                         const ColumnStack& stack, int column, uint64_t photon_index,
                         Tallies& t) {
  Rng rng(derive_stream(mc.seed, 0x6d637068ULL, photon_index));
  const double cos_na_min = std::sqrt(1.0 - mc.record_na * mc.record_na);

  double w = 1.0, z = 0.0;
  double lx = 0.0, ly = 0.0; // lateral offset from the launch axis
  double ux = 0.0, uy = 0.0, uz = 1.0;
  // Confocal footprint: the photon must still be inside its own column
  // (within half a pitch of the launch axis) for a record to be accepted.
  const double r2_max = 0.25 * scene.pitch_x * scene.pitch_x;
  size_t si = 0; // current segment index

  // Entry interface at z = 0 when the first segment is denser than air.
  if (stack.segs[0].n != 1.0) {
    double ct;
    const double r = fresnel_reflectance(1.0, stack.segs[0].n, 1.0, ct);
    if (rng.uniform() < r) {
      t.reflected += fx_audit(w);
      return;
    }
  }

  double path = 0.0; // remaining dimensionless optical path of the current hop
  for (uint64_t events = 0; events < mc.max_events; ++events) {
    const Segment& seg = stack.segs[si];
    const double mu_t = seg.mu_t();

    double to_boundary; // geometric distance to the segment face ahead
    double next_face;   // depth of that face
    if (uz > 0.0) {
      next_face = seg.bot;
      to_boundary = (seg.bot - z) / uz;
    } else if (uz < 0.0) {
      next_face = seg.top;
      to_boundary = (seg.top - z) / uz;
    } else {
      // Horizontal flight never meets a face; in scattering media an event
      // will still occur, in clear media the photon is stuck: retire it.
      next_face = z;
      to_boundary = std::numeric_limits<double>::infinity();
      if (mu_t <= 0.0) {
        t.terminated += fx_audit(w);
        return;
      }
    }

    if (path <= 0.0) path = -std::log(rng.uniform_pos());
    const double to_event =
        mu_t > 0.0 ? path / mu_t : std::numeric_limits<double>::infinity();

    if (to_event < to_boundary) {
      // Interaction inside the segment.
      z += to_event * uz;
      lx += to_event * ux;
      ly += to_event * uy;
      path = 0.0;
      if (seg.mu_a > 0.0) {
        const double deposit = w * seg.mu_a / mu_t;
        t.absorbed += fx_audit(deposit);
        w -= deposit;
        if (w <= 0.0) return; // fully absorbed (mu_s = 0 segment)
      }
      spin_direction(ux, uy, uz, sample_hg_cosine(seg.g, rng),
                     2.0 * kPi * rng.uniform());
      if (uz < -cos_na_min && lx * lx + ly * ly <= r2_max) {
        // Redirected into the detection cone from inside the confocal
        // footprint: record with return attenuation.
        const int bin = static_cast<int>(z / scene.pitch_z);
        if (bin >= 0 && bin < scene.height) {
          const double rec = w * std::exp(-stack.tau_up(si, z));
          const int64_t q = fx_grid(rec);
          t.grid[static_cast<size_t>(bin) * scene.width + column] += q;
          t.recorded += fx_audit(rec);
        }
      }
      if (w < mc.roulette_threshold) {
        if (rng.uniform() < mc.roulette_survival) {
          const double boosted = w / mc.roulette_survival;
          t.terminated -= fx_audit(boosted - w);
          w = boosted;
        } else {
          t.terminated += fx_audit(w);
          return;
        }
      }
      continue;
    }

    // Boundary reached first: consume the traversed optical path and resolve
    // the interface.
    if (std::isfinite(to_boundary)) {
      path -= to_boundary * mu_t;
      lx += to_boundary * ux;
      ly += to_boundary * uy;
    }
    if (path < 0.0) path = 0.0;
    z = next_face;

    const bool down = uz > 0.0;
    const bool leaving_domain = down ? (si + 1 >= stack.segs.size()) : (si == 0);
    const double n1 = seg.n;
    const double n2 = leaving_domain ? 1.0 : stack.segs[down ? si + 1 : si - 1].n;

    double ct;
    const double r = fresnel_reflectance(n1, n2, std::abs(uz), ct);
    if (rng.uniform() < r) {
      uz = -uz; // specular bounce, stay in the segment
      continue;
    }
    const double scale = n1 / n2;
    ux *= scale;
    uy *= scale;
    uz = down ? ct : -ct;
    if (leaving_domain) {
      if (down)
        t.transmitted += fx_audit(w);
      else
        t.reflected += fx_audit(w);
      return;
    }
    si = down ? si + 1 : si - 1;
  }
  t.terminated += fx_audit(w); // event cap hit
}

} // namespace detail

/// Simulates the scene and returns the backscatter B-scan plus the energy
/// audit. Photon i is assigned to column i % width; each column's bin values
/// are the recorded weight divided by the photons launched into that column.
inline McResult mc_bscan(const PhantomScene& scene, const McConfig& mc, int threads = 1) {
  scene.validate();
  mc.validate();
  require(scene.width > 0 && scene.height > 0, "mc_bscan: degenerate grid");

  std::vector<detail::ColumnStack> stacks(scene.width);
  for (int x = 0; x < scene.width; ++x) stacks[x] = detail::build_column_stack(scene, x);

  const int nthreads = resolve_threads(threads);
  std::vector<detail::Tallies> parts(static_cast<size_t>(nthreads));
  for (auto& p : parts)
    p.grid.assign(static_cast<size_t>(scene.width) * scene.height, 0);

  std::atomic<uint64_t> cursor{0};
  constexpr uint64_t kChunk = 256;
  auto worker = [&](detail::Tallies& t) {
    for (;;) {
      const uint64_t begin = cursor.fetch_add(kChunk);
      if (begin >= mc.photons) return;
      const uint64_t end = std::min(begin + kChunk, mc.photons);
      for (uint64_t i = begin; i < end; ++i) {
        const int column = static_cast<int>(i % static_cast<uint64_t>(scene.width));
        detail::trace_photon(scene, mc, stacks[column], column, i, t);
      }
    }
  };

  if (nthreads <= 1) {
    worker(parts[0]);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int ti = 0; ti < nthreads; ++ti) pool.emplace_back(worker, std::ref(parts[ti]));
    for (auto& th : pool) th.join();
  }
  for (size_t ti = 1; ti < parts.size(); ++ti) parts[0].merge(parts[ti]);
  const detail::Tallies& total = parts[0];

  McResult out;
  out.bscan = ScalarField(scene.width, scene.height, scene.pitch_x, scene.pitch_z, 0.0);
  const uint64_t base = mc.photons / static_cast<uint64_t>(scene.width);
  const uint64_t extra = mc.photons % static_cast<uint64_t>(scene.width);
  for (int x = 0; x < scene.width; ++x) {
    const uint64_t per_column = base + (static_cast<uint64_t>(x) < extra ? 1 : 0);
    if (per_column == 0) continue;
    for (int k = 0; k < scene.height; ++k) {
      const int64_t q = total.grid[static_cast<size_t>(k) * scene.width + x];
      out.bscan(x, k) = static_cast<double>(q) / detail::kGridScale / per_column;
    }
  }

  out.audit.launched_weight = static_cast<double>(mc.photons);
  out.audit.absorbed = static_cast<double>(total.absorbed) / detail::kAuditScale;
  out.audit.reflected = static_cast<double>(total.reflected) / detail::kAuditScale;
  out.audit.transmitted = static_cast<double>(total.transmitted) / detail::kAuditScale;
  out.audit.terminated = static_cast<double>(total.terminated) / detail::kAuditScale;
  out.audit.backscatter_recorded = static_cast<double>(total.recorded) / detail::kAuditScale;
  return out;
}

} // namespace octiv
