#pragma once

// Image-quality metrics: MSE, PSNR, and mean local SSIM (11x11 Gaussian
// window, sigma = 1.5, k1 = 0.01, k2 = 0.03, valid windows only).

#include "octiv/field.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace octiv {

inline double mse(const ScalarField& a, const ScalarField& b) {
  require(a.same_shape(b), "mse: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

/// 10*log10(range^2 / mse); +infinity when the images are identical.
inline double psnr(const ScalarField& a, const ScalarField& b, double data_range) {
  require(std::isfinite(data_range) && data_range > 0.0, "psnr: data_range must be > 0");
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / m);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

inline double ssim(const ScalarField& a, const ScalarField& b, double data_range,
                   const SsimParams& p = {}) {
  require(a.same_shape(b), "ssim: shape mismatch");
  require(std::isfinite(data_range) && data_range > 0.0, "ssim: data_range must be > 0");
  require(p.window >= 1 && p.window % 2 == 1, "ssim: window must be odd and >= 1");
  require(a.width() >= p.window && a.height() >= p.window,
          "ssim: image smaller than window (" + std::to_string(p.window) + ")");

  const int half = p.window / 2;
  std::vector<double> kernel(static_cast<size_t>(p.window) * p.window);
  double ksum = 0.0;
  for (int j = 0; j < p.window; ++j)
    for (int i = 0; i < p.window; ++i) {
      const double dx = i - half, dy = j - half;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma));
      kernel[static_cast<size_t>(j) * p.window + i] = v;
      ksum += v;
    }
  for (auto& v : kernel) v /= ksum;

  const double c1 = (p.k1 * data_range) * (p.k1 * data_range);
  const double c2 = (p.k2 * data_range) * (p.k2 * data_range);

  double acc = 0.0;
  int count = 0;
  for (int cy = half; cy < a.height() - half; ++cy) {
    for (int cx = half; cx < a.width() - half; ++cx) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int j = 0; j < p.window; ++j)
        for (int i = 0; i < p.window; ++i) {
          const double k = kernel[static_cast<size_t>(j) * p.window + i];
          const double va = a(cx + i - half, cy + j - half);
          const double vb = b(cx + i - half, cy + j - half);
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
      acc += num / den;
      ++count;
    }
  }
  return acc / count;
}

enum class Channel { Intensity, N, MuS, G };

inline const char* channel_name(Channel c) {
  switch (c) {
    case Channel::Intensity: return "intensity";
    case Channel::N: return "n";
    case Channel::MuS: return "mu_s";
    case Channel::G: return "g";
  }
  return "?";
}

struct MetricReport {
  Channel channel = Channel::Intensity;
  double psnr = 0.0; // +inf sentinel when mse == 0
  double ssim = 0.0;
  double mse = 0.0;
};

inline MetricReport evaluate_channel(Channel c, const ScalarField& got,
                                     const ScalarField& want, double data_range) {
  MetricReport r;
  r.channel = c;
  r.mse = mse(got, want);
  r.psnr = psnr(got, want, data_range);
  r.ssim = ssim(got, want, data_range);
  return r;
}

} // namespace octiv
