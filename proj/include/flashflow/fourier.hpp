#pragma once

#include <complex>
#include <utility>
#include <vector>

#include "flashflow/tensor.hpp"

namespace flashflow {

// Centered 2-D spectrum: the DC bin sits at (h/2, w/2) (integer division).
struct Spectrum {
  int h = 0, w = 0;
  std::vector<std::complex<double>> v;

  Spectrum() = default;
  Spectrum(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_) {}
  std::complex<double>& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
  const std::complex<double>& at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
};

// Forward DFT of a real plane, centered.  Separable row/column evaluation of
// sum f(h,w) * exp(-2*pi*i*(u*h/H + v*w/W)).
Spectrum dft2d(const Plane& f);

// Inverse of dft2d with 1/(H*W) normalization.  The input is expected to be
// conjugate-symmetric (as any radially masked spectrum of a real plane is);
// an imaginary residue above 1e-6 raises NumericError.
Plane idft2d(const Spectrum& spec);

Plane magnitude_map(const Spectrum& spec);

// Smallest occurring radius (distance from the DC bin) whose cumulative
// magnitude share reaches p, with bins grouped by exact integer squared
// radius.  p must be in (0, 1]; an all-zero map is rejected.
double cutoff_frequency(const Plane& magnitude, double p);

// Complementary {low, high} indicator masks: low keeps radius <= cutoff
// (closed, so the DC bin is always low), high is its complement.
std::pair<Plane, Plane> frequency_masks(int h, int w, double cutoff);

Spectrum apply_mask(const Spectrum& spec, const Plane& mask);

// Mean squared bin magnitude scaled so it equals the plane's sum of squares
// (Parseval): sum |spec|^2 / (H*W).
double spectral_energy(const Spectrum& spec);

// Per-channel high-frequency magnitude of a single latent frame (t == 1):
// transform, cut at the channel's own p-percentile radius, invert, take
// absolute value.  A channel with zero energy maps to zeros.
Latent high_freq_magnitude(const Latent& s, double p);

}  // namespace flashflow
