#include "flashflow/fourier.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "flashflow/errors.hpp"

namespace flashflow {
namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

std::vector<std::complex<double>> twiddles(int n, double sign) {
  std::vector<std::complex<double>> tw(n);
  for (int k = 0; k < n; ++k) tw[k] = std::polar(1.0, sign * kTwoPi * k / n);
  return tw;
}

}  // namespace

Spectrum dft2d(const Plane& f) {
  if (f.h < 1 || f.w < 1) throw std::invalid_argument("dft2d: empty plane");
  const int H = f.h, W = f.w;
  const auto tw_w = twiddles(W, -1.0);
  const auto tw_h = twiddles(H, -1.0);

  // Row pass: partial[h][v] = sum_w f[h][w] * e^{-2 pi i v w / W}.
  std::vector<std::complex<double>> partial(static_cast<size_t>(H) * W);
  for (int h = 0; h < H; ++h)
    for (int v = 0; v < W; ++v) {
      std::complex<double> acc = 0.0;
      for (int w = 0; w < W; ++w)
        acc += f.at(h, w) * tw_w[static_cast<size_t>(v) * w % W];
      partial[static_cast<size_t>(h) * W + v] = acc;
    }

  // Column pass plus centering shift: DC lands at (H/2, W/2).
  Spectrum out(H, W);
  for (int u = 0; u < H; ++u) {
    const int uc = (u + H / 2) % H;
    for (int v = 0; v < W; ++v) {
      std::complex<double> acc = 0.0;
      for (int h = 0; h < H; ++h)
        acc += partial[static_cast<size_t>(h) * W + v] * tw_h[static_cast<size_t>(u) * h % H];
      out.at(uc, (v + W / 2) % W) = acc;
    }
  }
  return out;
}

Plane idft2d(const Spectrum& spec) {
  if (spec.h < 1 || spec.w < 1) throw std::invalid_argument("idft2d: empty spectrum");
  const int H = spec.h, W = spec.w;
  const auto tw_w = twiddles(W, 1.0);
  const auto tw_h = twiddles(H, 1.0);

  // Undo the centering shift during the column pass.
  std::vector<std::complex<double>> partial(static_cast<size_t>(H) * W);
  for (int h = 0; h < H; ++h)
    for (int v = 0; v < W; ++v) {
      std::complex<double> acc = 0.0;
      for (int u = 0; u < H; ++u)
        acc += spec.at((u + H / 2) % H, (v + W / 2) % W) * tw_h[static_cast<size_t>(u) * h % H];
      partial[static_cast<size_t>(h) * W + v] = acc;
    }

  Plane out(H, W);
  const double scale = 1.0 / (static_cast<double>(H) * W);
  double max_imag = 0.0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      std::complex<double> acc = 0.0;
      for (int v = 0; v < W; ++v)
        acc += partial[static_cast<size_t>(h) * W + v] * tw_w[static_cast<size_t>(w) * v % W];
      acc *= scale;
      max_imag = std::max(max_imag, std::fabs(acc.imag()));
      out.at(h, w) = acc.real();
    }
  if (max_imag > 1e-6)
    throw NumericError("idft2d: imaginary residue " + std::to_string(max_imag) +
                       " on a transform expected to be real");
  return out;
}

Plane magnitude_map(const Spectrum& spec) {
  Plane out(spec.h, spec.w);
  for (size_t i = 0; i < spec.v.size(); ++i) out.v[i] = std::abs(spec.v[i]);
  return out;
}

double cutoff_frequency(const Plane& magnitude, double p) {
  if (magnitude.h < 1 || magnitude.w < 1) throw std::invalid_argument("cutoff_frequency: empty map");
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("cutoff_frequency: p must be in (0, 1]");

  // Group bins by exact integer squared radius so ties are handled as whole
  // rings, then walk rings outward until the share reaches p.
  const int cu = magnitude.h / 2, cv = magnitude.w / 2;
  std::map<long, double> ring_sum;
  double total = 0.0;
  for (int u = 0; u < magnitude.h; ++u)
    for (int v = 0; v < magnitude.w; ++v) {
      const long du = u - cu, dv = v - cv;
      const double m = magnitude.at(u, v);
      if (m < 0.0) throw std::invalid_argument("cutoff_frequency: negative magnitude");
      ring_sum[du * du + dv * dv] += m;
      total += m;
    }
  if (total <= 0.0) throw std::invalid_argument("cutoff_frequency: all-zero magnitude map");

  double cum = 0.0;
  for (const auto& [r2, s] : ring_sum) {
    cum += s;
    if (cum / total >= p - 1e-12) return std::sqrt(static_cast<double>(r2));
  }
  // Rounding fallback: the full sum always reaches p <= 1.
  return std::sqrt(static_cast<double>(ring_sum.rbegin()->first));
}

std::pair<Plane, Plane> frequency_masks(int h, int w, double cutoff) {
  if (h < 1 || w < 1) throw std::invalid_argument("frequency_masks: empty grid");
  if (cutoff < 0.0) throw std::invalid_argument("frequency_masks: negative cutoff");
  Plane low(h, w), high(h, w);
  const int cu = h / 2, cv = w / 2;
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      const double du = u - cu, dv = v - cv;
      const double r = std::sqrt(du * du + dv * dv);
      // Closed comparison with a hair of slack: ring radii are sqrt(integer),
      // so distinct radii are far more than 1e-9 apart.
      const bool is_low = r <= cutoff + 1e-9;
      low.at(u, v) = is_low ? 1.0 : 0.0;
      high.at(u, v) = is_low ? 0.0 : 1.0;
    }
  return {low, high};
}

Spectrum apply_mask(const Spectrum& spec, const Plane& mask) {
  if (spec.h != mask.h || spec.w != mask.w)
    throw std::invalid_argument("apply_mask: shape mismatch");
  Spectrum out(spec.h, spec.w);
  for (size_t i = 0; i < spec.v.size(); ++i) out.v[i] = spec.v[i] * mask.v[i];
  return out;
}

double spectral_energy(const Spectrum& spec) {
  double s = 0.0;
  for (const auto& z : spec.v) s += std::norm(z);
  return s / (static_cast<double>(spec.h) * spec.w);
}

Latent high_freq_magnitude(const Latent& s, double p) {
  if (s.t != 1) throw std::invalid_argument("high_freq_magnitude: expects a single frame");
  if (s.c < 1 || s.h < 1 || s.w < 1) throw std::invalid_argument("high_freq_magnitude: empty input");

  Latent out(s.c, 1, s.h, s.w);
  for (int c = 0; c < s.c; ++c) {
    Plane f(s.h, s.w);
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) f.at(i, j) = s.at(c, 0, i, j);

    const Spectrum spec = dft2d(f);
    const Plane mag = magnitude_map(spec);
    double total = 0.0;
    for (double m : mag.v) total += m;
    if (total <= 0.0) continue;  // zero-energy channel stays all zero

    const double cutoff = cutoff_frequency(mag, p);
    const auto masks = frequency_masks(s.h, s.w, cutoff);
    const Plane inv = idft2d(apply_mask(spec, masks.second));
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) out.at(c, 0, i, j) = std::fabs(inv.at(i, j));
  }
  return out;
}

}  // namespace flashflow
