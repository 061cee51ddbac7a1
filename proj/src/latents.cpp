#include "flashflow/latents.hpp"

#include <cmath>
#include <stdexcept>

#include "flashflow/rng.hpp"

namespace flashflow {
namespace {

// Orthonormal n x n matrix: modified Gram-Schmidt over a seeded Gaussian
// matrix, with a second orthogonalization pass to push residuals to roundoff.
// Hand-rolled (rather than a library QR) so the matrix is reproducible
// bit-for-bit across platforms and library versions.
std::vector<double> orthonormal_matrix(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> a(static_cast<size_t>(n) * n);
  for (double& x : a) x = rng.normal();
  // Columns of q built in place, column-major scratch for locality.
  std::vector<double> q(static_cast<size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = a[static_cast<size_t>(i) * n + j];
    for (int pass = 0; pass < 2; ++pass) {
      for (int k = 0; k < j; ++k) {
        double d = 0.0;
        for (int i = 0; i < n; ++i) d += q[static_cast<size_t>(i) * n + k] * v[i];
        for (int i = 0; i < n; ++i) v[i] -= d * q[static_cast<size_t>(i) * n + k];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) throw std::runtime_error("orthonormal_matrix: degenerate draw");
    for (int i = 0; i < n; ++i) q[static_cast<size_t>(i) * n + j] = v[i] / norm;
  }
  return q;  // row-major n x n (row i, col j at i*n + j)
}

}  // namespace

LatentCodec::LatentCodec(int pixel_channels, uint64_t seed, bool identity_mix)
    : pixel_channels_(pixel_channels), latent_channels_(pixel_channels * 4) {
  if (pixel_channels < 1) throw std::invalid_argument("LatentCodec: pixel_channels must be >= 1");
  if (!identity_mix) mix_ = orthonormal_matrix(latent_channels_, seed);
}

Latent LatentCodec::encode(const Video& video) const {
  if (video.c != pixel_channels_) throw std::invalid_argument("encode: channel count mismatch");
  if (video.t < 1) throw std::invalid_argument("encode: empty clip");
  if (video.h % 2 != 0 || video.w % 2 != 0 || video.h < 2 || video.w < 2)
    throw std::invalid_argument("encode: spatial dims must be even and >= 2");

  const int lh = video.h / 2, lw = video.w / 2;
  Latent re(latent_channels_, video.t, lh, lw);
  for (int c = 0; c < video.c; ++c)
    for (int dr = 0; dr < 2; ++dr)
      for (int dc = 0; dc < 2; ++dc) {
        const int k = c * 4 + 2 * dr + dc;
        for (int t = 0; t < video.t; ++t)
          for (int i = 0; i < lh; ++i)
            for (int j = 0; j < lw; ++j)
              re.at(k, t, i, j) = video.at(c, t, 2 * i + dr, 2 * j + dc);
      }
  if (mix_.empty()) return re;

  Latent out(latent_channels_, video.t, lh, lw);
  const size_t plane = static_cast<size_t>(video.t) * lh * lw;
  for (int k = 0; k < latent_channels_; ++k)
    for (int m = 0; m < latent_channels_; ++m) {
      const double wgt = mix_[static_cast<size_t>(k) * latent_channels_ + m];
      if (wgt == 0.0) continue;
      const double* src = re.v.data() + static_cast<size_t>(m) * plane;
      double* dst = out.v.data() + static_cast<size_t>(k) * plane;
      for (size_t i = 0; i < plane; ++i) dst[i] += wgt * src[i];
    }
  return out;
}

Video LatentCodec::decode(const Latent& latent) const {
  if (latent.c != latent_channels_) throw std::invalid_argument("decode: channel count mismatch");
  if (latent.t < 1) throw std::invalid_argument("decode: empty clip");

  const Latent* re = &latent;
  Latent unmixed;
  if (!mix_.empty()) {
    unmixed = Latent(latent_channels_, latent.t, latent.h, latent.w);
    const size_t plane = static_cast<size_t>(latent.t) * latent.h * latent.w;
    // Orthonormal mix: the inverse is the transpose.
    for (int m = 0; m < latent_channels_; ++m)
      for (int k = 0; k < latent_channels_; ++k) {
        const double wgt = mix_[static_cast<size_t>(k) * latent_channels_ + m];
        if (wgt == 0.0) continue;
        const double* src = latent.v.data() + static_cast<size_t>(k) * plane;
        double* dst = unmixed.v.data() + static_cast<size_t>(m) * plane;
        for (size_t i = 0; i < plane; ++i) dst[i] += wgt * src[i];
      }
    re = &unmixed;
  }

  Video out(pixel_channels_, latent.t, latent.h * 2, latent.w * 2);
  for (int c = 0; c < pixel_channels_; ++c)
    for (int dr = 0; dr < 2; ++dr)
      for (int dc = 0; dc < 2; ++dc) {
        const int k = c * 4 + 2 * dr + dc;
        for (int t = 0; t < latent.t; ++t)
          for (int i = 0; i < latent.h; ++i)
            for (int j = 0; j < latent.w; ++j)
              out.at(c, t, 2 * i + dr, 2 * j + dc) = re->at(k, t, i, j);
      }
  return out;
}

}  // namespace flashflow
