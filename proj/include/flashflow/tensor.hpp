#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace flashflow {

// Dense (channels, frames, rows, cols) tensor, row-major with cols fastest.
// Storage is double so long arithmetic chains stay exact to well below the
// 1e-6 tolerances used throughout; file formats round to f32 at the boundary.
struct Tensor4 {
  int c = 0, t = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor4() = default;
  Tensor4(int c_, int t_, int h_, int w_) : c(c_), t(t_), h(h_), w(w_) {
    if (c_ < 0 || t_ < 0 || h_ < 0 || w_ < 0)
      throw std::invalid_argument("Tensor4: negative dimension");
    v.assign(static_cast<size_t>(c_) * t_ * h_ * w_, 0.0);
  }

  size_t size() const { return v.size(); }
  size_t idx(int ci, int ti, int hi, int wi) const {
    return ((static_cast<size_t>(ci) * t + ti) * h + hi) * w + wi;
  }
  double& at(int ci, int ti, int hi, int wi) { return v[idx(ci, ti, hi, wi)]; }
  double at(int ci, int ti, int hi, int wi) const { return v[idx(ci, ti, hi, wi)]; }
  bool same_shape(const Tensor4& o) const {
    return c == o.c && t == o.t && h == o.h && w == o.w;
  }
};

// Pixel-space clip, values nominally in [-1, 1].
using Video = Tensor4;
// Codec-space clip.
using Latent = Tensor4;

// 2-D real plane (rows, cols).
struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int h_, int w_) : h(h_), w(w_) {
    if (h_ < 0 || w_ < 0) throw std::invalid_argument("Plane: negative dimension");
    v.assign(static_cast<size_t>(h_) * w_, 0.0);
  }
  double& at(int r, int col) { return v[static_cast<size_t>(r) * w + col]; }
  double at(int r, int col) const { return v[static_cast<size_t>(r) * w + col]; }
};

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b.v[i]));
  return m;
}

inline double l2_norm(const Tensor4& a) {
  double s = 0.0;
  for (double x : a.v) s += x * x;
  return std::sqrt(s);
}

inline bool all_finite(const Tensor4& a) {
  for (double x : a.v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace flashflow
