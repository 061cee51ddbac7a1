#include "flashflow/flowmatch.hpp"

#include <stdexcept>

namespace flashflow {

Latent interpolate(const Latent& x, const Latent& eps, double t) {
  if (!x.same_shape(eps)) throw std::invalid_argument("interpolate: shape mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t outside [0, 1]");
  Latent out(x.c, x.t, x.h, x.w);
  const double a = 1.0 - t;
  for (size_t i = 0; i < x.v.size(); ++i) out.v[i] = a * x.v[i] + t * eps.v[i];
  return out;
}

Latent velocity_target(const Latent& x, const Latent& eps) {
  if (!x.same_shape(eps)) throw std::invalid_argument("velocity_target: shape mismatch");
  Latent out(x.c, x.t, x.h, x.w);
  for (size_t i = 0; i < x.v.size(); ++i) out.v[i] = eps.v[i] - x.v[i];
  return out;
}

Latent shifted_state(const Latent& x, const Latent& eps, double t, const Latent& phi_s) {
  if (phi_s.t != 1) throw std::invalid_argument("shifted_state: phi_s must hold one frame");
  if (phi_s.c != x.c || phi_s.h != x.h || phi_s.w != x.w)
    throw std::invalid_argument("shifted_state: phi_s dims mismatch");
  Latent out = interpolate(x, eps, t);
  for (int c = 0; c < out.c; ++c)
    for (int k = 0; k < out.t; ++k)
      for (int i = 0; i < out.h; ++i)
        for (int j = 0; j < out.w; ++j) out.at(c, k, i, j) -= phi_s.at(c, 0, i, j);
  return out;
}

double mse_loss(const Latent& pred, const Latent& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
  if (pred.v.empty()) throw std::invalid_argument("mse_loss: empty tensors");
  double s = 0.0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const double d = pred.v[i] - target.v[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.v.size());
}

double sample_timestep(Rng& rng) { return rng.uniform(); }

}  // namespace flashflow
