#pragma once

#include "flashflow/rng.hpp"
#include "flashflow/tensor.hpp"

namespace flashflow {

// Straight-path state (1 - t) * x + t * eps at time t in [0, 1].
Latent interpolate(const Latent& x, const Latent& eps, double t);

// Constant-in-t regression target eps - x for the straight path.
Latent velocity_target(const Latent& x, const Latent& eps);

// interpolate(x, eps, t) minus phi_s broadcast over the frame axis.
// phi_s holds one frame (t == 1) with matching channel/spatial dims.
Latent shifted_state(const Latent& x, const Latent& eps, double t, const Latent& phi_s);

// Mean (not sum) squared error over all elements.
double mse_loss(const Latent& pred, const Latent& target);

// Training timestep, uniform on [0, 1).
double sample_timestep(Rng& rng);

}  // namespace flashflow
