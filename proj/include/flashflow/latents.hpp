#pragma once

#include <cstdint>
#include <vector>

#include "flashflow/tensor.hpp"

namespace flashflow {

inline constexpr uint64_t kDefaultMixSeed = 0xC0DEC;

// Exactly invertible pixel <-> latent codec: a 2x2 space-to-channel
// rearrangement followed by a fixed orthonormal channel mix.  Linear, norm
// preserving, and decode(encode(v)) == v to floating-point roundoff.
class LatentCodec {
 public:
  // identity_mix skips the channel mix entirely (rearrangement only), making
  // the roundtrip bit-exact.
  explicit LatentCodec(int pixel_channels, uint64_t seed = kDefaultMixSeed,
                       bool identity_mix = false);

  int pixel_channels() const { return pixel_channels_; }
  int latent_channels() const { return latent_channels_; }
  bool identity_mix() const { return mix_.empty(); }

  // Requires even spatial dims.  Output is (4c, t, h/2, w/2).
  Latent encode(const Video& video) const;
  Video decode(const Latent& latent) const;

 private:
  int pixel_channels_ = 0;
  int latent_channels_ = 0;
  std::vector<double> mix_;  // latent_channels^2 row-major orthonormal matrix
};

}  // namespace flashflow
