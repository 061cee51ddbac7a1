#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flashflow/latents.hpp"
#include "flashflow/model.hpp"
#include "flashflow/rng.hpp"
#include "flashflow/tensor.hpp"

namespace flashflow {

// The seven conditioning paradigms.  The *_noise variants perturb the pixel
// condition image before encoding; flash consumes only the shifted state and
// the high-frequency magnitude map, never a raw copy of the condition latent.
enum class Paradigm {
  repeat_concat = 0,
  repeat_concat_noise = 1,
  zero_pad_concat = 2,
  zero_pad_concat_noise = 3,
  inpainting = 4,
  inpainting_noise = 5,
  flash = 6,
};
inline constexpr int kNumParadigms = 7;

const char* paradigm_name(Paradigm p);
Paradigm paradigm_from_name(const std::string& name);
bool paradigm_adds_noise(Paradigm p);
bool paradigm_uses_mask(Paradigm p);
// State-input channel count for a given latent channel count.
int paradigm_in_channels(Paradigm p, int latent_channels);

struct SamplerConfig {
  int steps = 50;
  double guidance = 5.0;
  double shift = 7.0;
  double cutoff_percentile = 0.1;
  Paradigm paradigm = Paradigm::flash;
  double add_noise_mu = 0.0;
  double add_noise_sigma = 0.1;
  uint64_t rng_seed = 0;
};

// Descending timestep list of length steps+1 from 1 to 0: the uniform grid
// i/steps warped by t' = shift*t / (1 + (shift-1)*t).  shift=1 is the uniform
// grid; the endpoints are fixed points for any shift.
std::vector<double> shifted_schedule(int steps, double shift);

// v_uncond + w * (v_cond - v_uncond).
Latent cfg_velocity(const Latent& v_uncond, const Latent& v_cond, double w);

// Explicit Euler on dz/dt = v; requires t_next < t_cur.
Latent euler_step(const Latent& z, const Latent& v, double t_cur, double t_next);

// Pixel-space conditioning: the *_noise paradigms add N(mu, sigma^2) to the
// condition image before encoding; the others encode it untouched.
Latent prepare_condition_latent(Paradigm p, const Video& cond_image, const LatentCodec& codec,
                                Rng& rng, double mu, double sigma);

struct AssembledInput {
  Latent channels;      // model state input
  Latent s_high;        // high-frequency map, when attached
  bool has_s_high = false;
  int z_offset = 0;     // channel index where the integrated state block starts
};

// Builds the denoiser input from the condition latent s (single frame) and
// the current state z.  Concat paradigms lay out [condition block | z]
// (mask first for inpainting); flash returns z - broadcast(phi(s)) plus the
// s_high map, with no raw s channels.
AssembledInput assemble_input(Paradigm p, const Latent& s, const Latent& z, const Denoiser* model,
                              double cutoff_percentile);

// Velocity field used by the sampling loop.  begin() is called once with the
// freshly drawn initial noise before integration starts.
class VelocitySource {
 public:
  virtual ~VelocitySource() = default;
  virtual void begin(const Latent& initial_noise) { (void)initial_noise; }
  virtual Latent velocity(const Latent& channels, const Latent* s_high, double t,
                          int cond_index) = 0;
};

// Real model evaluation.
class ModelVelocity : public VelocitySource {
 public:
  explicit ModelVelocity(const Denoiser& model) : model_(model) {}
  Latent velocity(const Latent& channels, const Latent* s_high, double t, int cond_index) override {
    return model_.backbone_forward(channels, s_high, t, cond_index, cache_);
  }

 private:
  const Denoiser& model_;
  ForwardCache cache_;
};

// Constant field eps - x for a memorized target: transports the initial noise
// exactly onto x along the straight path, independent of the inputs.
class OracleVelocity : public VelocitySource {
 public:
  explicit OracleVelocity(Latent x) : x_(std::move(x)) {}
  void begin(const Latent& initial_noise) override { eps_ = initial_noise; }
  Latent velocity(const Latent&, const Latent*, double, int) override;

 private:
  Latent x_, eps_;
};

// Full sampling loop: draw z, assemble per paradigm, integrate the shifted
// schedule with classifier-free guidance, decode.  The integrated state for
// flash is the shifted latent throughout; the learned projection is re-added
// before decoding (see finalize_latent).  Deterministic given (seed, inputs)
// on one thread.
Video sample(const Denoiser& model, const LatentCodec& codec, const Video& cond_image,
             int cond_class, int frames, const SamplerConfig& cfg,
             VelocitySource* source_override = nullptr);

// Decode-side convention for the integrated state, kept in one place so the
// re-add of the projection is switchable: flash returns state + broadcast(phi),
// every other paradigm passes the state through.
Latent finalize_latent(Paradigm p, const Latent& state, const Latent* phi_s);

}  // namespace flashflow
