#pragma once

#include <cstdint>
#include <vector>

#include "flashflow/latents.hpp"
#include "flashflow/model.hpp"
#include "flashflow/samplers.hpp"
#include "flashflow/tensor.hpp"

namespace flashflow {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double adam_eps = 1e-15;
  double weight_decay = 1e-2;
  double ema_decay = 0.9999;
  double prompt_dropout = 0.1;
  double cutoff_lo = 0.05, cutoff_hi = 0.95;  // per-sample percentile range
  int batch_size = 16;
  int steps = 500;
  uint64_t seed = 0;
  Paradigm paradigm = Paradigm::flash;
  // Flash ablation switches (ignored by the concat paradigms).
  bool use_fourier = true;
  bool use_shifting = true;
  double add_noise_mu = 0.0, add_noise_sigma = 0.1;
  // Data echo, so a checkpoint knows what to sample.
  int frames = 48, height = 16, width = 16;
};

struct TrainItem {
  Latent x;       // whole-clip latent
  Latent s;       // clean first-frame latent
  Video s_pixel;  // pixel first frame (noised per step by the *_noise paradigms)
  int motion_class = 0;
};

TrainItem make_train_item(const Video& clip, int motion_class, const LatentCodec& codec);

// Model configuration implied by a training configuration.
DenoiserConfig denoiser_config_for(const TrainConfig& cfg, int latent_channels);

struct StepStats {
  double loss = 0.0;
  int dropped = 0;  // null-prompt samples in the batch
};

// Null-prompt selection, split out so its statistics are testable directly.
bool drop_prompt(Rng& rng, double p);

// One optimizer step per call: draw a batch, accumulate gradients sample by
// sample (fixed order for bitwise reproducibility), AdamW update, EMA update.
class Trainer {
 public:
  Trainer(Denoiser& model, const LatentCodec& codec, const TrainConfig& cfg);

  StepStats step(const std::vector<TrainItem>& data);
  int steps_done() const { return step_; }
  void set_steps_done(int step) { step_ = step; }  // checkpoint resume

  // Warmup-limited decay: min(configured, (1 + step) / (10 + step)), so early
  // steps move the shadow weights meaningfully on short runs.
  static double effective_ema_decay(double configured, int step);

 private:
  Denoiser& model_;
  const LatentCodec& codec_;
  TrainConfig cfg_;
  Rng rng_;
  int step_ = 0;
  ForwardCache cache_;
  PhiCache phi_cache_;
};

}  // namespace flashflow
