#include "flashflow/train.hpp"

#include <cmath>
#include <stdexcept>

#include "flashflow/errors.hpp"
#include "flashflow/flowmatch.hpp"
#include "flashflow/fourier.hpp"

namespace flashflow {

TrainItem make_train_item(const Video& clip, int motion_class, const LatentCodec& codec) {
  TrainItem item;
  item.x = codec.encode(clip);
  item.s = Latent(item.x.c, 1, item.x.h, item.x.w);
  for (int c = 0; c < item.x.c; ++c)
    for (int i = 0; i < item.x.h; ++i)
      for (int j = 0; j < item.x.w; ++j) item.s.at(c, 0, i, j) = item.x.at(c, 0, i, j);
  item.s_pixel = Video(clip.c, 1, clip.h, clip.w);
  for (int c = 0; c < clip.c; ++c)
    for (int i = 0; i < clip.h; ++i)
      for (int j = 0; j < clip.w; ++j) item.s_pixel.at(c, 0, i, j) = clip.at(c, 0, i, j);
  item.motion_class = motion_class;
  return item;
}

DenoiserConfig denoiser_config_for(const TrainConfig& cfg, int latent_channels) {
  DenoiserConfig mc;
  mc.latent_channels = latent_channels;
  mc.in_channels = paradigm_in_channels(cfg.paradigm, latent_channels);
  if (cfg.paradigm == Paradigm::flash) {
    mc.fourier_guidance = cfg.use_fourier;
    mc.latent_shifting = cfg.use_shifting;
  } else {
    mc.fourier_guidance = false;
    mc.latent_shifting = false;
  }
  return mc;
}

bool drop_prompt(Rng& rng, double p) { return rng.uniform() < p; }

double Trainer::effective_ema_decay(double configured, int step) {
  const double warmup = (1.0 + step) / (10.0 + step);
  return std::min(configured, warmup);
}

Trainer::Trainer(Denoiser& model, const LatentCodec& codec, const TrainConfig& cfg)
    : model_(model), codec_(codec), cfg_(cfg), rng_(mix_seed(cfg.seed, 0x7261)) {
  if (cfg.batch_size < 1) throw std::invalid_argument("Trainer: batch_size must be >= 1");
  if (!(cfg.prompt_dropout >= 0.0 && cfg.prompt_dropout <= 1.0))
    throw std::invalid_argument("Trainer: prompt_dropout outside [0, 1]");
  if (!(cfg.cutoff_lo > 0.0 && cfg.cutoff_lo <= cfg.cutoff_hi && cfg.cutoff_hi <= 1.0))
    throw std::invalid_argument("Trainer: bad cutoff percentile range");
  const DenoiserConfig expect = denoiser_config_for(cfg, model.config().latent_channels);
  const DenoiserConfig& have = model.config();
  if (have.in_channels != expect.in_channels || have.fourier_guidance != expect.fourier_guidance ||
      have.latent_shifting != expect.latent_shifting)
    throw std::invalid_argument("Trainer: model shape does not match the training paradigm");
}

StepStats Trainer::step(const std::vector<TrainItem>& data) {
  if (data.empty()) throw std::invalid_argument("Trainer::step: empty dataset");
  const int B = cfg_.batch_size;
  const int C = model_.config().latent_channels;
  const int null_row = model_.config().num_classes;

  // Batch indices first, then one derived seed per sample, so the top-level
  // stream advances by a fixed count per step.
  std::vector<int> idx(B);
  for (int b = 0; b < B; ++b) idx[b] = rng_.uniform_int(static_cast<int>(data.size()));
  std::vector<uint64_t> seeds(B);
  for (int b = 0; b < B; ++b) seeds[b] = rng_.next_u64();

  model_.zero_grads();
  StepStats stats;
  for (int b = 0; b < B; ++b) {
    const TrainItem& item = data[idx[b]];
    Rng srng(seeds[b]);

    const double t = sample_timestep(srng);
    Latent eps(item.x.c, item.x.t, item.x.h, item.x.w);
    for (double& e : eps.v) e = srng.normal();
    const bool dropped = drop_prompt(srng, cfg_.prompt_dropout);
    const double cutoff_p = srng.uniform_in(cfg_.cutoff_lo, cfg_.cutoff_hi);
    const int cond = dropped ? null_row : item.motion_class;
    if (dropped) ++stats.dropped;

    Latent z_in;
    Latent s_high;
    const Latent* s_high_ptr = nullptr;
    bool shifted = false;
    if (cfg_.paradigm == Paradigm::flash) {
      if (model_.config().latent_shifting) {
        const Latent phi = model_.phi_forward(item.s, phi_cache_);
        z_in = shifted_state(item.x, eps, t, phi);
        shifted = true;
      } else {
        z_in = interpolate(item.x, eps, t);
      }
      if (model_.config().fourier_guidance) {
        s_high = high_freq_magnitude(item.s, cutoff_p);
        s_high_ptr = &s_high;
      }
    } else {
      const Latent z_t = interpolate(item.x, eps, t);
      const Latent s_cond = prepare_condition_latent(cfg_.paradigm, item.s_pixel, codec_, srng,
                                                     cfg_.add_noise_mu, cfg_.add_noise_sigma);
      z_in = assemble_input(cfg_.paradigm, s_cond, z_t, nullptr, cfg_.cutoff_lo).channels;
    }

    const Latent target = velocity_target(item.x, eps);
    const Latent v = model_.backbone_forward(z_in, s_high_ptr, t, cond, cache_);
    const double sample_loss = mse_loss(v, target);
    if (!std::isfinite(sample_loss))
      throw NumericError("train step " + std::to_string(step_ + 1) + ": non-finite loss");
    stats.loss += sample_loss;

    // d(batch loss)/dv for batch loss = mean over samples of per-sample MSE.
    Latent dv(v.c, v.t, v.h, v.w);
    const double scale = 2.0 / (static_cast<double>(v.v.size()) * B);
    for (size_t i = 0; i < v.v.size(); ++i) dv.v[i] = scale * (v.v[i] - target.v[i]);

    const Latent dz = model_.backbone_backward(dv, cache_);
    if (shifted) {
      // The projection enters negated and broadcast over frames.
      Latent dphi(C, 1, dz.h, dz.w);
      for (int c = 0; c < C; ++c)
        for (int k = 0; k < dz.t; ++k)
          for (int i = 0; i < dz.h; ++i)
            for (int j = 0; j < dz.w; ++j) dphi.at(c, 0, i, j) -= dz.at(c, k, i, j);
      model_.phi_backward(dphi, phi_cache_);
    }
  }
  stats.loss /= B;

  ++step_;
  AdamConfig ac;
  ac.learning_rate = cfg_.learning_rate;
  ac.beta1 = cfg_.beta1;
  ac.beta2 = cfg_.beta2;
  ac.eps = cfg_.adam_eps;
  ac.weight_decay = cfg_.weight_decay;
  adamw_step(model_, ac, step_);
  model_.ema_step(effective_ema_decay(cfg_.ema_decay, step_));
  return stats;
}

}  // namespace flashflow
