#include "flashflow/samplers.hpp"

#include <cmath>
#include <stdexcept>

#include "flashflow/errors.hpp"
#include "flashflow/flowmatch.hpp"
#include "flashflow/fourier.hpp"

namespace flashflow {

const char* paradigm_name(Paradigm p) {
  switch (p) {
    case Paradigm::repeat_concat: return "repeat_concat";
    case Paradigm::repeat_concat_noise: return "repeat_concat_noise";
    case Paradigm::zero_pad_concat: return "zero_pad_concat";
    case Paradigm::zero_pad_concat_noise: return "zero_pad_concat_noise";
    case Paradigm::inpainting: return "inpainting";
    case Paradigm::inpainting_noise: return "inpainting_noise";
    case Paradigm::flash: return "flash";
  }
  throw std::invalid_argument("paradigm_name: unknown paradigm");
}

Paradigm paradigm_from_name(const std::string& name) {
  for (int i = 0; i < kNumParadigms; ++i) {
    const Paradigm p = static_cast<Paradigm>(i);
    if (name == paradigm_name(p)) return p;
  }
  throw std::invalid_argument("unknown paradigm: " + name);
}

bool paradigm_adds_noise(Paradigm p) {
  return p == Paradigm::repeat_concat_noise || p == Paradigm::zero_pad_concat_noise ||
         p == Paradigm::inpainting_noise;
}

bool paradigm_uses_mask(Paradigm p) {
  return p == Paradigm::inpainting || p == Paradigm::inpainting_noise;
}

int paradigm_in_channels(Paradigm p, int latent_channels) {
  if (p == Paradigm::flash) return latent_channels;
  if (paradigm_uses_mask(p)) return 2 * latent_channels + 1;
  return 2 * latent_channels;
}

std::vector<double> shifted_schedule(int steps, double shift) {
  if (steps < 1) throw std::invalid_argument("shifted_schedule: steps must be >= 1");
  if (shift < 1.0) throw std::invalid_argument("shifted_schedule: shift must be >= 1");
  std::vector<double> out(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    const double u = static_cast<double>(steps - i) / steps;
    out[i] = shift * u / (1.0 + (shift - 1.0) * u);
  }
  out.front() = 1.0;
  out.back() = 0.0;
  return out;
}

Latent cfg_velocity(const Latent& v_uncond, const Latent& v_cond, double w) {
  if (!v_uncond.same_shape(v_cond)) throw std::invalid_argument("cfg_velocity: shape mismatch");
  if (w < 0.0) throw std::invalid_argument("cfg_velocity: negative guidance");
  Latent out(v_uncond.c, v_uncond.t, v_uncond.h, v_uncond.w);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = v_uncond.v[i] + w * (v_cond.v[i] - v_uncond.v[i]);
  return out;
}

Latent euler_step(const Latent& z, const Latent& v, double t_cur, double t_next) {
  if (!z.same_shape(v)) throw std::invalid_argument("euler_step: shape mismatch");
  if (!(t_next < t_cur)) throw std::invalid_argument("euler_step: t_next must be < t_cur");
  Latent out(z.c, z.t, z.h, z.w);
  const double dt = t_next - t_cur;
  for (size_t i = 0; i < z.v.size(); ++i) out.v[i] = z.v[i] + dt * v.v[i];
  return out;
}

Latent prepare_condition_latent(Paradigm p, const Video& cond_image, const LatentCodec& codec,
                                Rng& rng, double mu, double sigma) {
  if (cond_image.t != 1) throw std::invalid_argument("prepare_condition_latent: expects one frame");
  if (!paradigm_adds_noise(p)) return codec.encode(cond_image);
  Video noised = cond_image;
  for (double& x : noised.v) x += mu + sigma * rng.normal();
  return codec.encode(noised);
}

AssembledInput assemble_input(Paradigm p, const Latent& s, const Latent& z, const Denoiser* model,
                              double cutoff_percentile) {
  if (s.t != 1) throw std::invalid_argument("assemble_input: condition must be a single frame");
  if (s.c != z.c || s.h != z.h || s.w != z.w)
    throw std::invalid_argument("assemble_input: condition/state dims mismatch");
  const int C = z.c, T = z.t;

  AssembledInput out;
  if (p == Paradigm::flash) {
    if (!model) throw std::invalid_argument("assemble_input: flash needs the model projection");
    const auto& mc = model->config();
    out.channels = z;
    if (mc.latent_shifting) {
      PhiCache cache;
      const Latent phi = model->phi_forward(s, cache);
      for (int c = 0; c < C; ++c)
        for (int k = 0; k < T; ++k)
          for (int i = 0; i < z.h; ++i)
            for (int j = 0; j < z.w; ++j) out.channels.at(c, k, i, j) -= phi.at(c, 0, i, j);
    }
    if (mc.fourier_guidance) {
      out.s_high = high_freq_magnitude(s, cutoff_percentile);
      out.has_s_high = true;
    }
    out.z_offset = 0;
    return out;
  }

  const bool mask = paradigm_uses_mask(p);
  const int cond_channels = mask ? C + 1 : C;
  out.channels = Latent(cond_channels + C, T, z.h, z.w);
  out.z_offset = cond_channels;
  int base = 0;
  if (mask) {
    // Binary temporal indicator: frame 0 is conditioning, the rest generated.
    for (int i = 0; i < z.h; ++i)
      for (int j = 0; j < z.w; ++j) out.channels.at(0, 0, i, j) = 1.0;
    base = 1;
  }
  const bool repeat = (p == Paradigm::repeat_concat || p == Paradigm::repeat_concat_noise);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < T; ++k) {
      if (!repeat && k > 0) break;  // zero-pad style: only frame 0 carries s
      for (int i = 0; i < z.h; ++i)
        for (int j = 0; j < z.w; ++j) out.channels.at(base + c, k, i, j) = s.at(c, 0, i, j);
    }
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < T; ++k)
      for (int i = 0; i < z.h; ++i)
        for (int j = 0; j < z.w; ++j) out.channels.at(cond_channels + c, k, i, j) = z.at(c, k, i, j);
  return out;
}

Latent OracleVelocity::velocity(const Latent&, const Latent*, double, int) {
  if (!x_.same_shape(eps_))
    throw std::invalid_argument("OracleVelocity: begin() not called with matching noise");
  return velocity_target(x_, eps_);
}

Latent finalize_latent(Paradigm p, const Latent& state, const Latent* phi_s) {
  if (p != Paradigm::flash || !phi_s) return state;
  Latent out = state;
  for (int c = 0; c < out.c; ++c)
    for (int k = 0; k < out.t; ++k)
      for (int i = 0; i < out.h; ++i)
        for (int j = 0; j < out.w; ++j) out.at(c, k, i, j) += phi_s->at(c, 0, i, j);
  return out;
}

Video sample(const Denoiser& model, const LatentCodec& codec, const Video& cond_image,
             int cond_class, int frames, const SamplerConfig& cfg,
             VelocitySource* source_override) {
  const DenoiserConfig& mc = model.config();
  const int C = mc.latent_channels;
  if (cfg.steps < 1 || cfg.guidance < 0.0 || cfg.shift < 1.0 ||
      !(cfg.cutoff_percentile > 0.0 && cfg.cutoff_percentile <= 1.0))
    throw std::invalid_argument("sample: invalid sampler config");
  if (frames < 1) throw std::invalid_argument("sample: frames must be >= 1");
  if (cond_image.t != 1 || cond_image.c != codec.pixel_channels())
    throw std::invalid_argument("sample: condition image must be one pixel frame");
  if (cond_class < 0 || cond_class >= mc.num_classes)
    throw std::invalid_argument("sample: cond_class out of range");
  if (paradigm_in_channels(cfg.paradigm, C) != mc.in_channels)
    throw std::invalid_argument("sample: model input channels do not fit the paradigm");
  if (cfg.paradigm != Paradigm::flash && (mc.latent_shifting || mc.fourier_guidance))
    throw std::invalid_argument("sample: concat paradigms use a plain backbone");

  const Latent s_clean = codec.encode(cond_image);

  // Streams: the initial noise is drawn first from its own stream so every
  // paradigm consumes identical z for a given seed, regardless of whether the
  // condition path draws noise afterwards.
  Rng rng_init(mix_seed(cfg.rng_seed, 1));
  Latent z(C, frames, s_clean.h, s_clean.w);
  for (double& x : z.v) x = rng_init.normal();
  Rng rng_cond(mix_seed(cfg.rng_seed, 2));
  const Latent s = prepare_condition_latent(cfg.paradigm, cond_image, codec, rng_cond,
                                            cfg.add_noise_mu, cfg.add_noise_sigma);

  AssembledInput assembled = assemble_input(cfg.paradigm, s, z, &model, cfg.cutoff_percentile);

  // The projection of the clean condition, needed again at decode time.
  Latent phi;
  const Latent* phi_ptr = nullptr;
  if (cfg.paradigm == Paradigm::flash && mc.latent_shifting) {
    PhiCache cache;
    phi = model.phi_forward(s_clean, cache);
    phi_ptr = &phi;
  }

  ModelVelocity model_source(model);
  VelocitySource* source = source_override ? source_override : &model_source;
  source->begin(z);

  // The moving state: for flash the assembled channels already are the
  // shifted state; for concat paradigms it is the trailing z block.
  Latent state(C, frames, s_clean.h, s_clean.w);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < frames; ++k)
      for (int i = 0; i < state.h; ++i)
        for (int j = 0; j < state.w; ++j)
          state.at(c, k, i, j) = assembled.channels.at(assembled.z_offset + c, k, i, j);

  const std::vector<double> schedule = shifted_schedule(cfg.steps, cfg.shift);
  const Latent* s_high = assembled.has_s_high ? &assembled.s_high : nullptr;
  for (int i = 0; i < cfg.steps; ++i) {
    const double t_cur = schedule[i], t_next = schedule[i + 1];
    for (int c = 0; c < C; ++c)
      for (int k = 0; k < frames; ++k)
        for (int y = 0; y < state.h; ++y)
          for (int x = 0; x < state.w; ++x)
            assembled.channels.at(assembled.z_offset + c, k, y, x) = state.at(c, k, y, x);
    const Latent v_uncond = source->velocity(assembled.channels, s_high, t_cur, mc.num_classes);
    const Latent v_cond = source->velocity(assembled.channels, s_high, t_cur, cond_class);
    const Latent v = cfg_velocity(v_uncond, v_cond, cfg.guidance);
    if (!v.same_shape(state)) throw NumericError("sample: velocity shape mismatch");
    state = euler_step(state, v, t_cur, t_next);
    if (!all_finite(state))
      throw NumericError("sample: non-finite state after step " + std::to_string(i) + " at t=" +
                         std::to_string(t_cur));
  }

  return codec.decode(finalize_latent(cfg.paradigm, state, phi_ptr));
}

}  // namespace flashflow
