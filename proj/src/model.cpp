#include "flashflow/model.hpp"

#include <cmath>
#include <stdexcept>

namespace flashflow {
namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double dsilu(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// Conv3d, kernel 3, stride 1, zero padding 1.  w layout (oc, ic, dt, dy, dx).
Latent conv3d(const Latent& in, const std::vector<float>& w, const std::vector<float>& b,
              int c_out) {
  Latent out(c_out, in.t, in.h, in.w);
  for (int oc = 0; oc < c_out; ++oc)
    for (int t = 0; t < in.t; ++t)
      for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
          double acc = b[oc];
          for (int ic = 0; ic < in.c; ++ic)
            for (int dt = -1; dt <= 1; ++dt) {
              const int tt = t + dt;
              if (tt < 0 || tt >= in.t) continue;
              for (int dy = -1; dy <= 1; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= in.h) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                  const int xx = x + dx;
                  if (xx < 0 || xx >= in.w) continue;
                  const size_t wi =
                      ((((static_cast<size_t>(oc) * in.c + ic) * 3 + dt + 1) * 3 + dy + 1) * 3 +
                       dx + 1);
                  acc += static_cast<double>(w[wi]) * in.at(ic, tt, yy, xx);
                }
              }
            }
          out.at(oc, t, y, x) = acc;
        }
  return out;
}

// Gradients of conv3d: accumulates dw/db and the input gradient.
void conv3d_backward(const Latent& in, const std::vector<float>& w, const Latent& dout,
                     std::vector<double>& dw, std::vector<double>& db, Latent* din) {
  const int c_out = dout.c;
  for (int oc = 0; oc < c_out; ++oc)
    for (int t = 0; t < in.t; ++t)
      for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
          const double go = dout.at(oc, t, y, x);
          if (go == 0.0) continue;
          db[oc] += go;
          for (int ic = 0; ic < in.c; ++ic)
            for (int dt = -1; dt <= 1; ++dt) {
              const int tt = t + dt;
              if (tt < 0 || tt >= in.t) continue;
              for (int dy = -1; dy <= 1; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= in.h) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                  const int xx = x + dx;
                  if (xx < 0 || xx >= in.w) continue;
                  const size_t wi =
                      ((((static_cast<size_t>(oc) * in.c + ic) * 3 + dt + 1) * 3 + dy + 1) * 3 +
                       dx + 1);
                  dw[wi] += go * in.at(ic, tt, yy, xx);
                  if (din) din->at(ic, tt, yy, xx) += static_cast<double>(w[wi]) * go;
                }
              }
            }
        }
}

}  // namespace

std::vector<double> sinusoidal_embedding(double pos, int dim, double scale) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
  const int half = dim / 2;
  std::vector<double> out(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[i] = std::sin(pos * scale * freq);
    out[half + i] = std::cos(pos * scale * freq);
  }
  return out;
}

ParamTensor& Denoiser::add_param(const std::string& name, std::vector<int> shape, double init_std,
                                 Rng& rng) {
  ParamTensor t;
  t.name = name;
  t.shape = std::move(shape);
  size_t n = 1;
  for (int d : t.shape) n *= static_cast<size_t>(d);
  t.w.assign(n, 0.0f);
  if (init_std > 0.0)
    for (auto& x : t.w) x = static_cast<float>(rng.normal() * init_std);
  t.g.assign(n, 0.0);
  t.m.assign(n, 0.0f);
  t.v.assign(n, 0.0f);
  t.ema = t.w;
  params_.push_back(std::move(t));
  return params_.back();
}

Denoiser::Denoiser(const DenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.latent_channels < 1 || cfg.in_channels < 1)
    throw std::invalid_argument("Denoiser: channel counts must be >= 1");
  if (cfg.hidden_dim < 4 || cfg.hidden_dim % 4 != 0)
    throw std::invalid_argument("Denoiser: hidden_dim must be a positive multiple of 4");
  if (cfg.num_blocks < 1) throw std::invalid_argument("Denoiser: num_blocks must be >= 1");
  if (cfg.num_classes < 1) throw std::invalid_argument("Denoiser: num_classes must be >= 1");
  if (cfg.patch < 1) throw std::invalid_argument("Denoiser: patch must be >= 1");

  const int C = cfg.latent_channels, D = cfg.hidden_dim, P = cfg.patch;
  // Each token embeds its own patch plus the temporal mean patch of its
  // spatial cell; the mean averages the noise down, which is what lets the
  // net read the frame-constant shift out of the state.
  in_dim_ = cfg.in_channels * P * P * 2;
  f_dim_ = C * P * P;
  out_dim_ = C * P * P;

  Rng rng(seed);
  if (cfg.latent_shifting) {
    add_param("phi/conv1_w", {C, C, 3, 3, 3}, 1.0 / std::sqrt(27.0 * C), rng);
    add_param("phi/conv1_b", {C}, 0.0, rng);
    // Final projection layer starts at zero so the shift vanishes at init.
    add_param("phi/conv2_w", {C, C, 3, 3, 3}, 0.0, rng);
    add_param("phi/conv2_b", {C}, 0.0, rng);
  }
  add_param("patch/w", {D, in_dim_}, 1.0 / std::sqrt(static_cast<double>(in_dim_)), rng);
  add_param("patch/b", {D}, 0.0, rng);
  if (cfg.fourier_guidance) {
    // Whole high-frequency path starts at zero: at init the prediction cannot
    // depend on it.
    add_param("fourier/w", {D, f_dim_}, 0.0, rng);
    add_param("fourier/b", {D}, 0.0, rng);
  }
  for (int l = 0; l < cfg.num_blocks; ++l) {
    const std::string p = "block" + std::to_string(l) + "/";
    add_param(p + "fc1_w", {D, D}, 1.0 / std::sqrt(static_cast<double>(D)), rng);
    add_param(p + "fc1_b", {D}, 0.0, rng);
    add_param(p + "fc2_w", {D, D}, 1.0 / std::sqrt(static_cast<double>(D)), rng);
    add_param(p + "fc2_b", {D}, 0.0, rng);
    // Time gate starts as the identity (gate == 1) and learns modulation.
    add_param(p + "gate_w", {D, D}, 0.0, rng);
    ParamTensor& gb = add_param(p + "gate_b", {D}, 0.0, rng);
    std::fill(gb.w.begin(), gb.w.end(), 1.0f);
    gb.ema = gb.w;
    // Cross-token context (projected per-frame, per-cell-across-frames, and
    // whole-clip token means) starts at zero so tokens begin fully
    // independent.
    add_param(p + "ctx_frame_w", {D, D}, 0.0, rng);
    add_param(p + "ctx_cell_w", {D, D}, 0.0, rng);
    add_param(p + "ctx_clip_w", {D, D}, 0.0, rng);
  }
  add_param("head/w", {out_dim_, D}, 1.0 / std::sqrt(static_cast<double>(D)), rng);
  add_param("head/b", {out_dim_}, 0.0, rng);
  add_param("cond/table", {cfg.num_classes + 1, D}, 0.02, rng);
}

std::vector<ParamTensor*> Denoiser::tensors() {
  std::vector<ParamTensor*> out;
  out.reserve(params_.size());
  for (auto& t : params_) out.push_back(&t);
  return out;
}

std::vector<const ParamTensor*> Denoiser::tensors() const {
  std::vector<const ParamTensor*> out;
  out.reserve(params_.size());
  for (const auto& t : params_) out.push_back(&t);
  return out;
}

ParamTensor& Denoiser::tensor(const std::string& name) {
  for (auto& t : params_)
    if (t.name == name) return t;
  throw std::invalid_argument("Denoiser: no tensor named " + name);
}

const ParamTensor& Denoiser::ctensor(const std::string& name) const {
  for (const auto& t : params_)
    if (t.name == name) return t;
  throw std::invalid_argument("Denoiser: no tensor named " + name);
}

size_t Denoiser::param_count() const {
  size_t n = 0;
  for (const auto& t : params_) n += t.size();
  return n;
}

Latent Denoiser::phi_forward(const Latent& s, PhiCache& cache) const {
  if (!cfg_.latent_shifting)
    throw std::invalid_argument("phi_forward: model has no shift projection");
  if (s.c != cfg_.latent_channels) throw std::invalid_argument("phi_forward: channel mismatch");
  if (s.t != 1) throw std::invalid_argument("phi_forward: expects a single frame");

  cache.in = s;
  cache.pre1 = conv3d(s, ctensor("phi/conv1_w").w, ctensor("phi/conv1_b").w, cfg_.latent_channels);
  cache.act1 = cache.pre1;
  for (double& x : cache.act1.v) x = silu(x);
  cache.out =
      conv3d(cache.act1, ctensor("phi/conv2_w").w, ctensor("phi/conv2_b").w, cfg_.latent_channels);
  return cache.out;
}

void Denoiser::phi_backward(const Latent& dphi, const PhiCache& cache) {
  if (!dphi.same_shape(cache.out)) throw std::invalid_argument("phi_backward: shape mismatch");
  ParamTensor& c2w = tensor("phi/conv2_w");
  ParamTensor& c2b = tensor("phi/conv2_b");
  Latent dact1(cache.act1.c, cache.act1.t, cache.act1.h, cache.act1.w);
  conv3d_backward(cache.act1, c2w.w, dphi, c2w.g, c2b.g, &dact1);
  for (size_t i = 0; i < dact1.v.size(); ++i) dact1.v[i] *= dsilu(cache.pre1.v[i]);
  ParamTensor& c1w = tensor("phi/conv1_w");
  ParamTensor& c1b = tensor("phi/conv1_b");
  conv3d_backward(cache.in, c1w.w, dact1, c1w.g, c1b.g, nullptr);
}

Latent Denoiser::backbone_forward(const Latent& z_in, const Latent* s_high, double t,
                                  int cond_index, ForwardCache& cache) const {
  const int C = cfg_.latent_channels, D = cfg_.hidden_dim, P = cfg_.patch;
  if (z_in.c != cfg_.in_channels) throw std::invalid_argument("backbone_forward: bad state channels");
  if (z_in.t < 1 || z_in.h < P || z_in.w < P || z_in.h % P != 0 || z_in.w % P != 0)
    throw std::invalid_argument("backbone_forward: dims not divisible by patch");
  if (cfg_.fourier_guidance) {
    if (!s_high || s_high->c != C || s_high->t != 1 || s_high->h != z_in.h || s_high->w != z_in.w)
      throw std::invalid_argument("backbone_forward: bad high-frequency map");
  } else if (s_high) {
    throw std::invalid_argument("backbone_forward: unexpected high-frequency map");
  }
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("backbone_forward: t outside [0, 1]");
  if (cond_index < 0 || cond_index > cfg_.num_classes)
    throw std::invalid_argument("backbone_forward: cond_index out of range");

  const int T = z_in.t, Hp = z_in.h / P, Wp = z_in.w / P;
  const int n_tok = T * Hp * Wp;

  // Fixed position features, rebuilt only when the token grid changes.
  if (cache.T != T || cache.Hp != Hp || cache.Wp != Wp ||
      cache.pos.size() != static_cast<size_t>(n_tok) * D) {
    cache.pos.assign(static_cast<size_t>(n_tok) * D, 0.0);
    const int quarter = D / 4;
    for (int k = 0; k < T; ++k)
      for (int pi = 0; pi < Hp; ++pi)
        for (int pj = 0; pj < Wp; ++pj) {
          const int n = (k * Hp + pi) * Wp + pj;
          const int q = pi * Wp + pj;
          double* row = cache.pos.data() + static_cast<size_t>(n) * D;
          for (int i = 0; i < quarter; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / quarter);
            row[2 * i] = std::sin(k * freq);
            row[2 * i + 1] = std::cos(k * freq);
            row[D / 2 + 2 * i] = std::sin(q * freq);
            row[D / 2 + 2 * i + 1] = std::cos(q * freq);
          }
        }
  }
  cache.T = T;
  cache.Hp = Hp;
  cache.Wp = Wp;
  cache.n_tok = n_tok;
  cache.cond_row = cond_index;
  cache.has_fourier = cfg_.fourier_guidance;

  // Patchify the state: own patch first, then the cell's temporal mean patch.
  const int base = in_dim_ / 2;
  cache.tok_in.assign(static_cast<size_t>(n_tok) * in_dim_, 0.0);
  for (int k = 0; k < T; ++k)
    for (int pi = 0; pi < Hp; ++pi)
      for (int pj = 0; pj < Wp; ++pj) {
        const int n = (k * Hp + pi) * Wp + pj;
        double* tok = cache.tok_in.data() + static_cast<size_t>(n) * in_dim_;
        for (int ic = 0; ic < cfg_.in_channels; ++ic)
          for (int dr = 0; dr < P; ++dr)
            for (int dc = 0; dc < P; ++dc)
              tok[(ic * P + dr) * P + dc] = z_in.at(ic, k, pi * P + dr, pj * P + dc);
      }
  for (int pi = 0; pi < Hp; ++pi)
    for (int pj = 0; pj < Wp; ++pj) {
      const int q = pi * Wp + pj;
      std::vector<double> mean(base, 0.0);
      for (int k = 0; k < T; ++k) {
        const double* tok = cache.tok_in.data() + (static_cast<size_t>(k * Hp * Wp + q)) * in_dim_;
        for (int i = 0; i < base; ++i) mean[i] += tok[i];
      }
      for (int i = 0; i < base; ++i) mean[i] /= T;
      for (int k = 0; k < T; ++k) {
        double* tok = cache.tok_in.data() + (static_cast<size_t>(k * Hp * Wp + q)) * in_dim_;
        for (int i = 0; i < base; ++i) tok[base + i] = mean[i];
      }
    }

  cache.time_emb = sinusoidal_embedding(t, D, 1000.0);
  const float* cond_row =
      ctensor("cond/table").w.data() + static_cast<size_t>(cond_index) * D;

  // Frame-shared embedding of the high-frequency map, one vector per spatial
  // cell.
  std::vector<double> femb;
  if (cfg_.fourier_guidance) {
    cache.ftok.assign(static_cast<size_t>(Hp) * Wp * f_dim_, 0.0);
    for (int pi = 0; pi < Hp; ++pi)
      for (int pj = 0; pj < Wp; ++pj) {
        double* tok = cache.ftok.data() + (static_cast<size_t>(pi) * Wp + pj) * f_dim_;
        for (int ic = 0; ic < C; ++ic)
          for (int dr = 0; dr < P; ++dr)
            for (int dc = 0; dc < P; ++dc)
              tok[(ic * P + dr) * P + dc] = s_high->at(ic, 0, pi * P + dr, pj * P + dc);
      }
    const ParamTensor& fw = ctensor("fourier/w");
    const ParamTensor& fb = ctensor("fourier/b");
    femb.assign(static_cast<size_t>(Hp) * Wp * D, 0.0);
    for (int q = 0; q < Hp * Wp; ++q) {
      const double* tok = cache.ftok.data() + static_cast<size_t>(q) * f_dim_;
      double* e = femb.data() + static_cast<size_t>(q) * D;
      for (int d = 0; d < D; ++d) {
        double acc = fb.w[d];
        const float* row = fw.w.data() + static_cast<size_t>(d) * f_dim_;
        for (int i = 0; i < f_dim_; ++i) acc += static_cast<double>(row[i]) * tok[i];
        e[d] = acc;
      }
    }
  }

  // Token embedding plus the added features.
  cache.hs.assign(cfg_.num_blocks + 1, {});
  cache.hs[0].assign(static_cast<size_t>(n_tok) * D, 0.0);
  {
    const ParamTensor& pw = ctensor("patch/w");
    const ParamTensor& pb = ctensor("patch/b");
    for (int n = 0; n < n_tok; ++n) {
      const double* tok = cache.tok_in.data() + static_cast<size_t>(n) * in_dim_;
      double* h = cache.hs[0].data() + static_cast<size_t>(n) * D;
      const int q = n % (Hp * Wp);
      const double* fe = femb.empty() ? nullptr : femb.data() + static_cast<size_t>(q) * D;
      const double* pe = cache.pos.data() + static_cast<size_t>(n) * D;
      for (int d = 0; d < D; ++d) {
        double acc = pb.w[d];
        const float* row = pw.w.data() + static_cast<size_t>(d) * in_dim_;
        for (int i = 0; i < in_dim_; ++i) acc += static_cast<double>(row[i]) * tok[i];
        acc += cache.time_emb[d] + static_cast<double>(cond_row[d]) + pe[d];
        if (fe) acc += fe[d];
        h[d] = acc;
      }
    }
  }

  // Gated residual MLP blocks with an ungated cross-token context term.
  cache.pre.assign(cfg_.num_blocks, {});
  cache.act.assign(cfg_.num_blocks, {});
  cache.mix.assign(cfg_.num_blocks, {});
  cache.gate.assign(cfg_.num_blocks, {});
  cache.frame_mean.assign(cfg_.num_blocks, {});
  cache.cell_mean.assign(cfg_.num_blocks, {});
  cache.clip_mean.assign(cfg_.num_blocks, {});
  const int cells = Hp * Wp;
  for (int l = 0; l < cfg_.num_blocks; ++l) {
    const std::string p = "block" + std::to_string(l) + "/";
    const ParamTensor& f1w = ctensor(p + "fc1_w");
    const ParamTensor& f1b = ctensor(p + "fc1_b");
    const ParamTensor& f2w = ctensor(p + "fc2_w");
    const ParamTensor& f2b = ctensor(p + "fc2_b");
    const ParamTensor& gw = ctensor(p + "gate_w");
    const ParamTensor& gb = ctensor(p + "gate_b");
    const ParamTensor& cfw = ctensor(p + "ctx_frame_w");
    const ParamTensor& ctw = ctensor(p + "ctx_cell_w");
    const ParamTensor& ccw = ctensor(p + "ctx_clip_w");

    auto& gate = cache.gate[l];
    gate.assign(D, 0.0);
    for (int d = 0; d < D; ++d) {
      double acc = gb.w[d];
      const float* row = gw.w.data() + static_cast<size_t>(d) * D;
      for (int j = 0; j < D; ++j) acc += static_cast<double>(row[j]) * cache.time_emb[j];
      gate[d] = acc;
    }

    // Token means per frame, per spatial cell, and whole clip, then their
    // projections; the frame and clip parts are constant within a frame, the
    // cell part within a spatial column.
    auto& mf = cache.frame_mean[l];
    auto& mq = cache.cell_mean[l];
    auto& mg = cache.clip_mean[l];
    mf.assign(static_cast<size_t>(T) * D, 0.0);
    mq.assign(static_cast<size_t>(cells) * D, 0.0);
    mg.assign(D, 0.0);
    for (int n = 0; n < n_tok; ++n) {
      const double* h = cache.hs[l].data() + static_cast<size_t>(n) * D;
      double* f = mf.data() + static_cast<size_t>(n / cells) * D;
      double* q = mq.data() + static_cast<size_t>(n % cells) * D;
      for (int d = 0; d < D; ++d) {
        f[d] += h[d];
        q[d] += h[d];
      }
    }
    for (int k = 0; k < T; ++k) {
      double* f = mf.data() + static_cast<size_t>(k) * D;
      for (int d = 0; d < D; ++d) {
        f[d] /= cells;
        mg[d] += f[d];
      }
    }
    for (int d = 0; d < D; ++d) mg[d] /= T;
    for (size_t i = 0; i < mq.size(); ++i) mq[i] /= T;
    std::vector<double> ctx_f(static_cast<size_t>(T) * D, 0.0);
    for (int k = 0; k < T; ++k) {
      const double* f = mf.data() + static_cast<size_t>(k) * D;
      double* cx = ctx_f.data() + static_cast<size_t>(k) * D;
      for (int d = 0; d < D; ++d) {
        double acc = 0.0;
        const float* frow = cfw.w.data() + static_cast<size_t>(d) * D;
        const float* crow = ccw.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j)
          acc += static_cast<double>(frow[j]) * f[j] + static_cast<double>(crow[j]) * mg[j];
        cx[d] = acc;
      }
    }
    std::vector<double> ctx_q(static_cast<size_t>(cells) * D, 0.0);
    for (int q = 0; q < cells; ++q) {
      const double* cm = mq.data() + static_cast<size_t>(q) * D;
      double* cx = ctx_q.data() + static_cast<size_t>(q) * D;
      for (int d = 0; d < D; ++d) {
        double acc = 0.0;
        const float* row = ctw.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) acc += static_cast<double>(row[j]) * cm[j];
        cx[d] = acc;
      }
    }

    auto& pre = cache.pre[l];
    auto& act = cache.act[l];
    auto& mix = cache.mix[l];
    pre.assign(static_cast<size_t>(n_tok) * D, 0.0);
    act.assign(static_cast<size_t>(n_tok) * D, 0.0);
    mix.assign(static_cast<size_t>(n_tok) * D, 0.0);
    cache.hs[l + 1].assign(static_cast<size_t>(n_tok) * D, 0.0);
    for (int n = 0; n < n_tok; ++n) {
      const double* h = cache.hs[l].data() + static_cast<size_t>(n) * D;
      const double* cxf = ctx_f.data() + static_cast<size_t>(n / cells) * D;
      const double* cxq = ctx_q.data() + static_cast<size_t>(n % cells) * D;
      double* pr = pre.data() + static_cast<size_t>(n) * D;
      double* ac = act.data() + static_cast<size_t>(n) * D;
      double* mx = mix.data() + static_cast<size_t>(n) * D;
      double* hn = cache.hs[l + 1].data() + static_cast<size_t>(n) * D;
      for (int d = 0; d < D; ++d) {
        double acc = f1b.w[d];
        const float* row = f1w.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) acc += static_cast<double>(row[j]) * h[j];
        pr[d] = acc;
        ac[d] = silu(acc);
      }
      for (int d = 0; d < D; ++d) {
        double acc = f2b.w[d];
        const float* row = f2w.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) acc += static_cast<double>(row[j]) * ac[j];
        mx[d] = acc;
        hn[d] = h[d] + gate[d] * acc + cxf[d] + cxq[d];
      }
    }
  }

  // Linear head back to patches.
  cache.out_tok.assign(static_cast<size_t>(n_tok) * out_dim_, 0.0);
  {
    const ParamTensor& hw = ctensor("head/w");
    const ParamTensor& hb = ctensor("head/b");
    const auto& hl = cache.hs[cfg_.num_blocks];
    for (int n = 0; n < n_tok; ++n) {
      const double* h = hl.data() + static_cast<size_t>(n) * D;
      double* o = cache.out_tok.data() + static_cast<size_t>(n) * out_dim_;
      for (int d = 0; d < out_dim_; ++d) {
        double acc = hb.w[d];
        const float* row = hw.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) acc += static_cast<double>(row[j]) * h[j];
        o[d] = acc;
      }
    }
  }

  Latent v(C, T, z_in.h, z_in.w);
  for (int k = 0; k < T; ++k)
    for (int pi = 0; pi < Hp; ++pi)
      for (int pj = 0; pj < Wp; ++pj) {
        const int n = (k * Hp + pi) * Wp + pj;
        const double* o = cache.out_tok.data() + static_cast<size_t>(n) * out_dim_;
        for (int ic = 0; ic < C; ++ic)
          for (int dr = 0; dr < P; ++dr)
            for (int dc = 0; dc < P; ++dc)
              v.at(ic, k, pi * P + dr, pj * P + dc) = o[(ic * P + dr) * P + dc];
      }
  return v;
}

Latent Denoiser::backbone_backward(const Latent& dv, const ForwardCache& cache) {
  const int C = cfg_.latent_channels, D = cfg_.hidden_dim, P = cfg_.patch;
  const int T = cache.T, Hp = cache.Hp, Wp = cache.Wp, n_tok = cache.n_tok;
  if (dv.c != C || dv.t != T || dv.h != Hp * P || dv.w != Wp * P)
    throw std::invalid_argument("backbone_backward: gradient shape mismatch");

  // Patchify the output gradient.
  std::vector<double> d_out(static_cast<size_t>(n_tok) * out_dim_, 0.0);
  for (int k = 0; k < T; ++k)
    for (int pi = 0; pi < Hp; ++pi)
      for (int pj = 0; pj < Wp; ++pj) {
        const int n = (k * Hp + pi) * Wp + pj;
        double* o = d_out.data() + static_cast<size_t>(n) * out_dim_;
        for (int ic = 0; ic < C; ++ic)
          for (int dr = 0; dr < P; ++dr)
            for (int dc = 0; dc < P; ++dc)
              o[(ic * P + dr) * P + dc] = dv.at(ic, k, pi * P + dr, pj * P + dc);
      }

  // Head.
  std::vector<double> dh(static_cast<size_t>(n_tok) * D, 0.0);
  {
    ParamTensor& hw = tensor("head/w");
    ParamTensor& hb = tensor("head/b");
    const auto& hl = cache.hs[cfg_.num_blocks];
    for (int n = 0; n < n_tok; ++n) {
      const double* h = hl.data() + static_cast<size_t>(n) * D;
      const double* o = d_out.data() + static_cast<size_t>(n) * out_dim_;
      double* dhn = dh.data() + static_cast<size_t>(n) * D;
      for (int d = 0; d < out_dim_; ++d) {
        const double go = o[d];
        if (go == 0.0) continue;
        hb.g[d] += go;
        double* gw = hw.g.data() + static_cast<size_t>(d) * D;
        const float* row = hw.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) {
          gw[j] += go * h[j];
          dhn[j] += static_cast<double>(row[j]) * go;
        }
      }
    }
  }

  // Blocks in reverse.
  const int cells = Hp * Wp;
  std::vector<double> dact(D), dpre(D), dmix(D), dback(D);
  for (int l = cfg_.num_blocks - 1; l >= 0; --l) {
    const std::string p = "block" + std::to_string(l) + "/";
    ParamTensor& f1w = tensor(p + "fc1_w");
    ParamTensor& f1b = tensor(p + "fc1_b");
    ParamTensor& f2w = tensor(p + "fc2_w");
    ParamTensor& f2b = tensor(p + "fc2_b");
    ParamTensor& gw = tensor(p + "gate_w");
    ParamTensor& gb = tensor(p + "gate_b");
    ParamTensor& cfw = tensor(p + "ctx_frame_w");
    ParamTensor& ctw = tensor(p + "ctx_cell_w");
    ParamTensor& ccw = tensor(p + "ctx_clip_w");
    const auto& gate = cache.gate[l];
    const auto& pre = cache.pre[l];
    const auto& act = cache.act[l];
    const auto& mix = cache.mix[l];
    const auto& h_in = cache.hs[l];
    std::vector<double> dgate(D, 0.0);

    // The context pullback needs the incoming gradient summed over tokens, so
    // collect those sums before the in-place update below.
    const auto& mf = cache.frame_mean[l];
    const auto& mq = cache.cell_mean[l];
    const auto& mg = cache.clip_mean[l];
    std::vector<double> frame_sum(static_cast<size_t>(T) * D, 0.0);
    std::vector<double> cell_sum(static_cast<size_t>(cells) * D, 0.0);
    std::vector<double> all_sum(D, 0.0);
    for (int n = 0; n < n_tok; ++n) {
      const double* dhn = dh.data() + static_cast<size_t>(n) * D;
      double* fs = frame_sum.data() + static_cast<size_t>(n / cells) * D;
      double* qs = cell_sum.data() + static_cast<size_t>(n % cells) * D;
      for (int d = 0; d < D; ++d) {
        fs[d] += dhn[d];
        qs[d] += dhn[d];
      }
    }
    for (int k = 0; k < T; ++k) {
      const double* fs = frame_sum.data() + static_cast<size_t>(k) * D;
      for (int d = 0; d < D; ++d) all_sum[d] += fs[d];
    }
    std::vector<double> dmf(static_cast<size_t>(T) * D, 0.0), dmg(D, 0.0);
    std::vector<double> dmq(static_cast<size_t>(cells) * D, 0.0);
    for (int k = 0; k < T; ++k) {
      const double* fs = frame_sum.data() + static_cast<size_t>(k) * D;
      const double* mfk = mf.data() + static_cast<size_t>(k) * D;
      double* dmfk = dmf.data() + static_cast<size_t>(k) * D;
      for (int d = 0; d < D; ++d) {
        const double go = fs[d];
        if (go == 0.0) continue;
        double* g = cfw.g.data() + static_cast<size_t>(d) * D;
        const float* row = cfw.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) {
          g[j] += go * mfk[j];
          dmfk[j] += static_cast<double>(row[j]) * go;
        }
      }
    }
    for (int q = 0; q < cells; ++q) {
      const double* qs = cell_sum.data() + static_cast<size_t>(q) * D;
      const double* mqq = mq.data() + static_cast<size_t>(q) * D;
      double* dmqq = dmq.data() + static_cast<size_t>(q) * D;
      for (int d = 0; d < D; ++d) {
        const double go = qs[d];
        if (go == 0.0) continue;
        double* g = ctw.g.data() + static_cast<size_t>(d) * D;
        const float* row = ctw.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) {
          g[j] += go * mqq[j];
          dmqq[j] += static_cast<double>(row[j]) * go;
        }
      }
    }
    for (int d = 0; d < D; ++d) {
      const double go = all_sum[d];
      if (go == 0.0) continue;
      double* g = ccw.g.data() + static_cast<size_t>(d) * D;
      const float* row = ccw.w.data() + static_cast<size_t>(d) * D;
      for (int j = 0; j < D; ++j) {
        g[j] += go * mg[j];
        dmg[j] += static_cast<double>(row[j]) * go;
      }
    }

    for (int n = 0; n < n_tok; ++n) {
      double* dhn = dh.data() + static_cast<size_t>(n) * D;
      const double* pr = pre.data() + static_cast<size_t>(n) * D;
      const double* ac = act.data() + static_cast<size_t>(n) * D;
      const double* mx = mix.data() + static_cast<size_t>(n) * D;
      const double* h = h_in.data() + static_cast<size_t>(n) * D;
      for (int d = 0; d < D; ++d) {
        dgate[d] += dhn[d] * mx[d];
        dmix[d] = dhn[d] * gate[d];
      }
      std::fill(dact.begin(), dact.end(), 0.0);
      for (int d = 0; d < D; ++d) {
        const double go = dmix[d];
        if (go == 0.0) continue;
        f2b.g[d] += go;
        double* g2 = f2w.g.data() + static_cast<size_t>(d) * D;
        const float* row = f2w.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) {
          g2[j] += go * ac[j];
          dact[j] += static_cast<double>(row[j]) * go;
        }
      }
      for (int d = 0; d < D; ++d) dpre[d] = dact[d] * dsilu(pr[d]);
      std::fill(dback.begin(), dback.end(), 0.0);
      for (int d = 0; d < D; ++d) {
        const double go = dpre[d];
        if (go == 0.0) continue;
        f1b.g[d] += go;
        double* g1 = f1w.g.data() + static_cast<size_t>(d) * D;
        const float* row = f1w.w.data() + static_cast<size_t>(d) * D;
        for (int j = 0; j < D; ++j) {
          g1[j] += go * h[j];
          dback[j] += static_cast<double>(row[j]) * go;
        }
      }
      // dh for the level below: residual passthrough, the fc1 pullback, and
      // this token's share of the context means.
      const double* dmfk = dmf.data() + static_cast<size_t>(n / cells) * D;
      const double* dmqq = dmq.data() + static_cast<size_t>(n % cells) * D;
      for (int j = 0; j < D; ++j)
        dhn[j] += dback[j] + dmfk[j] / cells + dmqq[j] / T + dmg[j] / n_tok;
    }
    for (int d = 0; d < D; ++d) {
      gb.g[d] += dgate[d];
      double* g = gw.g.data() + static_cast<size_t>(d) * D;
      for (int j = 0; j < D; ++j) g[j] += dgate[d] * cache.time_emb[j];
    }
  }

  // Embedding stage.
  Latent dz(cfg_.in_channels, T, Hp * P, Wp * P);
  {
    ParamTensor& pw = tensor("patch/w");
    ParamTensor& pb = tensor("patch/b");
    ParamTensor& cond = tensor("cond/table");
    double* cond_g = cond.g.data() + static_cast<size_t>(cache.cond_row) * D;
    std::vector<double> dfemb;
    if (cache.has_fourier) dfemb.assign(static_cast<size_t>(Hp) * Wp * D, 0.0);
    const int base = in_dim_ / 2;
    std::vector<double> dtok(in_dim_);
    std::vector<double> dmean(static_cast<size_t>(Hp) * Wp * base, 0.0);
    for (int n = 0; n < n_tok; ++n) {
      const double* gd = dh.data() + static_cast<size_t>(n) * D;
      const double* tok = cache.tok_in.data() + static_cast<size_t>(n) * in_dim_;
      std::fill(dtok.begin(), dtok.end(), 0.0);
      for (int d = 0; d < D; ++d) {
        const double go = gd[d];
        if (go == 0.0) continue;
        pb.g[d] += go;
        cond_g[d] += go;
        double* gw = pw.g.data() + static_cast<size_t>(d) * in_dim_;
        const float* row = pw.w.data() + static_cast<size_t>(d) * in_dim_;
        for (int i = 0; i < in_dim_; ++i) {
          gw[i] += go * tok[i];
          dtok[i] += static_cast<double>(row[i]) * go;
        }
      }
      if (cache.has_fourier) {
        double* fe = dfemb.data() + static_cast<size_t>(n % (Hp * Wp)) * D;
        for (int d = 0; d < D; ++d) fe[d] += gd[d];
      }
      const int k = n / (Hp * Wp);
      const int pi = (n / Wp) % Hp;
      const int pj = n % Wp;
      double* dm = dmean.data() + (static_cast<size_t>(pi) * Wp + pj) * base;
      for (int i = 0; i < base; ++i) dm[i] += dtok[base + i];
      for (int ic = 0; ic < cfg_.in_channels; ++ic)
        for (int dr = 0; dr < P; ++dr)
          for (int dc = 0; dc < P; ++dc)
            dz.at(ic, k, pi * P + dr, pj * P + dc) = dtok[(ic * P + dr) * P + dc];
    }
    // Every frame of a cell feeds that cell's mean patch equally.
    for (int pi = 0; pi < Hp; ++pi)
      for (int pj = 0; pj < Wp; ++pj) {
        const double* dm = dmean.data() + (static_cast<size_t>(pi) * Wp + pj) * base;
        for (int k = 0; k < T; ++k)
          for (int ic = 0; ic < cfg_.in_channels; ++ic)
            for (int dr = 0; dr < P; ++dr)
              for (int dc = 0; dc < P; ++dc)
                dz.at(ic, k, pi * P + dr, pj * P + dc) += dm[(ic * P + dr) * P + dc] / T;
      }
    if (cache.has_fourier) {
      ParamTensor& fw = tensor("fourier/w");
      ParamTensor& fb = tensor("fourier/b");
      for (int q = 0; q < Hp * Wp; ++q) {
        const double* fe = dfemb.data() + static_cast<size_t>(q) * D;
        const double* tok = cache.ftok.data() + static_cast<size_t>(q) * f_dim_;
        for (int d = 0; d < D; ++d) {
          const double go = fe[d];
          if (go == 0.0) continue;
          fb.g[d] += go;
          double* gw = fw.g.data() + static_cast<size_t>(d) * f_dim_;
          for (int i = 0; i < f_dim_; ++i) gw[i] += go * tok[i];
        }
      }
    }
  }
  return dz;
}

void Denoiser::zero_grads() {
  for (auto& t : params_) std::fill(t.g.begin(), t.g.end(), 0.0);
}

void ema_update(std::vector<float>& ema, const std::vector<float>& params, double decay) {
  if (ema.size() != params.size()) throw std::invalid_argument("ema_update: size mismatch");
  for (size_t i = 0; i < ema.size(); ++i)
    ema[i] = static_cast<float>(decay * static_cast<double>(ema[i]) +
                                (1.0 - decay) * static_cast<double>(params[i]));
}

void Denoiser::ema_step(double decay) {
  for (auto& t : params_) ema_update(t.ema, t.w, decay);
}

Denoiser Denoiser::ema_snapshot() const {
  Denoiser copy = *this;
  for (auto& t : copy.params_) t.w = t.ema;
  return copy;
}

void adamw_step(Denoiser& model, const AdamConfig& cfg, int step) {
  if (step < 1) throw std::invalid_argument("adamw_step: step is 1-based");
  const double bc1 = 1.0 - std::pow(cfg.beta1, step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, step);
  for (ParamTensor* t : model.tensors()) {
    for (size_t i = 0; i < t->size(); ++i) {
      const double g = t->g[i];
      const double m = cfg.beta1 * static_cast<double>(t->m[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * static_cast<double>(t->v[i]) + (1.0 - cfg.beta2) * g * g;
      t->m[i] = static_cast<float>(m);
      t->v[i] = static_cast<float>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps) +
                            cfg.weight_decay * static_cast<double>(t->w[i]);
      t->w[i] = static_cast<float>(static_cast<double>(t->w[i]) - cfg.learning_rate * update);
    }
  }
}

}  // namespace flashflow
