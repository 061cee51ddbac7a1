#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flashflow/rng.hpp"
#include "flashflow/tensor.hpp"

namespace flashflow {

// One named parameter tensor with its gradient, optimizer moments, and EMA
// shadow.  Parameters are f32; gradients accumulate in double.
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> w;
  std::vector<double> g;
  std::vector<float> m, v;
  std::vector<float> ema;

  size_t size() const { return w.size(); }
};

struct DenoiserConfig {
  int latent_channels = 12;  // channels of the predicted velocity
  int in_channels = 12;      // channels of the state input (paradigm dependent)
  bool fourier_guidance = true;   // separate embedding path for the high-frequency map
  bool latent_shifting = true;    // learnable projection of the condition frame
  int hidden_dim = 64;
  int num_blocks = 2;
  int num_classes = 8;       // motion classes; row num_classes of the table is the null prompt
  int patch = 2;             // spatial patch side for tokenization
};

// Sinusoidal embedding of a scalar position (sin half then cos half).
std::vector<double> sinusoidal_embedding(double pos, int dim, double scale);

struct PhiCache {
  Latent in, pre1, act1, out;
};

struct ForwardCache {
  int T = 0, Hp = 0, Wp = 0, n_tok = 0;
  std::vector<double> tok_in;    // n_tok x in_dim
  std::vector<double> ftok;      // (Hp*Wp) x f_dim, frame-shared
  std::vector<double> time_emb;  // D
  std::vector<double> pos;       // n_tok x D, rebuilt only when dims change
  std::vector<std::vector<double>> hs;    // num_blocks+1 levels of n_tok x D
  std::vector<std::vector<double>> pre;   // per block, fc1 output
  std::vector<std::vector<double>> act;   // per block, silu(pre)
  std::vector<std::vector<double>> mix;   // per block, fc2(act) before gating
  std::vector<std::vector<double>> gate;  // per block, D gate values
  std::vector<std::vector<double>> frame_mean;  // per block, T x D token means
  std::vector<std::vector<double>> clip_mean;   // per block, D token mean
  std::vector<std::vector<double>> cell_mean;   // per block, (Hp*Wp) x D over frames
  std::vector<double> out_tok;            // n_tok x out_dim
  int cond_row = -1;
  bool has_fourier = false;
};

// Velocity predictor over patch tokens: per-token linear embedding of the
// state — each token sees its own patch and the temporal mean patch of its
// spatial cell — plus the high-frequency map when enabled, added sinusoidal
// time / position embeddings and a learned class embedding, then time-gated
// residual MLP blocks and a linear head back to patches.  Each block also mixes in
// projected token means — per frame, per spatial cell across frames, and
// whole clip — so predictions can use global context; all three projections
// start at zero.  The cross-frame cell mean matters most: the shift of the
// state is constant over frames while the noise is not, so averaging over
// frames at a fixed location is how the net can recover the condition.  The condition projection
// is two 3x3x3 convolutions with SiLU between; its final layer starts at
// zero, as does the whole high-frequency path, so at initialization the net
// is exactly a text-to-video style predictor of the unshifted state.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
  ParamTensor& tensor(const std::string& name);
  size_t param_count() const;

  // Learnable projection of a single condition frame (t == 1).
  Latent phi_forward(const Latent& s, PhiCache& cache) const;
  // Accumulates parameter gradients for the projection given d(loss)/d(phi).
  void phi_backward(const Latent& dphi, const PhiCache& cache);

  // Predicted velocity for a state clip.  s_high is required exactly when
  // fourier_guidance is on, and must be a single frame of latent_channels.
  // cond_index in [0, num_classes]; num_classes selects the null prompt.
  Latent backbone_forward(const Latent& z_in, const Latent* s_high, double t, int cond_index,
                          ForwardCache& cache) const;
  // Accumulates parameter gradients; returns d(loss)/d(z_in).
  Latent backbone_backward(const Latent& dv, const ForwardCache& cache);

  void zero_grads();
  // ema <- decay * ema + (1 - decay) * w for every tensor.
  void ema_step(double decay);
  // Copy with EMA weights swapped in as the live parameters.
  Denoiser ema_snapshot() const;

 private:
  DenoiserConfig cfg_;
  std::vector<ParamTensor> params_;
  int in_dim_ = 0, f_dim_ = 0, out_dim_ = 0;

  ParamTensor& add_param(const std::string& name, std::vector<int> shape, double init_std,
                         Rng& rng);
  const ParamTensor& ctensor(const std::string& name) const;
};

// In-place EMA update of one shadow vector.
void ema_update(std::vector<float>& ema, const std::vector<float>& params, double decay);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-15;
  double weight_decay = 1e-2;  // decoupled
};

// One AdamW step (bias-corrected, decoupled weight decay) over every tensor.
// step is 1-based.
void adamw_step(Denoiser& model, const AdamConfig& cfg, int step);

}  // namespace flashflow
