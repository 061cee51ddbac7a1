#include "flashflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "flashflow/errors.hpp"

namespace flashflow {
namespace {

constexpr uint32_t kVersion = 1;

struct Entry {
  std::vector<int> shape;
  std::vector<float> data;
};

void put_u16(std::string& buf, uint16_t x) {
  buf.push_back(static_cast<char>(x & 0xff));
  buf.push_back(static_cast<char>((x >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t x) {
  put_u16(buf, static_cast<uint16_t>(x & 0xffff));
  put_u16(buf, static_cast<uint16_t>(x >> 16));
}

void put_f32(std::string& buf, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(buf, bits);
}

void put_entry(std::string& buf, const std::string& name, const std::vector<int>& shape,
               const std::vector<float>& data) {
  if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: name too long");
  put_u16(buf, static_cast<uint16_t>(name.size()));
  buf += name;
  put_u32(buf, static_cast<uint32_t>(shape.size()));
  for (int d : shape) put_u32(buf, static_cast<uint32_t>(d));
  for (float f : data) put_f32(buf, f);
}

void put_scalar(std::string& buf, const std::string& name, double value) {
  put_entry(buf, name, {1}, {static_cast<float>(value)});
}

class Reader {
 public:
  explicit Reader(const std::string& data) : d_(data) {}
  bool done() const { return off_ == d_.size(); }
  uint16_t u16() {
    need(2);
    const auto* p = bytes();
    off_ += 2;
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    const uint32_t lo = u16();
    return lo | (static_cast<uint32_t>(u16()) << 16);
  }
  float f32() {
    const uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = d_.substr(off_, n);
    off_ += n;
    return s;
  }

 private:
  const unsigned char* bytes() const {
    return reinterpret_cast<const unsigned char*>(d_.data()) + off_;
  }
  void need(size_t n) const {
    if (off_ + n > d_.size()) throw ArtifactError("checkpoint: truncated file");
  }
  const std::string& d_;
  size_t off_ = 0;
};

void seed_chunks(uint64_t seed, std::vector<std::pair<std::string, double>>& out,
                 const std::string& prefix) {
  for (int i = 0; i < 4; ++i)
    out.emplace_back(prefix + std::to_string(i),
                     static_cast<double>((seed >> (16 * i)) & 0xffff));
}

uint64_t seed_from_chunks(const std::map<std::string, Entry>& entries, const std::string& prefix) {
  uint64_t seed = 0;
  for (int i = 0; i < 4; ++i) {
    const auto it = entries.find(prefix + std::to_string(i));
    if (it == entries.end()) throw ArtifactError("checkpoint: missing " + prefix + std::to_string(i));
    seed |= (static_cast<uint64_t>(it->second.data.at(0)) & 0xffff) << (16 * i);
  }
  return seed;
}

double scalar(const std::map<std::string, Entry>& entries, const std::string& name) {
  const auto it = entries.find(name);
  if (it == entries.end()) throw ArtifactError("checkpoint: missing entry " + name);
  if (it->second.data.size() != 1) throw ArtifactError("checkpoint: entry " + name + " not scalar");
  return it->second.data[0];
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model,
                     const TrainConfig& tc, int step) {
  std::vector<std::pair<std::string, double>> scalars;
  const DenoiserConfig& mc = model.config();
  scalars.emplace_back("state/step", step);
  scalars.emplace_back("cfg/model/latent_channels", mc.latent_channels);
  scalars.emplace_back("cfg/model/in_channels", mc.in_channels);
  scalars.emplace_back("cfg/model/fourier_guidance", mc.fourier_guidance ? 1 : 0);
  scalars.emplace_back("cfg/model/latent_shifting", mc.latent_shifting ? 1 : 0);
  scalars.emplace_back("cfg/model/hidden_dim", mc.hidden_dim);
  scalars.emplace_back("cfg/model/num_blocks", mc.num_blocks);
  scalars.emplace_back("cfg/model/num_classes", mc.num_classes);
  scalars.emplace_back("cfg/model/patch", mc.patch);
  scalars.emplace_back("cfg/train/learning_rate", tc.learning_rate);
  scalars.emplace_back("cfg/train/beta1", tc.beta1);
  scalars.emplace_back("cfg/train/beta2", tc.beta2);
  scalars.emplace_back("cfg/train/adam_eps", tc.adam_eps);
  scalars.emplace_back("cfg/train/weight_decay", tc.weight_decay);
  scalars.emplace_back("cfg/train/ema_decay", tc.ema_decay);
  scalars.emplace_back("cfg/train/prompt_dropout", tc.prompt_dropout);
  scalars.emplace_back("cfg/train/cutoff_lo", tc.cutoff_lo);
  scalars.emplace_back("cfg/train/cutoff_hi", tc.cutoff_hi);
  scalars.emplace_back("cfg/train/batch_size", tc.batch_size);
  scalars.emplace_back("cfg/train/steps", tc.steps);
  scalars.emplace_back("cfg/train/paradigm", static_cast<int>(tc.paradigm));
  scalars.emplace_back("cfg/train/use_fourier", tc.use_fourier ? 1 : 0);
  scalars.emplace_back("cfg/train/use_shifting", tc.use_shifting ? 1 : 0);
  scalars.emplace_back("cfg/train/add_noise_mu", tc.add_noise_mu);
  scalars.emplace_back("cfg/train/add_noise_sigma", tc.add_noise_sigma);
  scalars.emplace_back("cfg/train/frames", tc.frames);
  scalars.emplace_back("cfg/train/height", tc.height);
  scalars.emplace_back("cfg/train/width", tc.width);
  seed_chunks(tc.seed, scalars, "cfg/train/seed_");

  const auto tensors = model.tensors();
  std::string buf = "FLCK";
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<uint32_t>(4 * tensors.size() + scalars.size()));
  for (const ParamTensor* t : tensors) put_entry(buf, "param/" + t->name, t->shape, t->w);
  for (const ParamTensor* t : tensors) put_entry(buf, "ema/" + t->name, t->shape, t->ema);
  for (const ParamTensor* t : tensors) put_entry(buf, "opt/m/" + t->name, t->shape, t->m);
  for (const ParamTensor* t : tensors) put_entry(buf, "opt/v/" + t->name, t->shape, t->v);
  for (const auto& [name, value] : scalars) put_scalar(buf, name, value);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("save_checkpoint: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ArtifactError("save_checkpoint: short write to " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("load_checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(data);
  if (r.str(4) != "FLCK") throw ArtifactError("load_checkpoint: bad magic in " + path.string());
  if (r.u32() != kVersion) throw ArtifactError("load_checkpoint: unsupported version");
  const uint32_t count = r.u32();

  std::map<std::string, Entry> entries;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const uint32_t rank = r.u32();
    if (rank > 8) throw ArtifactError("load_checkpoint: implausible rank");
    Entry e;
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = r.u32();
      e.shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    if (numel > (1u << 28)) throw ArtifactError("load_checkpoint: implausible tensor size");
    e.data.resize(numel);
    for (size_t j = 0; j < numel; ++j) e.data[j] = r.f32();
    if (!entries.emplace(name, std::move(e)).second)
      throw ArtifactError("load_checkpoint: duplicate entry " + name);
  }
  if (!r.done()) throw ArtifactError("load_checkpoint: trailing bytes");

  DenoiserConfig mc;
  mc.latent_channels = static_cast<int>(scalar(entries, "cfg/model/latent_channels"));
  mc.in_channels = static_cast<int>(scalar(entries, "cfg/model/in_channels"));
  mc.fourier_guidance = scalar(entries, "cfg/model/fourier_guidance") != 0;
  mc.latent_shifting = scalar(entries, "cfg/model/latent_shifting") != 0;
  mc.hidden_dim = static_cast<int>(scalar(entries, "cfg/model/hidden_dim"));
  mc.num_blocks = static_cast<int>(scalar(entries, "cfg/model/num_blocks"));
  mc.num_classes = static_cast<int>(scalar(entries, "cfg/model/num_classes"));
  mc.patch = static_cast<int>(scalar(entries, "cfg/model/patch"));

  TrainConfig tc;
  tc.learning_rate = scalar(entries, "cfg/train/learning_rate");
  tc.beta1 = scalar(entries, "cfg/train/beta1");
  tc.beta2 = scalar(entries, "cfg/train/beta2");
  tc.adam_eps = scalar(entries, "cfg/train/adam_eps");
  tc.weight_decay = scalar(entries, "cfg/train/weight_decay");
  tc.ema_decay = scalar(entries, "cfg/train/ema_decay");
  tc.prompt_dropout = scalar(entries, "cfg/train/prompt_dropout");
  tc.cutoff_lo = scalar(entries, "cfg/train/cutoff_lo");
  tc.cutoff_hi = scalar(entries, "cfg/train/cutoff_hi");
  tc.batch_size = static_cast<int>(scalar(entries, "cfg/train/batch_size"));
  tc.steps = static_cast<int>(scalar(entries, "cfg/train/steps"));
  tc.paradigm = static_cast<Paradigm>(static_cast<int>(scalar(entries, "cfg/train/paradigm")));
  tc.use_fourier = scalar(entries, "cfg/train/use_fourier") != 0;
  tc.use_shifting = scalar(entries, "cfg/train/use_shifting") != 0;
  tc.add_noise_mu = scalar(entries, "cfg/train/add_noise_mu");
  tc.add_noise_sigma = scalar(entries, "cfg/train/add_noise_sigma");
  tc.frames = static_cast<int>(scalar(entries, "cfg/train/frames"));
  tc.height = static_cast<int>(scalar(entries, "cfg/train/height"));
  tc.width = static_cast<int>(scalar(entries, "cfg/train/width"));
  tc.seed = seed_from_chunks(entries, "cfg/train/seed_");

  LoadedCheckpoint loaded{Denoiser(mc, 0), tc, static_cast<int>(scalar(entries, "state/step"))};
  for (ParamTensor* t : loaded.model.tensors()) {
    for (const char* kind : {"param/", "ema/", "opt/m/", "opt/v/"}) {
      const std::string key = kind + t->name;
      const auto it = entries.find(key);
      if (it == entries.end()) throw ArtifactError("load_checkpoint: missing tensor " + key);
      if (it->second.data.size() != t->size())
        throw ArtifactError("load_checkpoint: size mismatch for " + key);
      if (kind == std::string("param/"))
        t->w = it->second.data;
      else if (kind == std::string("ema/"))
        t->ema = it->second.data;
      else if (kind == std::string("opt/m/"))
        t->m = it->second.data;
      else
        t->v = it->second.data;
    }
  }
  return loaded;
}

}  // namespace flashflow
