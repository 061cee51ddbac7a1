#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "flashflow/checkpoint.hpp"
#include "flashflow/errors.hpp"
#include "flashflow/synth.hpp"
#include "flashflow/train.hpp"

using namespace flashflow;
namespace fs = std::filesystem;

namespace {

const LatentCodec& codec() {
  static const LatentCodec c(kPixelChannels);
  return c;
}

std::vector<TrainItem> tiny_dataset(int n = 3, int frames = 4) {
  SplitConfig cfg;
  cfg.num_videos = n;
  cfg.frames = frames;
  cfg.height = 8;
  cfg.width = 8;
  cfg.seed = 21;
  std::vector<TrainItem> items;
  for (const auto& d : make_dataset(cfg))
    items.push_back(make_train_item(d.video, d.spec.motion_class, codec()));
  return items;
}

TrainConfig tiny_train_config(Paradigm p = Paradigm::flash) {
  TrainConfig cfg;
  cfg.paradigm = p;
  cfg.batch_size = 2;
  cfg.steps = 8;
  cfg.learning_rate = 1e-3;
  cfg.frames = 4;
  cfg.height = 8;
  cfg.width = 8;
  return cfg;
}

Denoiser tiny_model(const TrainConfig& cfg, uint64_t seed = 1) {
  DenoiserConfig mc = denoiser_config_for(cfg, codec().latent_channels());
  mc.hidden_dim = 8;
  mc.num_blocks = 1;
  mc.num_classes = kNumMotionClasses;
  return Denoiser(mc, seed);
}

}  // namespace

TEST_CASE("train items carry the whole-clip latent and its clean first frame") {
  const auto items = tiny_dataset(2);
  REQUIRE(items.size() == 2);
  const TrainItem& it = items[0];
  CHECK(it.x.c == 12);
  CHECK(it.x.t == 4);
  CHECK(it.s.t == 1);
  CHECK(it.s_pixel.t == 1);
  CHECK(it.s_pixel.c == 3);
  for (int c = 0; c < it.x.c; ++c)
    for (int i = 0; i < it.x.h; ++i)
      for (int j = 0; j < it.x.w; ++j) CHECK(it.s.at(c, 0, i, j) == it.x.at(c, 0, i, j));
  CHECK(it.motion_class >= 0);
  CHECK(it.motion_class < kNumMotionClasses);
}

TEST_CASE("model configuration follows the paradigm and its ablation switches") {
  TrainConfig cfg = tiny_train_config(Paradigm::flash);
  DenoiserConfig mc = denoiser_config_for(cfg, 12);
  CHECK(mc.in_channels == 12);
  CHECK(mc.fourier_guidance);
  CHECK(mc.latent_shifting);

  cfg.use_fourier = false;
  mc = denoiser_config_for(cfg, 12);
  CHECK(!mc.fourier_guidance);
  CHECK(mc.latent_shifting);

  cfg = tiny_train_config(Paradigm::inpainting);
  cfg.use_fourier = true;  // ignored off the flash paradigm
  mc = denoiser_config_for(cfg, 12);
  CHECK(mc.in_channels == 25);
  CHECK(!mc.fourier_guidance);
  CHECK(!mc.latent_shifting);
}

TEST_CASE("prompt dropout fires at the configured rate") {
  Rng rng(99);
  const int n = 40000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += drop_prompt(rng, 0.1) ? 1 : 0;
  CHECK(std::abs(hits / static_cast<double>(n) - 0.1) < 0.01);
  for (int i = 0; i < 100; ++i) {
    CHECK(!drop_prompt(rng, 0.0));
    CHECK(drop_prompt(rng, 1.0));
  }
}

TEST_CASE("ema decay warms up as (1+step)/(10+step) capped by the configured value") {
  CHECK(Trainer::effective_ema_decay(0.9999, 1) == doctest::Approx(2.0 / 11.0).epsilon(1e-12));
  CHECK(Trainer::effective_ema_decay(0.9999, 100) == doctest::Approx(101.0 / 110.0).epsilon(1e-12));
  CHECK(Trainer::effective_ema_decay(0.9999, 1000000) == doctest::Approx(0.9999).epsilon(1e-12));
  CHECK(Trainer::effective_ema_decay(0.05, 50) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("trainer validates its configuration and the model fit") {
  TrainConfig cfg = tiny_train_config();
  Denoiser model = tiny_model(cfg);

  TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(Trainer(model, codec(), bad), std::invalid_argument);
  bad = cfg;
  bad.cutoff_lo = 0.0;
  CHECK_THROWS_AS(Trainer(model, codec(), bad), std::invalid_argument);
  bad = cfg;
  bad.cutoff_lo = 0.9;
  bad.cutoff_hi = 0.1;
  CHECK_THROWS_AS(Trainer(model, codec(), bad), std::invalid_argument);
  bad = cfg;
  bad.prompt_dropout = 1.5;
  CHECK_THROWS_AS(Trainer(model, codec(), bad), std::invalid_argument);

  // Concat-paradigm config against a flash-shaped model.
  TrainConfig concat = tiny_train_config(Paradigm::repeat_concat);
  CHECK_THROWS_AS(Trainer(model, codec(), concat), std::invalid_argument);

  Trainer ok(model, codec(), cfg);
  CHECK_THROWS_AS(ok.step({}), std::invalid_argument);
}

TEST_CASE("a short run drives the loss down and keeps everything finite") {
  const auto data = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  cfg.learning_rate = 3e-3;
  Denoiser model = tiny_model(cfg);
  Trainer trainer(model, codec(), cfg);

  double first = 0.0, last = 0.0;
  for (int s = 0; s < 40; ++s) {
    const StepStats stats = trainer.step(data);
    CHECK(std::isfinite(stats.loss));
    CHECK(stats.loss >= 0.0);
    CHECK(stats.dropped >= 0);
    CHECK(stats.dropped <= cfg.batch_size);
    if (s == 0) first = stats.loss;
    last = stats.loss;
  }
  CHECK(trainer.steps_done() == 40);
  CHECK(last < first);
  for (const ParamTensor* t : model.tensors()) {
    for (float x : t->w) CHECK(std::isfinite(x));
    for (float x : t->ema) CHECK(std::isfinite(x));
  }
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  const auto data = tiny_dataset();
  const TrainConfig cfg = tiny_train_config();

  Denoiser m1 = tiny_model(cfg);
  Denoiser m2 = tiny_model(cfg);
  Trainer t1(m1, codec(), cfg);
  Trainer t2(m2, codec(), cfg);
  for (int s = 0; s < 3; ++s) {
    const StepStats a = t1.step(data);
    const StepStats b = t2.step(data);
    CHECK(a.loss == b.loss);
    CHECK(a.dropped == b.dropped);
  }
  const auto ts1 = m1.tensors();
  const auto ts2 = m2.tensors();
  for (size_t i = 0; i < ts1.size(); ++i) {
    CHECK(ts1[i]->w == ts2[i]->w);
    CHECK(ts1[i]->ema == ts2[i]->ema);
    CHECK(ts1[i]->m == ts2[i]->m);
  }

  TrainConfig other = cfg;
  other.seed = 123;
  Denoiser m3 = tiny_model(other);
  Trainer t3(m3, codec(), other);
  bool any_diff = false;
  for (int s = 0; s < 3; ++s) {
    if (t3.step(data).loss != t1.step(data).loss) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("prompt dropout bookkeeping hits the extremes") {
  const auto data = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  cfg.prompt_dropout = 1.0;
  Denoiser m = tiny_model(cfg);
  Trainer t(m, codec(), cfg);
  CHECK(t.step(data).dropped == cfg.batch_size);

  cfg.prompt_dropout = 0.0;
  Denoiser m2 = tiny_model(cfg);
  Trainer t2(m2, codec(), cfg);
  CHECK(t2.step(data).dropped == 0);
}

TEST_CASE("every paradigm trains without blowing up") {
  const auto data = tiny_dataset();
  for (int i = 0; i < kNumParadigms; ++i) {
    TrainConfig cfg = tiny_train_config(static_cast<Paradigm>(i));
    Denoiser m = tiny_model(cfg);
    Trainer t(m, codec(), cfg);
    for (int s = 0; s < 3; ++s) {
      const StepStats stats = t.step(data);
      CHECK(std::isfinite(stats.loss));
    }
  }
}

TEST_CASE("ablation switches change the flash training trajectory") {
  const auto data = tiny_dataset();
  TrainConfig full = tiny_train_config();
  TrainConfig no_fourier = full;
  no_fourier.use_fourier = false;
  Denoiser mf = tiny_model(full);
  Denoiser mnf = tiny_model(no_fourier);
  Trainer tf(mf, codec(), full);
  Trainer tnf(mnf, codec(), no_fourier);
  // Same seed, different model wiring: the runs part ways.
  double a = 0.0, b = 0.0;
  for (int s = 0; s < 2; ++s) {
    a = tf.step(data).loss;
    b = tnf.step(data).loss;
  }
  CHECK(a != b);
}

TEST_CASE("checkpoints round-trip weights, optimizer state, and configuration") {
  const auto data = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  cfg.seed = 0xDEADBEEFCAFE1234ULL;
  cfg.paradigm = Paradigm::flash;
  Denoiser model = tiny_model(cfg);
  Trainer trainer(model, codec(), cfg);
  for (int s = 0; s < 3; ++s) trainer.step(data);

  const fs::path path = fs::temp_directory_path() / "flashflow_test_ckpt.flck";
  save_checkpoint(path, model, cfg, trainer.steps_done());
  const LoadedCheckpoint loaded = load_checkpoint(path);

  CHECK(loaded.step == 3);
  CHECK(loaded.train_cfg.seed == cfg.seed);
  CHECK(loaded.train_cfg.paradigm == Paradigm::flash);
  CHECK(loaded.train_cfg.batch_size == cfg.batch_size);
  CHECK(loaded.train_cfg.learning_rate == doctest::Approx(cfg.learning_rate));
  CHECK(loaded.train_cfg.frames == cfg.frames);
  CHECK(loaded.model.config().hidden_dim == 8);
  CHECK(loaded.model.config().in_channels == 12);
  CHECK(loaded.model.config().fourier_guidance);

  const auto got = loaded.model.tensors();
  const auto want = model.tensors();
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i]->name == want[i]->name);
    CHECK(got[i]->w == want[i]->w);
    CHECK(got[i]->ema == want[i]->ema);
    CHECK(got[i]->m == want[i]->m);
    CHECK(got[i]->v == want[i]->v);
  }
}

TEST_CASE("checkpoint loader rejects corrupted files") {
  const fs::path good = fs::temp_directory_path() / "flashflow_test_ckpt2.flck";
  TrainConfig cfg = tiny_train_config();
  Denoiser model = tiny_model(cfg);
  save_checkpoint(good, model, cfg, 0);

  std::ifstream in(good, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  const fs::path bad_magic = fs::temp_directory_path() / "flashflow_bad_magic.flck";
  std::string tampered = data;
  tampered[0] = 'X';
  std::ofstream(bad_magic, std::ios::binary).write(tampered.data(), tampered.size());
  CHECK_THROWS_AS(load_checkpoint(bad_magic), ArtifactError);

  const fs::path truncated = fs::temp_directory_path() / "flashflow_truncated.flck";
  std::ofstream(truncated, std::ios::binary).write(data.data(), data.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(truncated), ArtifactError);

  const fs::path trailing = fs::temp_directory_path() / "flashflow_trailing.flck";
  std::string extra = data + "x";
  std::ofstream(trailing, std::ios::binary).write(extra.data(), extra.size());
  CHECK_THROWS_AS(load_checkpoint(trailing), ArtifactError);

  CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "flashflow_missing.flck"),
                  ArtifactError);
}
