#include "flashflow/commands.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "flashflow/checkpoint.hpp"
#include "flashflow/errors.hpp"
#include "flashflow/eval.hpp"
#include "flashflow/fourier.hpp"
#include "flashflow/latents.hpp"
#include "flashflow/pgm.hpp"
#include "flashflow/samplers.hpp"
#include "flashflow/synth.hpp"
#include "flashflow/threadpool.hpp"
#include "flashflow/train.hpp"

namespace flashflow {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json synth_defaults() {
  return json{
      {"out_dir", "data"},         {"num_in_domain", 64}, {"num_out_of_domain", 16},
      {"frames", 48},              {"height", 16},        {"width", 16},
      {"seed", 0},                 {"run_manifest", ""},
  };
}

json train_defaults() {
  return json{
      {"manifest", "data/manifest.csv"},
      {"split", "in_domain"},
      {"checkpoint_out", "checkpoint.flck"},
      {"paradigm", "flash"},
      {"use_fourier", true},
      {"use_shifting", true},
      {"learning_rate", 1e-3},
      {"beta1", 0.9},
      {"beta2", 0.999},
      {"adam_eps", 1e-15},
      {"weight_decay", 1e-2},
      {"ema_decay", 0.9999},
      {"prompt_dropout", 0.1},
      {"cutoff_lo", 0.05},
      {"cutoff_hi", 0.95},
      {"batch_size", 16},
      {"steps", 500},
      {"seed", 0},
      {"add_noise_mu", 0.0},
      {"add_noise_sigma", 0.1},
      {"hidden_dim", 64},
      {"num_blocks", 2},
      {"max_items", 0},
      {"log_every", 50},
      {"run_manifest", ""},
  };
}

json sample_defaults() {
  return json{
      {"checkpoint", "checkpoint.flck"},
      {"image", ""},
      {"class", 0},
      {"frames", 0},  // 0: frame count the checkpoint was trained for
      {"steps", 50},
      {"guidance", 5.0},
      {"shift", 7.0},
      {"cutoff", 0.1},
      {"add_noise_mu", 0.0},
      {"add_noise_sigma", 0.1},
      {"seed", 0},
      {"paradigm", ""},  // "": paradigm recorded in the checkpoint
      {"out", "sample.clip"},
      {"dump_pgm_dir", ""},
      {"run_manifest", ""},
  };
}

json eval_defaults() {
  return json{
      {"generated_dir", "samples"},
      {"manifest", "data/manifest.csv"},
      {"split", "in_domain"},
      {"paradigm_label", "unknown"},
      {"n_chunks", 4},
      {"feature_dim", 64},
      {"feature_seed", static_cast<uint64_t>(kFeatureSeed)},
      {"max_items", 0},
      {"out", "report.csv"},
      {"run_manifest", ""},
  };
}

json compare_defaults() {
  return json{
      {"manifest", "data/manifest.csv"},
      {"checkpoint_dir", "checkpoints"},
      {"paradigms",
       json::array({"repeat_concat", "repeat_concat_noise", "zero_pad_concat",
                    "zero_pad_concat_noise", "inpainting", "inpainting_noise", "flash"})},
      {"oracle", false},
      {"steps", 50},
      {"guidance", 5.0},
      {"shift", 7.0},
      {"cutoff", 0.1},
      {"add_noise_mu", 0.0},
      {"add_noise_sigma", 0.1},
      {"seed", 0},
      {"n_chunks", 4},
      {"feature_dim", 64},
      {"feature_seed", static_cast<uint64_t>(kFeatureSeed)},
      {"max_items", 0},
      {"out", "compare.csv"},
      {"run_manifest", ""},
  };
}

json inspect_defaults() {
  return json{
      {"clip", ""},
      {"frame", 0},
      {"percentiles", json::array({0.1, 0.3, 0.5, 0.7, 0.9})},
      {"out_dir", "inspect"},
      {"run_manifest", ""},
  };
}

void check_keys(const json& cfg, const json& defaults, const std::string& prefix) {
  for (const auto& [key, value] : cfg.items()) {
    const std::string where = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key: " + where);
    const json& dv = defaults.at(key);
    if (dv.is_boolean() != value.is_boolean() || dv.is_string() != value.is_string() ||
        dv.is_array() != value.is_array() ||
        (dv.is_number() && !value.is_number()))
      throw ConfigError("config key " + where + " has the wrong type");
    if (dv.is_object()) check_keys(value, dv, where);
  }
}

// The shared pixel <-> latent codec; fixed so training, sampling, and eval
// always agree.
const LatentCodec& shared_codec() {
  static const LatentCodec codec(kPixelChannels);
  return codec;
}

void write_run_manifest(const std::string& command, const json& cfg, const fs::path& fallback) {
  fs::path path = cfg.at("run_manifest").get<std::string>();
  if (path.empty()) path = fallback;
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write run manifest " + path.string());
  out << json{{"command", command}, {"config", cfg}}.dump(2) << "\n";
}

struct SplitItems {
  std::vector<Video> clips;
  std::vector<int> classes;
};

SplitItems load_split(const fs::path& manifest_path, const std::string& split, int max_items) {
  const auto entries = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  SplitItems items;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    if (max_items > 0 && static_cast<int>(items.clips.size()) >= max_items) break;
    items.clips.push_back(read_clip(base / e.path));
    items.classes.push_back(e.motion_class);
  }
  if (items.clips.empty())
    throw ArtifactError("manifest " + manifest_path.string() + " has no clips for split " + split);
  return items;
}

Video first_frame(const Video& clip) {
  Video f(clip.c, 1, clip.h, clip.w);
  for (int c = 0; c < clip.c; ++c)
    for (int i = 0; i < clip.h; ++i)
      for (int j = 0; j < clip.w; ++j) f.at(c, 0, i, j) = clip.at(c, 0, i, j);
  return f;
}

SamplerConfig sampler_config_from(const json& cfg, Paradigm paradigm, uint64_t seed) {
  SamplerConfig sc;
  sc.steps = cfg.at("steps").get<int>();
  sc.guidance = cfg.at("guidance").get<double>();
  sc.shift = cfg.at("shift").get<double>();
  sc.cutoff_percentile = cfg.at("cutoff").get<double>();
  sc.add_noise_mu = cfg.at("add_noise_mu").get<double>();
  sc.add_noise_sigma = cfg.at("add_noise_sigma").get<double>();
  sc.paradigm = paradigm;
  sc.rng_seed = seed;
  return sc;
}

}  // namespace

json config_defaults(const std::string& command) {
  if (command == "synth") return synth_defaults();
  if (command == "train") return train_defaults();
  if (command == "sample") return sample_defaults();
  if (command == "eval") return eval_defaults();
  if (command == "compare") return compare_defaults();
  if (command == "fourier-inspect") return inspect_defaults();
  throw ConfigError("unknown command: " + command);
}

json resolve_config(const std::string& command, const json& file_cfg, const json& overrides) {
  json cfg = config_defaults(command);
  if (!file_cfg.is_null()) {
    if (!file_cfg.is_object()) throw ConfigError("config file must hold a JSON object");
    check_keys(file_cfg, cfg, "");
    cfg.merge_patch(file_cfg);
  }
  if (!overrides.is_null()) {
    check_keys(overrides, cfg, "");
    cfg.merge_patch(overrides);
  }
  return cfg;
}

void run_command(const std::string& command, const json& cfg) {
  if (command == "synth")
    cmd_synth(cfg);
  else if (command == "train")
    cmd_train(cfg);
  else if (command == "sample")
    cmd_sample(cfg);
  else if (command == "eval")
    cmd_eval(cfg);
  else if (command == "compare")
    cmd_compare(cfg);
  else if (command == "fourier-inspect")
    cmd_fourier_inspect(cfg);
  else
    throw ConfigError("unknown command: " + command);
}

void cmd_synth(const json& cfg) {
  const fs::path out_dir = cfg.at("out_dir").get<std::string>();
  fs::create_directories(out_dir);
  write_run_manifest("synth", cfg, out_dir / "run_manifest.json");

  const uint64_t seed = cfg.at("seed").get<uint64_t>();
  std::vector<ManifestEntry> manifest;
  for (const bool ood : {false, true}) {
    SplitConfig sc;
    sc.num_videos = cfg.at(ood ? "num_out_of_domain" : "num_in_domain").get<int>();
    sc.frames = cfg.at("frames").get<int>();
    sc.height = cfg.at("height").get<int>();
    sc.width = cfg.at("width").get<int>();
    sc.seed = mix_seed(seed, ood ? 200 : 100);
    sc.out_of_domain = ood;
    const auto items = make_dataset(sc);
    const std::string split = ood ? "out_of_domain" : "in_domain";
    const std::string prefix = ood ? "ood_" : "in_";
    for (size_t i = 0; i < items.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s%04zu.clip", prefix.c_str(), i);
      write_clip(out_dir / name, items[i].video);
      manifest.push_back({name, items[i].spec.motion_class, split});
    }
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  std::cout << "synth: wrote " << manifest.size() << " clips to " << out_dir.string() << "\n";
}

void cmd_train(const json& cfg) {
  const fs::path ckpt_path = cfg.at("checkpoint_out").get<std::string>();
  if (!ckpt_path.parent_path().empty()) fs::create_directories(ckpt_path.parent_path());
  write_run_manifest("train", cfg, ckpt_path.string() + ".run.json");

  TrainConfig tc;
  tc.learning_rate = cfg.at("learning_rate").get<double>();
  tc.beta1 = cfg.at("beta1").get<double>();
  tc.beta2 = cfg.at("beta2").get<double>();
  tc.adam_eps = cfg.at("adam_eps").get<double>();
  tc.weight_decay = cfg.at("weight_decay").get<double>();
  tc.ema_decay = cfg.at("ema_decay").get<double>();
  tc.prompt_dropout = cfg.at("prompt_dropout").get<double>();
  tc.cutoff_lo = cfg.at("cutoff_lo").get<double>();
  tc.cutoff_hi = cfg.at("cutoff_hi").get<double>();
  tc.batch_size = cfg.at("batch_size").get<int>();
  tc.steps = cfg.at("steps").get<int>();
  tc.seed = cfg.at("seed").get<uint64_t>();
  tc.paradigm = paradigm_from_name(cfg.at("paradigm").get<std::string>());
  tc.use_fourier = cfg.at("use_fourier").get<bool>();
  tc.use_shifting = cfg.at("use_shifting").get<bool>();
  tc.add_noise_mu = cfg.at("add_noise_mu").get<double>();
  tc.add_noise_sigma = cfg.at("add_noise_sigma").get<double>();
  if (tc.steps < 1) throw ConfigError("train: steps must be >= 1");

  const auto split_items = load_split(cfg.at("manifest").get<std::string>(),
                                      cfg.at("split").get<std::string>(),
                                      cfg.at("max_items").get<int>());
  const LatentCodec& codec = shared_codec();
  std::vector<TrainItem> data(split_items.clips.size());
  parallel_for(split_items.clips.size(), [&](size_t i) {
    data[i] = make_train_item(split_items.clips[i], split_items.classes[i], codec);
  });
  tc.frames = split_items.clips.front().t;
  tc.height = split_items.clips.front().h;
  tc.width = split_items.clips.front().w;

  DenoiserConfig mc = denoiser_config_for(tc, codec.latent_channels());
  mc.hidden_dim = cfg.at("hidden_dim").get<int>();
  mc.num_blocks = cfg.at("num_blocks").get<int>();
  mc.num_classes = kNumMotionClasses;
  Denoiser model(mc, mix_seed(tc.seed, 0x6D6F64));

  Trainer trainer(model, codec, tc);
  const int log_every = std::max(1, cfg.at("log_every").get<int>());
  double window = 0.0;
  int window_n = 0;
  for (int s = 0; s < tc.steps; ++s) {
    const StepStats stats = trainer.step(data);
    window += stats.loss;
    ++window_n;
    if ((s + 1) % log_every == 0 || s + 1 == tc.steps) {
      std::cout << "train: step " << (s + 1) << "/" << tc.steps << " loss "
                << window / window_n << "\n";
      window = 0.0;
      window_n = 0;
    }
  }
  save_checkpoint(ckpt_path, model, tc, trainer.steps_done());
  std::cout << "train: wrote " << ckpt_path.string() << "\n";
}

void cmd_sample(const json& cfg) {
  const fs::path out_path = cfg.at("out").get<std::string>();
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  write_run_manifest("sample", cfg, out_path.string() + ".run.json");

  LoadedCheckpoint loaded = load_checkpoint(cfg.at("checkpoint").get<std::string>());
  const std::string par_name = cfg.at("paradigm").get<std::string>();
  const Paradigm paradigm =
      par_name.empty() ? loaded.train_cfg.paradigm : paradigm_from_name(par_name);
  int frames = cfg.at("frames").get<int>();
  if (frames == 0) frames = loaded.train_cfg.frames;

  const Video image_clip = read_clip(cfg.at("image").get<std::string>());
  const Video cond = first_frame(image_clip);

  const SamplerConfig sc = sampler_config_from(cfg, paradigm, cfg.at("seed").get<uint64_t>());
  const Denoiser snapshot = loaded.model.ema_snapshot();
  const Video out =
      sample(snapshot, shared_codec(), cond, cfg.at("class").get<int>(), frames, sc);
  write_clip(out_path, out);
  std::cout << "sample: wrote " << out_path.string() << "\n";

  const std::string pgm_dir = cfg.at("dump_pgm_dir").get<std::string>();
  if (!pgm_dir.empty()) {
    fs::create_directories(pgm_dir);
    for (int k = 0; k < out.t; ++k) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "frame%04d", k);
      write_frame_pgms(pgm_dir, stem, out, k, -1.0, 1.0);
    }
  }
}

void cmd_eval(const json& cfg) {
  const fs::path out_path = cfg.at("out").get<std::string>();
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  write_run_manifest("eval", cfg, out_path.string() + ".run.json");

  const fs::path gen_dir = cfg.at("generated_dir").get<std::string>();
  if (!fs::is_directory(gen_dir)) throw ArtifactError("eval: no such directory " + gen_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(gen_dir))
    if (e.path().extension() == ".clip") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Video> generated;
  generated.reserve(files.size());
  for (const auto& f : files) generated.push_back(read_clip(f));
  if (generated.size() < 2) throw ArtifactError("eval: need >= 2 generated clips");

  const auto ref = load_split(cfg.at("manifest").get<std::string>(),
                              cfg.at("split").get<std::string>(), cfg.at("max_items").get<int>());

  EvalConfig ec;
  ec.n_chunks = cfg.at("n_chunks").get<int>();
  ec.feature_dim = cfg.at("feature_dim").get<int>();
  ec.feature_seed = cfg.at("feature_seed").get<uint64_t>();
  const ChunkReport report =
      chunkwise_report(generated, ref.clips, cfg.at("paradigm_label").get<std::string>(),
                       cfg.at("split").get<std::string>(), ec);
  write_report_csv(out_path, {{report, trend_label(report.per_chunk)}});
  std::cout << "eval: wrote " << out_path.string() << "\n";
}

void cmd_compare(const json& cfg) {
  const fs::path out_path = cfg.at("out").get<std::string>();
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  write_run_manifest("compare", cfg, out_path.string() + ".run.json");

  const bool oracle = cfg.at("oracle").get<bool>();
  const fs::path ckpt_dir = cfg.at("checkpoint_dir").get<std::string>();
  const uint64_t seed = cfg.at("seed").get<uint64_t>();
  const int max_items = cfg.at("max_items").get<int>();
  const LatentCodec& codec = shared_codec();

  EvalConfig ec;
  ec.n_chunks = cfg.at("n_chunks").get<int>();
  ec.feature_dim = cfg.at("feature_dim").get<int>();
  ec.feature_seed = cfg.at("feature_seed").get<uint64_t>();

  const fs::path manifest = cfg.at("manifest").get<std::string>();
  const std::vector<std::string> split_names{"in_domain", "out_of_domain"};
  std::vector<SplitItems> splits;
  for (const auto& name : split_names) splits.push_back(load_split(manifest, name, max_items));

  std::vector<ReportRow> rows;
  for (const auto& par_name : cfg.at("paradigms")) {
    const Paradigm paradigm = paradigm_from_name(par_name.get<std::string>());

    // Model: per-paradigm checkpoint, or a fresh stub in oracle mode (the
    // oracle field ignores it; flash still needs the projection shape).
    Denoiser* model_ptr = nullptr;
    Denoiser stub(DenoiserConfig{}, 0);
    Denoiser loaded_model(DenoiserConfig{}, 0);
    if (oracle) {
      TrainConfig tc;
      tc.paradigm = paradigm;
      DenoiserConfig mc = denoiser_config_for(tc, codec.latent_channels());
      mc.hidden_dim = 8;
      mc.num_blocks = 1;
      mc.num_classes = kNumMotionClasses;
      stub = Denoiser(mc, 0);
      model_ptr = &stub;
    } else {
      const fs::path path = ckpt_dir / (std::string(paradigm_name(paradigm)) + ".flck");
      if (!fs::exists(path))
        throw ArtifactError("compare: missing checkpoint for paradigm " +
                            std::string(paradigm_name(paradigm)) + " at " + path.string());
      LoadedCheckpoint lc = load_checkpoint(path);
      if (lc.train_cfg.paradigm != paradigm)
        throw ConfigError("compare: checkpoint " + path.string() + " was trained for paradigm " +
                          paradigm_name(lc.train_cfg.paradigm));
      loaded_model = lc.model.ema_snapshot();
      model_ptr = &loaded_model;
    }

    std::array<ChunkReport, 2> reports;
    for (size_t si = 0; si < split_names.size(); ++si) {
      const SplitItems& items = splits[si];
      std::vector<Video> generated(items.clips.size());
      parallel_for(items.clips.size(), [&](size_t i) {
        const Video cond = first_frame(items.clips[i]);
        const uint64_t item_seed = mix_seed(seed, (si + 1) * 10000 + i);
        const SamplerConfig sc = sampler_config_from(cfg, paradigm, item_seed);
        if (oracle) {
          OracleVelocity field(codec.encode(items.clips[i]));
          generated[i] = sample(*model_ptr, codec, cond, items.classes[i], items.clips[i].t, sc,
                                &field);
        } else {
          generated[i] = sample(*model_ptr, codec, cond, items.classes[i], items.clips[i].t, sc);
        }
      });
      reports[si] = chunkwise_report(generated, items.clips, paradigm_name(paradigm),
                                     split_names[si], ec);
    }
    const PatternVerdict verdict = pattern_classify(reports[0], reports[1]);
    rows.push_back({reports[0], verdict.verdict});
    rows.push_back({reports[1], verdict.verdict});
    std::cout << "compare: " << paradigm_name(paradigm) << " in=" << verdict.label_in
              << " ood=" << verdict.label_ood << " verdict=" << verdict.verdict << "\n";
  }
  write_report_csv(out_path, rows);
  std::cout << "compare: wrote " << out_path.string() << "\n";
}

void cmd_fourier_inspect(const json& cfg) {
  const fs::path out_dir = cfg.at("out_dir").get<std::string>();
  fs::create_directories(out_dir);
  write_run_manifest("fourier-inspect", cfg, out_dir / "run_manifest.json");

  const Video clip = read_clip(cfg.at("clip").get<std::string>());
  const int frame = cfg.at("frame").get<int>();
  if (frame < 0 || frame >= clip.t) throw ConfigError("fourier-inspect: frame out of range");

  const Latent latent = shared_codec().encode(clip);
  Latent s(latent.c, 1, latent.h, latent.w);
  for (int c = 0; c < latent.c; ++c)
    for (int i = 0; i < latent.h; ++i)
      for (int j = 0; j < latent.w; ++j) s.at(c, 0, i, j) = latent.at(c, frame, i, j);

  std::ofstream csv(out_dir / "energy.csv");
  if (!csv) throw ArtifactError("fourier-inspect: cannot write energy.csv");
  csv << "percentile,energy\n";
  char buf[64];
  for (const auto& pv : cfg.at("percentiles")) {
    const double p = pv.get<double>();
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("fourier-inspect: percentile outside (0, 1]");
    const Latent s_high = high_freq_magnitude(s, p);
    double energy = 0.0;
    for (double x : s_high.v) energy += x * x;
    std::snprintf(buf, sizeof(buf), "p%02d", static_cast<int>(std::lround(p * 100)));
    double peak = 0.0;
    for (double x : s_high.v) peak = std::max(peak, x);
    write_frame_pgms(out_dir, buf, s_high, 0, 0.0, peak > 0.0 ? peak : 1.0);
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g", p, energy);
    csv << buf << "\n";
  }
  std::cout << "fourier-inspect: wrote " << (out_dir / "energy.csv").string() << "\n";
}

void cmd_replay(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ArtifactError("replay: cannot open " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("replay: bad manifest: " + std::string(e.what()));
  }
  if (!doc.contains("command") || !doc.contains("config"))
    throw ConfigError("replay: manifest missing command/config");
  run_command(doc.at("command").get<std::string>(), doc.at("config"));
}

}  // namespace flashflow
