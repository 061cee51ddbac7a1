#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(FLASHFLOW_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workspace() {
  static const fs::path ws = [] {
    fs::path p = fs::temp_directory_path() / "flashflow_cli_ws";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return ws;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2);
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("full pipeline: synth, train, sample, eval, compare, inspect, replay") {
  const fs::path ws = workspace();
  const fs::path data = ws / "data";

  // --- synth ---------------------------------------------------------------
  auto r = run_cli("synth --out_dir " + data.string() +
                   " --num_in_domain 3 --num_out_of_domain 2 --frames 8 --seed 1");
  INFO(r.output);
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(data / "manifest.csv"));
  REQUIRE(fs::exists(data / "in_0000.clip"));
  REQUIRE(fs::exists(data / "ood_0001.clip"));
  REQUIRE(fs::exists(data / "run_manifest.json"));

  // Same seed elsewhere: byte-identical clips.
  const fs::path data2 = ws / "data2";
  r = run_cli("synth --out_dir " + data2.string() +
              " --num_in_domain 3 --num_out_of_domain 2 --frames 8 --seed 1");
  REQUIRE(r.code == 0);
  CHECK(read_file(data / "in_0002.clip") == read_file(data2 / "in_0002.clip"));
  CHECK(read_file(data / "manifest.csv") == read_file(data2 / "manifest.csv"));

  // --- replay regenerates deleted outputs ----------------------------------
  const std::string clip_bytes = read_file(data / "in_0001.clip");
  fs::remove(data / "in_0001.clip");
  r = run_cli("replay " + (data / "run_manifest.json").string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  CHECK(read_file(data / "in_0001.clip") == clip_bytes);

  // --- train (config file + flag override) ---------------------------------
  const fs::path ckpt = ws / "flash.flck";
  json train_cfg = {
      {"manifest", (data / "manifest.csv").string()},
      {"checkpoint_out", ckpt.string()},
      {"paradigm", "flash"},
      {"steps", 4},
      {"batch_size", 2},
      {"hidden_dim", 8},
      {"num_blocks", 1},
      {"log_every", 2},
      {"seed", 3},
  };
  write_json(ws / "train.json", train_cfg);
  r = run_cli("train --config " + (ws / "train.json").string() + " --steps 3");
  INFO(r.output);
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(ckpt));
  CHECK(r.output.find("step 3/3") != std::string::npos);  // flag overrode the file

  // --- sample --------------------------------------------------------------
  const fs::path samples = ws / "samples";
  for (int i = 0; i < 2; ++i) {
    r = run_cli("sample --checkpoint " + ckpt.string() + " --image " +
                (data / "in_0000.clip").string() + " --class 2 --steps 2 --seed " +
                std::to_string(10 + i) + " --out " + (samples / ("s" + std::to_string(i) + ".clip")).string());
    INFO(r.output);
    REQUIRE(r.code == 0);
  }
  REQUIRE(fs::exists(samples / "s0.clip"));
  // Frame count defaults to the value recorded in the checkpoint.
  const std::string s0 = read_file(samples / "s0.clip");
  CHECK(s0.substr(0, 4) == "FLV1");

  const fs::path pgm_dir = ws / "pgms";
  r = run_cli("sample --checkpoint " + ckpt.string() + " --image " +
              (data / "in_0000.clip").string() + " --class 2 --steps 2 --frames 2 --out " +
              (ws / "pgm_sample.clip").string() + " --dump_pgm_dir " + pgm_dir.string());
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(pgm_dir / "frame0000_ch0.pgm"));
  REQUIRE(fs::exists(pgm_dir / "frame0001_ch2.pgm"));
  CHECK(read_file(pgm_dir / "frame0000_ch0.pgm").substr(0, 2) == "P5");

  // --- eval ----------------------------------------------------------------
  const fs::path report = ws / "report.csv";
  r = run_cli("eval --generated_dir " + samples.string() + " --manifest " +
              (data / "manifest.csv").string() + " --split in_domain --paradigm_label flash --out " +
              report.string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  const std::string csv = read_file(report);
  CHECK(csv.rfind("paradigm,split,chunk_0,chunk_1,chunk_2,chunk_3,overall,verdict_label\n", 0) == 0);
  CHECK(count_lines(csv) == 2);
  CHECK(csv.find("flash,in_domain,") != std::string::npos);

  // --- compare in oracle mode: every paradigm, both splits, near-zero scores
  const fs::path cmp = ws / "compare.csv";
  json cmp_cfg = {
      {"manifest", (data / "manifest.csv").string()},
      {"oracle", true},
      {"steps", 1},
      {"seed", 5},
      {"out", cmp.string()},
  };
  write_json(ws / "compare.json", cmp_cfg);
  r = run_cli("compare --config " + (ws / "compare.json").string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  const std::string cmp_csv = read_file(cmp);
  CHECK(count_lines(cmp_csv) == 15);  // header + 7 paradigms x 2 splits
  std::istringstream lines(cmp_csv);
  std::string line;
  std::getline(lines, line);  // header
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    std::istringstream fields(line);
    std::string paradigm, split, val;
    std::getline(fields, paradigm, ',');
    std::getline(fields, split, ',');
    for (int k = 0; k < 5; ++k) {
      REQUIRE(std::getline(fields, val, ','));
      CHECK(std::abs(std::stod(val)) < 1e-6);  // oracle transport is exact
    }
    REQUIRE(std::getline(fields, val));
    CHECK((val == "generalizing" || val == "leaking" || val == "inconclusive"));
    CHECK((split == "in_domain" || split == "out_of_domain"));
  }
  CHECK(rows == 14);
  CHECK(cmp_csv.find("flash,out_of_domain,") != std::string::npos);
  CHECK(cmp_csv.find("inpainting_noise,in_domain,") != std::string::npos);

  // --- fourier-inspect ------------------------------------------------------
  const fs::path inspect = ws / "inspect";
  r = run_cli("fourier-inspect --clip " + (data / "in_0000.clip").string() +
              " --percentiles [0.1,0.5,0.9] --out_dir " + inspect.string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(inspect / "energy.csv"));
  REQUIRE(fs::exists(inspect / "p10_ch0.pgm"));
  REQUIRE(fs::exists(inspect / "p90_ch11.pgm"));
  std::istringstream energy(read_file(inspect / "energy.csv"));
  std::getline(energy, line);
  CHECK(line == "percentile,energy");
  double prev = -1.0;
  bool first = true;
  while (std::getline(energy, line)) {
    const auto comma = line.find(',');
    const double e = std::stod(line.substr(comma + 1));
    if (!first) CHECK(e <= prev * (1.0 + 1e-9) + 1e-9);  // higher percentile keeps less energy
    prev = e;
    first = false;
  }
}

TEST_CASE("config errors exit with code 2") {
  CHECK(run_cli("synth --no_such_flag 1").code == 2);        // rejected by the parser
  CHECK(run_cli("synth --seed notanumber").code == 2);       // unparseable value
  CHECK(run_cli("train --paradigm no_such_paradigm").code == 2);
  CHECK(run_cli("bogus_command").code == 2);

  const fs::path bad = fs::temp_directory_path() / "flashflow_bad_cfg.json";
  std::ofstream(bad) << "{ not json";
  CHECK(run_cli("synth --config " + bad.string()).code == 2);
  const fs::path unknown = fs::temp_directory_path() / "flashflow_unknown_key.json";
  std::ofstream(unknown) << "{\"frames\": 8, \"mystery\": 1}";
  CHECK(run_cli("synth --config " + unknown.string()).code == 2);
}

TEST_CASE("missing artifacts exit with code 4") {
  const auto r = run_cli("sample --checkpoint /nonexistent/x.flck --image /nonexistent/y.clip");
  CHECK(r.code == 4);
  CHECK(run_cli("replay /nonexistent/run.json").code == 4);
  CHECK(run_cli("eval --generated_dir /nonexistent --manifest /nonexistent/m.csv").code == 4);

  // Non-oracle compare without checkpoints names the missing paradigm.
  const fs::path ws = workspace();
  REQUIRE(fs::exists(ws / "data" / "manifest.csv"));  // written by the pipeline case
  const auto miss = run_cli("compare --manifest " + (ws / "data" / "manifest.csv").string() +
                            " --checkpoint_dir " + (ws / "no_ckpts").string());
  CHECK(miss.code == 4);
  CHECK(miss.output.find("repeat_concat") != std::string::npos);
}

TEST_CASE("help exits cleanly") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("synth --help").code == 0);
}
