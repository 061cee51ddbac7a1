#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "flashflow/errors.hpp"
#include "flashflow/synth.hpp"

using namespace flashflow;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "flashflow_test_synth";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int lit_pixels(const Video& v, int frame) {
  int n = 0;
  for (int i = 0; i < v.h; ++i)
    for (int j = 0; j < v.w; ++j)
      if (v.at(0, frame, i, j) != -1.0 || v.at(1, frame, i, j) != -1.0 ||
          v.at(2, frame, i, j) != -1.0)
        ++n;
  return n;
}

}  // namespace

TEST_CASE("static square renders its exact bounding box on a -1 background") {
  ShapeSpec spec;
  spec.kind = ShapeKind::square;
  spec.color = {1.0, -1.0, 0.5};
  spec.size_px = 3;
  spec.start_row = 2;
  spec.start_col = 3;
  const Video v = render_video(spec, 2, 8, 8);
  REQUIRE(v.c == 3);
  REQUIRE(v.t == 2);
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        const bool inside = i >= 2 && i <= 4 && j >= 3 && j <= 5;
        CHECK(v.at(0, k, i, j) == (inside ? 1.0 : -1.0));
        CHECK(v.at(1, k, i, j) == -1.0);
        CHECK(v.at(2, k, i, j) == (inside ? 0.5 : -1.0));
      }
}

TEST_CASE("frame k draws the box translated by k times the velocity") {
  ShapeSpec spec;
  spec.size_px = 2;
  spec.start_row = 1;
  spec.start_col = 1;
  spec.d_row = 1;
  spec.d_col = 2;
  spec.color = {1.0, 1.0, 1.0};
  const Video v = render_video(spec, 3, 10, 10);
  for (int k = 0; k < 3; ++k) {
    CHECK(v.at(0, k, 1 + k, 1 + 2 * k) == 1.0);
    CHECK(v.at(0, k, 2 + k, 2 + 2 * k) == 1.0);
    CHECK(lit_pixels(v, k) == 4);
  }
}

TEST_CASE("shapes clip at the border and eventually leave the frame") {
  ShapeSpec spec;
  spec.size_px = 3;
  spec.start_row = 0;
  spec.start_col = 13;
  spec.d_col = 1;
  spec.motion_class = 2;
  spec.color = {1.0, 1.0, 1.0};
  const Video v = render_video(spec, 5, 16, 16);
  CHECK(lit_pixels(v, 0) == 9);
  CHECK(lit_pixels(v, 1) == 6);  // one column off-screen
  CHECK(lit_pixels(v, 2) == 3);
  CHECK(lit_pixels(v, 3) == 0);  // fully exited
  CHECK(lit_pixels(v, 4) == 0);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) CHECK(v.at(0, 3, i, j) == -1.0);
}

TEST_CASE("circle mask drops exactly the far corners of its bounding box") {
  ShapeSpec spec;
  spec.kind = ShapeKind::circle;
  spec.color = {1.0, 1.0, 1.0};

  spec.size_px = 4;
  Video v = render_video(spec, 1, 8, 8);
  CHECK(lit_pixels(v, 0) == 12);  // 16 minus 4 corners
  CHECK(v.at(0, 0, 0, 0) == -1.0);
  CHECK(v.at(0, 0, 0, 1) == 1.0);
  CHECK(v.at(0, 0, 3, 3) == -1.0);

  spec.size_px = 5;
  v = render_video(spec, 1, 8, 8);
  CHECK(lit_pixels(v, 0) == 21);  // 25 minus 4 corners
  CHECK(v.at(0, 0, 2, 0) == 1.0);
  CHECK(v.at(0, 0, 4, 4) == -1.0);
}

TEST_CASE("triangle widens from apex to base with integer row bands") {
  ShapeSpec spec;
  spec.kind = ShapeKind::triangle;
  spec.color = {1.0, 1.0, 1.0};
  spec.size_px = 5;
  const Video v = render_video(spec, 1, 8, 8);
  const std::set<std::pair<int, int>> expect = {
      {0, 2},                          // apex
      {1, 1}, {1, 2}, {1, 3},
      {2, 1}, {2, 2}, {2, 3},
      {3, 0}, {3, 1}, {3, 2}, {3, 3}, {3, 4},
      {4, 0}, {4, 1}, {4, 2}, {4, 3}, {4, 4},
  };
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(v.at(0, 0, i, j) == (expect.count({i, j}) ? 1.0 : -1.0));
}

TEST_CASE("render_video rejects invalid specs") {
  ShapeSpec spec;
  spec.size_px = 4;
  CHECK_THROWS_AS(render_video(spec, 0, 16, 16), std::invalid_argument);
  CHECK_THROWS_AS(render_video(spec, 1, 0, 16), std::invalid_argument);
  spec.size_px = 1;
  CHECK_THROWS_AS(render_video(spec, 1, 16, 16), std::invalid_argument);
  spec.size_px = 20;
  CHECK_THROWS_AS(render_video(spec, 1, 16, 16), std::invalid_argument);
  spec.size_px = 4;
  spec.motion_class = 8;
  CHECK_THROWS_AS(render_video(spec, 1, 16, 16), std::invalid_argument);
  spec.motion_class = 0;
  spec.start_col = 13;
  CHECK_THROWS_AS(render_video(spec, 1, 16, 16), std::invalid_argument);
  spec.start_col = 0;
  spec.color = {1.5, 0.0, 0.0};
  CHECK_THROWS_AS(render_video(spec, 1, 16, 16), std::invalid_argument);
}

TEST_CASE("motion directions cover the eight compass headings once") {
  std::set<std::pair<int, int>> seen;
  for (const auto& d : kMotionDirections) {
    CHECK(std::max(std::abs(d[0]), std::abs(d[1])) == 1);
    seen.insert({d[0], d[1]});
  }
  CHECK(seen.size() == 8);
  CHECK(kMotionDirections[0][0] == -1);  // class 0 moves up
  CHECK(kMotionDirections[0][1] == 0);
  CHECK(kMotionDirections[2][0] == 0);  // class 2 moves right
  CHECK(kMotionDirections[2][1] == 1);
}

TEST_CASE("splits use disjoint palettes and speeds") {
  const auto& in = palette(false);
  const auto& out = palette(true);
  CHECK(in.size() == 6);
  CHECK(out.size() == 6);
  std::set<std::array<double, 3>> in_set(in.begin(), in.end());
  for (const auto& c : out) CHECK(in_set.count(c) == 0);
  for (const auto& c : in)
    for (double ch : c) CHECK(std::abs(ch) == 1.0);
  for (const auto& c : out)
    for (double ch : c) CHECK(std::abs(ch) <= 0.5);
  CHECK(split_speed(false) == 1);
  CHECK(split_speed(true) == 2);
}

TEST_CASE("make_dataset is reproducible and honors the split's palette and speed") {
  SplitConfig cfg;
  cfg.num_videos = 12;
  cfg.frames = 6;
  cfg.seed = 42;
  const auto a = make_dataset(cfg);
  const auto b = make_dataset(cfg);
  REQUIRE(a.size() == 12);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].video.v == b[i].video.v);
    CHECK(a[i].spec.motion_class == b[i].spec.motion_class);
  }

  cfg.seed = 43;
  const auto c = make_dataset(cfg);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].video.v != c[i].video.v) any_diff = true;
  CHECK(any_diff);

  for (const bool ood : {false, true}) {
    cfg.out_of_domain = ood;
    const auto& colors = palette(ood);
    for (const auto& item : make_dataset(cfg)) {
      const auto& s = item.spec;
      CHECK(s.size_px >= 4);
      CHECK(s.size_px <= 6);
      CHECK(s.start_row >= 0);
      CHECK(s.start_row + s.size_px <= cfg.height);
      CHECK(s.start_col >= 0);
      CHECK(s.start_col + s.size_px <= cfg.width);
      CHECK(s.d_row == kMotionDirections[s.motion_class][0] * split_speed(ood));
      CHECK(s.d_col == kMotionDirections[s.motion_class][1] * split_speed(ood));
      CHECK(std::count(colors.begin(), colors.end(), s.color) == 1);
    }
  }
}

TEST_CASE("clip files round-trip exactly for f32-representable values") {
  Video v(3, 2, 4, 4);
  for (size_t i = 0; i < v.v.size(); ++i) v.v[i] = (static_cast<double>(i % 17) - 8.0) / 8.0;
  const fs::path path = temp_dir() / "roundtrip.clip";
  write_clip(path, v);
  CHECK(fs::file_size(path) == 20 + v.v.size() * 4);
  const Video r = read_clip(path);
  REQUIRE(r.same_shape(v));
  CHECK(r.v == v.v);  // every value here is exact in f32
}

TEST_CASE("clip reader rejects bad magic and truncated payloads") {
  const fs::path good = temp_dir() / "good.clip";
  Video v(1, 1, 2, 2);
  v.v = {1.0, 2.0, 3.0, 4.0};
  write_clip(good, v);

  std::ifstream in(good, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  const fs::path bad_magic = temp_dir() / "bad_magic.clip";
  std::string tampered = data;
  tampered[0] = 'X';
  std::ofstream(bad_magic, std::ios::binary).write(tampered.data(), tampered.size());
  CHECK_THROWS_AS(read_clip(bad_magic), ArtifactError);

  const fs::path truncated = temp_dir() / "truncated.clip";
  std::ofstream(truncated, std::ios::binary).write(data.data(), data.size() - 1);
  CHECK_THROWS_AS(read_clip(truncated), ArtifactError);

  CHECK_THROWS_AS(read_clip(temp_dir() / "missing.clip"), ArtifactError);
}

TEST_CASE("manifest writes path,motion_class,split lines and round-trips") {
  const fs::path path = temp_dir() / "manifest.csv";
  const std::vector<ManifestEntry> entries = {
      {"in_0000.clip", 3, "in_domain"},
      {"ood_0001.clip", 7, "out_of_domain"},
  };
  write_manifest(path, entries);

  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "in_0000.clip,3,in_domain\nood_0001.clip,7,out_of_domain\n");

  const auto back = read_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].path == "in_0000.clip");
  CHECK(back[0].motion_class == 3);
  CHECK(back[0].split == "in_domain");
  CHECK(back[1].split == "out_of_domain");

  std::ofstream(temp_dir() / "bad.csv") << "only_one_field\n";
  CHECK_THROWS_AS(read_manifest(temp_dir() / "bad.csv"), ArtifactError);
}
