#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flashflow/tensor.hpp"

namespace flashflow {

enum class ShapeKind { square = 0, circle = 1, triangle = 2 };

// Eight compass directions; motion class i moves by kMotionDirections[i] (row,
// col) scaled by the split's speed each frame.
inline constexpr std::array<std::array<int, 2>, 8> kMotionDirections{{
    {{-1, 0}},
    {{-1, 1}},
    {{0, 1}},
    {{1, 1}},
    {{1, 0}},
    {{1, -1}},
    {{0, -1}},
    {{-1, -1}},
}};
inline constexpr int kNumMotionClasses = 8;
inline constexpr int kPixelChannels = 3;

struct ShapeSpec {
  ShapeKind kind = ShapeKind::square;
  std::array<double, 3> color{1.0, 1.0, 1.0};  // per-channel fill, in [-1, 1]
  int size_px = 4;                             // bounding-box side, >= 2
  int start_row = 0, start_col = 0;            // box top-left at frame 0
  int d_row = 0, d_col = 0;                    // velocity, pixels per frame
  int motion_class = 0;                        // label matching the velocity direction
};

// Renders frames of the shape translating at its velocity over a -1
// background, clipped at the borders (no wraparound).  Frame k shows the box
// at start + k * velocity.
Video render_video(const ShapeSpec& spec, int frames, int height, int width);

struct SplitConfig {
  int num_videos = 0;
  int frames = 48;
  int height = 16, width = 16;
  uint64_t seed = 0;
  bool out_of_domain = false;  // disjoint palette and speed from in-domain
};

struct DatasetItem {
  ShapeSpec spec;
  Video video;
};

// In-domain and out-of-domain splits use disjoint color palettes and disjoint
// speeds so the two distributions never overlap.
const std::vector<std::array<double, 3>>& palette(bool out_of_domain);
int split_speed(bool out_of_domain);

// Reproducible: same config -> identical videos.
std::vector<DatasetItem> make_dataset(const SplitConfig& cfg);

// Clip container: magic "FLV1", then u32 LE c,t,h,w, then f32 LE samples in
// (c,t,h,w) row-major order.
void write_clip(const std::filesystem::path& path, const Video& video);
Video read_clip(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int motion_class = 0;
  std::string split;  // "in_domain" or "out_of_domain"
};

// One "path,motion_class,split" line per clip.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace flashflow
