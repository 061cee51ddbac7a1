#include "flashflow/synth.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "flashflow/errors.hpp"
#include "flashflow/rng.hpp"

namespace flashflow {
namespace {

bool shape_member(ShapeKind kind, int size, int row_off, int col_off) {
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::circle: {
      const double center = (size - 1) / 2.0;
      const double radius = size / 2.0;
      const double dr = row_off - center;
      const double dc = col_off - center;
      return dr * dr + dc * dc <= radius * radius;
    }
    case ShapeKind::triangle: {
      // Apex-up isosceles: row o spans a symmetric band that widens to the
      // full base at the last row.  Integer arithmetic keeps it exact.
      const int left = (size - 1 - row_off) / 2;
      const int right = size - 1 - left;
      return col_off >= left && col_off <= right;
    }
  }
  return false;
}

}  // namespace

Video render_video(const ShapeSpec& spec, int frames, int height, int width) {
  if (frames < 1) throw std::invalid_argument("render_video: frames must be >= 1");
  if (height < 1 || width < 1) throw std::invalid_argument("render_video: empty frame");
  if (spec.size_px < 2) throw std::invalid_argument("render_video: size_px must be >= 2");
  if (spec.size_px > height || spec.size_px > width)
    throw std::invalid_argument("render_video: shape larger than frame");
  if (spec.motion_class < 0 || spec.motion_class >= kNumMotionClasses)
    throw std::invalid_argument("render_video: motion_class out of range");
  if (spec.start_row < 0 || spec.start_col < 0 || spec.start_row + spec.size_px > height ||
      spec.start_col + spec.size_px > width)
    throw std::invalid_argument("render_video: start position outside the frame");
  for (double ch : spec.color)
    if (ch < -1.0 || ch > 1.0) throw std::invalid_argument("render_video: color outside [-1, 1]");

  Video out(kPixelChannels, frames, height, width);
  std::fill(out.v.begin(), out.v.end(), -1.0);
  for (int k = 0; k < frames; ++k) {
    const int r0 = spec.start_row + k * spec.d_row;
    const int c0 = spec.start_col + k * spec.d_col;
    for (int ro = 0; ro < spec.size_px; ++ro) {
      const int r = r0 + ro;
      if (r < 0 || r >= height) continue;
      for (int co = 0; co < spec.size_px; ++co) {
        const int col = c0 + co;
        if (col < 0 || col >= width) continue;
        if (!shape_member(spec.kind, spec.size_px, ro, co)) continue;
        for (int ch = 0; ch < kPixelChannels; ++ch) out.at(ch, k, r, col) = spec.color[ch];
      }
    }
  }
  return out;
}

const std::vector<std::array<double, 3>>& palette(bool out_of_domain) {
  static const std::vector<std::array<double, 3>> in_domain = {
      {1.0, -1.0, -1.0}, {-1.0, 1.0, -1.0}, {-1.0, -1.0, 1.0},
      {1.0, 1.0, -1.0},  {1.0, -1.0, 1.0},  {-1.0, 1.0, 1.0},
  };
  static const std::vector<std::array<double, 3>> held_out = {
      {0.5, -0.5, -0.5}, {-0.5, 0.5, -0.5}, {-0.5, -0.5, 0.5},
      {0.5, 0.5, 0.0},   {0.0, 0.5, 0.5},   {0.5, 0.0, 0.5},
  };
  return out_of_domain ? held_out : in_domain;
}

int split_speed(bool out_of_domain) { return out_of_domain ? 2 : 1; }

std::vector<DatasetItem> make_dataset(const SplitConfig& cfg) {
  if (cfg.num_videos < 0) throw std::invalid_argument("make_dataset: negative num_videos");
  if (cfg.frames < 1) throw std::invalid_argument("make_dataset: frames must be >= 1");
  if (cfg.height < 6 || cfg.width < 6)
    throw std::invalid_argument("make_dataset: frame too small for the shape sizes");

  const auto& colors = palette(cfg.out_of_domain);
  const int speed = split_speed(cfg.out_of_domain);
  Rng rng(cfg.seed);
  std::vector<DatasetItem> items;
  items.reserve(cfg.num_videos);
  for (int i = 0; i < cfg.num_videos; ++i) {
    ShapeSpec spec;
    spec.kind = static_cast<ShapeKind>(rng.uniform_int(3));
    spec.color = colors[rng.uniform_int(static_cast<int>(colors.size()))];
    spec.size_px = 4 + rng.uniform_int(3);
    spec.motion_class = rng.uniform_int(kNumMotionClasses);
    spec.d_row = kMotionDirections[spec.motion_class][0] * speed;
    spec.d_col = kMotionDirections[spec.motion_class][1] * speed;
    spec.start_row = rng.uniform_int(cfg.height - spec.size_px + 1);
    spec.start_col = rng.uniform_int(cfg.width - spec.size_px + 1);
    items.push_back({spec, render_video(spec, cfg.frames, cfg.height, cfg.width)});
  }
  return items;
}

namespace {

void put_u32_le(std::string& buf, uint32_t x) {
  buf.push_back(static_cast<char>(x & 0xff));
  buf.push_back(static_cast<char>((x >> 8) & 0xff));
  buf.push_back(static_cast<char>((x >> 16) & 0xff));
  buf.push_back(static_cast<char>((x >> 24) & 0xff));
}

uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void write_clip(const std::filesystem::path& path, const Video& video) {
  std::string buf;
  buf.reserve(20 + video.size() * 4);
  buf += "FLV1";
  put_u32_le(buf, static_cast<uint32_t>(video.c));
  put_u32_le(buf, static_cast<uint32_t>(video.t));
  put_u32_le(buf, static_cast<uint32_t>(video.h));
  put_u32_le(buf, static_cast<uint32_t>(video.w));
  for (double x : video.v) {
    const float f = static_cast<float>(x);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(buf, bits);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("write_clip: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ArtifactError("write_clip: short write to " + path.string());
}

Video read_clip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("read_clip: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 20 || data.compare(0, 4, "FLV1") != 0)
    throw ArtifactError("read_clip: bad magic in " + path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  const uint32_t c = get_u32_le(p + 4), t = get_u32_le(p + 8);
  const uint32_t h = get_u32_le(p + 12), w = get_u32_le(p + 16);
  const uint64_t numel = static_cast<uint64_t>(c) * t * h * w;
  if (numel == 0 || numel > (1ULL << 31))
    throw ArtifactError("read_clip: implausible dimensions in " + path.string());
  if (data.size() != 20 + numel * 4)
    throw ArtifactError("read_clip: truncated payload in " + path.string());
  Video out(static_cast<int>(c), static_cast<int>(t), static_cast<int>(h), static_cast<int>(w));
  for (uint64_t i = 0; i < numel; ++i) {
    const uint32_t bits = get_u32_le(p + 20 + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    out.v[i] = f;
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("write_manifest: cannot open " + path.string());
  for (const auto& e : entries) out << e.path << "," << e.motion_class << "," << e.split << "\n";
  if (!out) throw ArtifactError("write_manifest: short write to " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("read_manifest: cannot open " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string cls;
    if (!std::getline(ss, e.path, ',') || !std::getline(ss, cls, ',') ||
        !std::getline(ss, e.split))
      throw ArtifactError("read_manifest: malformed line " + std::to_string(line_no) + " in " +
                          path.string());
    try {
      e.motion_class = std::stoi(cls);
    } catch (const std::exception&) {
      throw ArtifactError("read_manifest: bad motion class on line " + std::to_string(line_no));
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace flashflow
