#include "flashflow/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "flashflow/errors.hpp"

namespace flashflow {

void write_pgm(const std::filesystem::path& path, const Plane& img, double lo, double hi) {
  if (img.h < 1 || img.w < 1) throw std::invalid_argument("write_pgm: empty image");
  if (!(hi > lo)) throw std::invalid_argument("write_pgm: empty value range");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("write_pgm: cannot open " + path.string());
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::string bytes;
  bytes.reserve(img.v.size());
  for (double x : img.v) {
    const double u = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    bytes.push_back(static_cast<char>(static_cast<int>(std::lround(u * 255.0))));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError("write_pgm: short write to " + path.string());
}

void write_frame_pgms(const std::filesystem::path& dir, const std::string& stem,
                      const Tensor4& clip, int frame, double lo, double hi) {
  if (frame < 0 || frame >= clip.t) throw std::invalid_argument("write_frame_pgms: bad frame");
  for (int c = 0; c < clip.c; ++c) {
    Plane img(clip.h, clip.w);
    for (int i = 0; i < clip.h; ++i)
      for (int j = 0; j < clip.w; ++j) img.at(i, j) = clip.at(c, frame, i, j);
    write_pgm(dir / (stem + "_ch" + std::to_string(c) + ".pgm"), img, lo, hi);
  }
}

}  // namespace flashflow
