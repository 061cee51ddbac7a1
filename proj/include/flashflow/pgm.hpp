#pragma once

#include <filesystem>

#include "flashflow/tensor.hpp"

namespace flashflow {

// Binary (P5) PGM; values mapped linearly from [lo, hi] to [0, 255], clamped.
void write_pgm(const std::filesystem::path& path, const Plane& img, double lo, double hi);

// One grayscale PGM per channel of one frame, named <stem>_ch<k>.pgm.
void write_frame_pgms(const std::filesystem::path& dir, const std::string& stem,
                      const Tensor4& clip, int frame, double lo, double hi);

}  // namespace flashflow
