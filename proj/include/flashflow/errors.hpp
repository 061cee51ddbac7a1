#pragma once

#include <stdexcept>
#include <string>

namespace flashflow {

// Bad configuration (unknown keys, invalid values, mismatched shapes in
// user-supplied settings).  CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric failure mid-run (non-finite loss, diverged sampler state,
// excess imaginary residue).  CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or malformed input file (clip, manifest, checkpoint).
// CLI exit code 4.
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace flashflow
