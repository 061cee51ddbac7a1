#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flashflow/tensor.hpp"

namespace flashflow {

inline constexpr uint64_t kFeatureSeed = 0xFEA7;

// Contiguous equal-length temporal chunks of the first (t - t % n_chunks)
// frames; any remainder frames are dropped from chunking only.
std::vector<Video> split_chunks(const Video& video, int n_chunks = 4);

// Fixed seeded random projection (no bias, scaled by 1/sqrt(flat size)) of
// the flattened chunk, then elementwise tanh.  Deterministic across runs and
// platforms for a given (seed, dim, chunk shape).
std::vector<double> chunk_features(const Video& chunk, uint64_t seed, int dim = 64);

struct FeatureStats {
  std::vector<double> mean;  // dim
  std::vector<double> cov;   // dim x dim row-major, symmetric
  int dim = 0;
};

// Sample mean and 1/(n-1) covariance, symmetrized.  Needs >= 2 vectors.
FeatureStats gaussian_stats(const std::vector<std::vector<double>>& features);

// Squared 2-Wasserstein distance between the two Gaussians:
// |mu_a - mu_b|^2 + tr(cov_a + cov_b - 2 (cov_a^1/2 cov_b cov_a^1/2)^1/2),
// matrix square roots by symmetric eigendecomposition with negative
// eigenvalues clamped to zero.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

struct ChunkReport {
  std::string paradigm, split;
  std::vector<double> per_chunk;
  double overall = 0.0;
};

struct EvalConfig {
  int n_chunks = 4;
  int feature_dim = 64;
  uint64_t feature_seed = kFeatureSeed;
};

// Per-chunk Fréchet scores between matching chunk indices of the generated
// and reference sets, plus an overall score on whole clips.
ChunkReport chunkwise_report(const std::vector<Video>& generated,
                             const std::vector<Video>& reference, const std::string& paradigm,
                             const std::string& split, const EvalConfig& cfg = {});

// First-frame PSNR in dB against the condition image, peak 2 for the [-1, 1]
// range; an exact match reports +infinity.
double first_frame_fidelity(const Video& generated, const Video& cond_image);

// Spearman rank correlation with average ranks for ties; 0 when either side
// is constant.
double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

// "increasing" when the Spearman correlation of (chunk index, score) is at
// least 0.8, else "flat/other".
std::string trend_label(const std::vector<double>& scores);

struct PatternVerdict {
  std::string label_in, label_ood;
  std::string verdict;  // "generalizing", "leaking", or "inconclusive"
};

PatternVerdict pattern_classify(const ChunkReport& in_domain, const ChunkReport& out_of_domain);

struct ReportRow {
  ChunkReport report;
  std::string verdict_label;
};

// CSV with header paradigm,split,chunk_0,...,overall,verdict_label; one row
// per (paradigm, split); fixed formatting so reruns are byte-identical.
void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

}  // namespace flashflow
