#include "flashflow/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>

#include "flashflow/errors.hpp"
#include "flashflow/rng.hpp"
#include "flashflow/threadpool.hpp"

namespace flashflow {

std::vector<Video> split_chunks(const Video& video, int n_chunks) {
  if (n_chunks < 1) throw std::invalid_argument("split_chunks: n_chunks must be >= 1");
  const int usable = video.t - video.t % n_chunks;
  if (usable < n_chunks) throw std::invalid_argument("split_chunks: not enough frames");
  const int len = usable / n_chunks;
  std::vector<Video> chunks;
  chunks.reserve(n_chunks);
  for (int k = 0; k < n_chunks; ++k) {
    Video chunk(video.c, len, video.h, video.w);
    for (int c = 0; c < video.c; ++c)
      for (int t = 0; t < len; ++t)
        for (int i = 0; i < video.h; ++i)
          for (int j = 0; j < video.w; ++j)
            chunk.at(c, t, i, j) = video.at(c, k * len + t, i, j);
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

namespace {

// Projection rows are drawn once per (seed, dim, flat size) and cached; the
// cache mutex keeps concurrent feature extraction safe.
const std::vector<double>& projection_matrix(uint64_t seed, int dim, size_t flat) {
  static std::map<std::tuple<uint64_t, int, size_t>, std::vector<double>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lk(mu);
  auto key = std::make_tuple(seed, dim, flat);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Rng rng(mix_seed(seed, 0xFEA70000ULL + static_cast<uint64_t>(dim) * 131 + flat));
  std::vector<double> m(static_cast<size_t>(dim) * flat);
  const double scale = 1.0 / std::sqrt(static_cast<double>(flat));
  for (double& x : m) x = rng.normal() * scale;
  return cache.emplace(key, std::move(m)).first->second;
}

}  // namespace

std::vector<double> chunk_features(const Video& chunk, uint64_t seed, int dim) {
  if (dim < 1) throw std::invalid_argument("chunk_features: dim must be >= 1");
  if (chunk.v.empty()) throw std::invalid_argument("chunk_features: empty chunk");
  const auto& proj = projection_matrix(seed, dim, chunk.v.size());
  std::vector<double> out(dim);
  for (int j = 0; j < dim; ++j) {
    const double* row = proj.data() + static_cast<size_t>(j) * chunk.v.size();
    double acc = 0.0;
    for (size_t i = 0; i < chunk.v.size(); ++i) acc += row[i] * chunk.v[i];
    out[j] = std::tanh(acc);
  }
  return out;
}

FeatureStats gaussian_stats(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) throw std::invalid_argument("gaussian_stats: need >= 2 vectors");
  const int d = static_cast<int>(features.front().size());
  for (const auto& f : features)
    if (static_cast<int>(f.size()) != d)
      throw std::invalid_argument("gaussian_stats: inconsistent dims");

  FeatureStats stats;
  stats.dim = d;
  stats.mean.assign(d, 0.0);
  for (const auto& f : features)
    for (int i = 0; i < d; ++i) stats.mean[i] += f[i];
  for (double& m : stats.mean) m /= static_cast<double>(features.size());

  stats.cov.assign(static_cast<size_t>(d) * d, 0.0);
  for (const auto& f : features)
    for (int i = 0; i < d; ++i) {
      const double di = f[i] - stats.mean[i];
      for (int j = 0; j < d; ++j)
        stats.cov[static_cast<size_t>(i) * d + j] += di * (f[j] - stats.mean[j]);
    }
  const double norm = 1.0 / (static_cast<double>(features.size()) - 1.0);
  for (double& c : stats.cov) c *= norm;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double s = 0.5 * (stats.cov[static_cast<size_t>(i) * d + j] +
                              stats.cov[static_cast<size_t>(j) * d + i]);
      stats.cov[static_cast<size_t>(i) * d + j] = s;
      stats.cov[static_cast<size_t>(j) * d + i] = s;
    }
  return stats;
}

namespace {

Eigen::MatrixXd clamped_sqrt(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd lam = es.eigenvalues();
  for (int i = 0; i < lam.size(); ++i) lam[i] = std::sqrt(std::max(lam[i], 0.0));
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim != b.dim || a.dim < 1) throw std::invalid_argument("frechet_distance: dim mismatch");
  const int d = a.dim;
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_term += diff * diff;
  }
  Eigen::MatrixXd ca(d, d), cb(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      ca(i, j) = a.cov[static_cast<size_t>(i) * d + j];
      cb(i, j) = b.cov[static_cast<size_t>(i) * d + j];
    }
  const Eigen::MatrixXd sa = clamped_sqrt(ca);
  Eigen::MatrixXd mid = sa * cb * sa;
  mid = 0.5 * (mid + mid.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mid);
  double tr_sqrt = 0.0;
  for (int i = 0; i < d; ++i) tr_sqrt += std::sqrt(std::max(es.eigenvalues()[i], 0.0));
  const double dist = mean_term + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(dist)) throw NumericError("frechet_distance: non-finite result");
  return std::max(dist, 0.0);
}

ChunkReport chunkwise_report(const std::vector<Video>& generated,
                             const std::vector<Video>& reference, const std::string& paradigm,
                             const std::string& split, const EvalConfig& cfg) {
  if (generated.size() < 2 || reference.size() < 2)
    throw std::invalid_argument("chunkwise_report: need >= 2 clips per set");
  const int frames = generated.front().t;
  for (const auto& v : generated)
    if (v.t != frames) throw std::invalid_argument("chunkwise_report: uneven generated frames");
  for (const auto& v : reference)
    if (v.t != frames) throw std::invalid_argument("chunkwise_report: uneven reference frames");

  auto feature_table = [&](const std::vector<Video>& clips) {
    // chunk index 0..n_chunks-1, then whole clips at index n_chunks.
    std::vector<std::vector<std::vector<double>>> table(
        cfg.n_chunks + 1, std::vector<std::vector<double>>(clips.size()));
    parallel_for(clips.size(), [&](size_t i) {
      const auto chunks = split_chunks(clips[i], cfg.n_chunks);
      for (int k = 0; k < cfg.n_chunks; ++k)
        table[k][i] = chunk_features(chunks[k], cfg.feature_seed, cfg.feature_dim);
      table[cfg.n_chunks][i] = chunk_features(clips[i], cfg.feature_seed, cfg.feature_dim);
    });
    return table;
  };
  const auto gen_table = feature_table(generated);
  const auto ref_table = feature_table(reference);

  ChunkReport report;
  report.paradigm = paradigm;
  report.split = split;
  for (int k = 0; k <= cfg.n_chunks; ++k) {
    const double score =
        frechet_distance(gaussian_stats(gen_table[k]), gaussian_stats(ref_table[k]));
    if (k < cfg.n_chunks)
      report.per_chunk.push_back(score);
    else
      report.overall = score;
  }
  return report;
}

double first_frame_fidelity(const Video& generated, const Video& cond_image) {
  if (cond_image.t != 1) throw std::invalid_argument("first_frame_fidelity: condition not a frame");
  if (generated.c != cond_image.c || generated.h != cond_image.h || generated.w != cond_image.w ||
      generated.t < 1)
    throw std::invalid_argument("first_frame_fidelity: shape mismatch");
  double mse = 0.0;
  size_t n = 0;
  for (int c = 0; c < generated.c; ++c)
    for (int i = 0; i < generated.h; ++i)
      for (int j = 0; j < generated.w; ++j) {
        const double d = generated.at(c, 0, i, j) - cond_image.at(c, 0, i, j);
        mse += d * d;
        ++n;
      }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("spearman_rank_correlation: need matched lists of >= 2");
  const auto rx = ranks(xs), ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string trend_label(const std::vector<double>& scores) {
  std::vector<double> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0.0);
  return spearman_rank_correlation(idx, scores) >= 0.8 ? "increasing" : "flat/other";
}

PatternVerdict pattern_classify(const ChunkReport& in_domain, const ChunkReport& out_of_domain) {
  if (in_domain.per_chunk.size() != out_of_domain.per_chunk.size())
    throw std::invalid_argument("pattern_classify: chunk count mismatch");
  PatternVerdict v;
  v.label_in = trend_label(in_domain.per_chunk);
  v.label_ood = trend_label(out_of_domain.per_chunk);
  const bool in_up = v.label_in == "increasing";
  const bool ood_up = v.label_ood == "increasing";
  if (in_up && ood_up)
    v.verdict = "generalizing";
  else if (in_up && !ood_up)
    v.verdict = "leaking";
  else
    v.verdict = "inconclusive";
  return v;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("write_report_csv: cannot open " + path.string());
  const int n_chunks = rows.empty() ? 4 : static_cast<int>(rows.front().report.per_chunk.size());
  out << "paradigm,split";
  for (int k = 0; k < n_chunks; ++k) out << ",chunk_" << k;
  out << ",overall,verdict_label\n";
  char buf[64];
  for (const auto& row : rows) {
    if (static_cast<int>(row.report.per_chunk.size()) != n_chunks)
      throw std::invalid_argument("write_report_csv: inconsistent chunk counts");
    out << row.report.paradigm << "," << row.report.split;
    for (double s : row.report.per_chunk) {
      std::snprintf(buf, sizeof(buf), "%.9g", s);
      out << "," << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.9g", row.report.overall);
    out << "," << buf << "," << row.verdict_label << "\n";
  }
  if (!out) throw ArtifactError("write_report_csv: short write to " + path.string());
}

}  // namespace flashflow
