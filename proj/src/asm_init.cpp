#include "asmsel/asm_init.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"
#include "asmsel/parallel.hpp"
#include "asmsel/rng.hpp"

namespace asmsel {

std::vector<Span> fixed_segment(std::size_t num_frames, std::size_t n_segments,
                                std::size_t seg_len) {
  if (num_frames == 0) throw ContractError("cannot segment an utterance with zero frames");
  if (seg_len == 0 || n_segments == 0) throw ContractError("n_segments and seg_len must be positive");
  std::vector<Span> spans;
  for (std::size_t i = 0; i < n_segments; ++i) {
    const std::size_t start = i * seg_len;
    if (start >= num_frames) break;
    spans.push_back({start, std::min(start + seg_len, num_frames)});
  }
  return spans;
}

Matrix segment_means(const FrameMatrix& fm, const std::vector<Span>& spans) {
  Matrix means(spans.size(), fm.dim());
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const Span& sp = spans[s];
    if (sp.end <= sp.start) throw ContractError("empty span in " + fm.utterance_id);
    if (sp.end > fm.num_frames()) throw ContractError("span beyond utterance end in " + fm.utterance_id);
    auto out = means.row(s);
    for (std::size_t t = sp.start; t < sp.end; ++t) {
      const auto f = fm.frames.row(t);
      for (std::size_t d = 0; d < out.size(); ++d) out[d] += f[d];
    }
    const double n = static_cast<double>(sp.length());
    for (double& v : out) v /= n;
  }
  return means;
}

std::size_t nearest_centroid(const Matrix& centroids, std::span<const double> x, double* dist2) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(centroids.row(c), x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

namespace {

Matrix kmeans_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix centers(k, points.cols());
  std::size_t first = rng.index(n);
  std::copy_n(points.row(first).begin(), points.cols(), centers.row(0).begin());

  std::vector<double> best(n);
  for (std::size_t i = 0; i < n; ++i) best[i] = squared_distance(points.row(i), centers.row(0));

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : best) total += d;
    std::size_t pick = n - 1;
    if (total <= 0.0) {
      pick = rng.index(n);
    } else {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cum += best[i];
        if (r < cum) {
          pick = i;
          break;
        }
      }
    }
    std::copy_n(points.row(pick).begin(), points.cols(), centers.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], squared_distance(points.row(i), centers.row(c)));
    }
  }
  return centers;
}

// Assigns every point and returns the inertia.
double assign_points(const Matrix& points, const Matrix& centroids,
                     std::vector<std::size_t>& assignment, std::vector<double>& dist2) {
  constexpr std::size_t kChunk = 4096;
  const std::size_t n = points.rows();
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(n, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      assignment[i] = nearest_centroid(centroids, points.row(i), &dist2[i]);
    }
  });
  double inertia = 0.0;
  for (double d : dist2) inertia += d;
  return inertia;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& opts) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  if (k == 0) throw ContractError("k-means needs at least one cluster");
  if (n < k) {
    throw ContractError("k-means needs at least as many vectors as clusters (" + std::to_string(n) +
                        " < " + std::to_string(k) + ")");
  }
  for (double v : points.data()) {
    if (!std::isfinite(v)) throw ContractError("non-finite value in k-means input");
  }

  Rng rng(seed);
  KMeansResult result;
  result.centroids = kmeans_plus_plus(points, k, rng);
  result.assignment.assign(n, 0);
  std::vector<double> dist2(n);

  for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
    result.inertia.push_back(assign_points(points, result.centroids, result.assignment, dist2));
    result.iterations = iter + 1;

    Matrix next(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto c = next.row(result.assignment[i]);
      const auto p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) c[d] += p[d];
      ++counts[result.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& v : next.row(c)) v /= static_cast<double>(counts[c]);
    }
    // Residuals against the updated centroids pick the re-seed points.
    for (std::size_t i = 0; i < n; ++i) {
      dist2[i] = squared_distance(points.row(i), next.row(result.assignment[i]));
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const std::size_t far = static_cast<std::size_t>(
          std::max_element(dist2.begin(), dist2.end()) - dist2.begin());
      std::copy_n(points.row(far).begin(), dim, next.row(c).begin());
      dist2[far] = 0.0;
    }

    double shift = 0.0;
    for (std::size_t i = 0; i < next.data().size(); ++i) {
      shift = std::max(shift, std::abs(next.data()[i] - result.centroids.data()[i]));
    }
    result.centroids = std::move(next);
    if (shift < opts.tol) break;
  }
  result.inertia.push_back(assign_points(points, result.centroids, result.assignment, dist2));
  return result;
}

AsmInventory kmeans_fit(const Matrix& vectors, std::size_t num_units, std::uint64_t seed,
                        std::uint64_t fingerprint, const KMeansOptions& opts) {
  if (num_units < 2) throw ContractError("an ASM inventory needs at least 2 units");
  AsmInventory inv;
  inv.centroids = kmeans(vectors, num_units, seed, opts).centroids;
  inv.fingerprint = fingerprint;
  inv.seed = seed;
  return inv;
}

AsmSequence tokenize_initial(const FrameMatrix& fm, const AsmInventory& inv,
                             std::size_t n_segments, std::size_t seg_len) {
  if (fm.fingerprint != inv.fingerprint) {
    throw ContractError("feature fingerprint of " + fm.utterance_id + " (" +
                        fingerprint_hex(fm.fingerprint) + ") does not match inventory (" +
                        fingerprint_hex(inv.fingerprint) + ")");
  }
  if (fm.dim() != inv.dim()) throw ContractError("feature dimension mismatch for " + fm.utterance_id);
  const auto spans = fixed_segment(fm.num_frames(), n_segments, seg_len);
  const Matrix means = segment_means(fm, spans);
  AsmSequence seq;
  seq.utterance_id = fm.utterance_id;
  seq.tokens.reserve(spans.size());
  for (std::size_t s = 0; s < spans.size(); ++s) {
    seq.tokens.push_back({nearest_centroid(inv.centroids, means.row(s)), spans[s].start, spans[s].end});
  }
  return seq;
}

void write_inventory(const std::filesystem::path& path, const AsmInventory& inv) {
  ByteWriter out;
  out.magic("ASMC1");
  out.u32(static_cast<std::uint32_t>(inv.num_units()));
  out.u32(static_cast<std::uint32_t>(inv.dim()));
  out.u64(inv.seed);
  for (double v : inv.centroids.data()) out.f64(v);
  write_file_atomic(path, out.bytes());
}

AsmInventory read_inventory(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  in.expect_magic("ASMC1");
  AsmInventory inv;
  const std::uint32_t D = in.u32();
  const std::uint32_t F = in.u32();
  inv.seed = in.u64();
  inv.centroids = Matrix(D, F);
  for (double& v : inv.centroids.data()) v = in.f64();
  if (!in.at_end()) throw ContractError("trailing bytes in inventory " + path.string());
  return inv;
}

}  // namespace asmsel
