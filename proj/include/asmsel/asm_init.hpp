#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "asmsel/asm_sequence.hpp"
#include "asmsel/features.hpp"
#include "asmsel/matrix.hpp"

namespace asmsel {

/// The universal unit set: one centroid per acoustic segment unit.
struct AsmInventory {
  Matrix centroids;  // D x F
  std::uint64_t fingerprint = 0;
  std::uint64_t seed = 0;

  std::size_t num_units() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
};

/// Consecutive seg_len spans from frame 0. Spans that would start at or past
/// `num_frames` are dropped and the last kept span is clamped to it; frames
/// beyond n_segments * seg_len are ignored.
std::vector<Span> fixed_segment(std::size_t num_frames, std::size_t n_segments = 50,
                                std::size_t seg_len = 20);

/// One mean vector per span.
Matrix segment_means(const FrameMatrix& fm, const std::vector<Span>& spans);

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  /// Inertia after every assignment step, plus the final one.
  std::vector<double> inertia;
  std::size_t iterations = 0;
};

/// Index of the nearest row of `centroids`; ties go to the lowest index.
std::size_t nearest_centroid(const Matrix& centroids, std::span<const double> x,
                             double* dist2 = nullptr);

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded
/// from the point farthest from its assigned centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& opts = {});

AsmInventory kmeans_fit(const Matrix& vectors, std::size_t num_units, std::uint64_t seed,
                        std::uint64_t fingerprint, const KMeansOptions& opts = {});

AsmSequence tokenize_initial(const FrameMatrix& fm, const AsmInventory& inv,
                             std::size_t n_segments = 50, std::size_t seg_len = 20);

/// "ASMC1" magic, D (u32), F (u32), seed (u64), then D*F float64 row-major.
void write_inventory(const std::filesystem::path& path, const AsmInventory& inv);
AsmInventory read_inventory(const std::filesystem::path& path);

}  // namespace asmsel
