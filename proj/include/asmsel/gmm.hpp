#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "asmsel/matrix.hpp"

namespace asmsel {

/// Diagonal-covariance Gaussian mixture.
class DiagGmm {
 public:
  DiagGmm() = default;
  DiagGmm(std::vector<double> weights, Matrix means, Matrix variances);

  std::size_t num_components() const { return weights_.size(); }
  std::size_t dim() const { return means_.cols(); }
  const std::vector<double>& weights() const { return weights_; }
  const Matrix& means() const { return means_; }
  const Matrix& variances() const { return variances_; }

  double log_likelihood(std::span<const double> x) const;

  /// Per-component log(w_k N(x | k)); entries for zero-weight components are
  /// -inf. Returns the log-sum-exp.
  double component_log_likelihoods(std::span<const double> x, std::span<double> out) const;

  bool operator==(const DiagGmm& o) const {
    return weights_ == o.weights_ && means_ == o.means_ && variances_ == o.variances_;
  }

 private:
  void refresh();

  std::vector<double> weights_;
  Matrix means_;
  Matrix variances_;
  // Cached log w_k - 0.5 * sum_d log(2 pi var_kd) and 1 / var.
  std::vector<double> log_const_;
  Matrix inv_var_;
};

double log_sum_exp(std::span<const double> v);

/// Sufficient statistics of one EM pass, mergeable in any order.
struct GmmStats {
  std::vector<double> occupancy;  // per component
  Matrix sum;                     // K x F
  Matrix sum_sq;                  // K x F
  double total_log_likelihood = 0.0;
  std::size_t frames = 0;

  GmmStats() = default;
  GmmStats(std::size_t k, std::size_t dim) : occupancy(k, 0.0), sum(k, dim), sum_sq(k, dim) {}

  void accumulate(const DiagGmm& gmm, std::span<const double> x);
  void merge(const GmmStats& other);
};

/// M-step. Components with (numerically) zero occupancy keep their previous
/// mean and variance and get weight zero. Variances are floored per dim.
DiagGmm gmm_update(const DiagGmm& prev, const GmmStats& stats,
                   std::span<const double> var_floor);

/// k-means initialization followed by up to `em_iters` EM passes. Uses
/// min(n_components, frames) components.
DiagGmm fit_gmm(const Matrix& frames, std::size_t n_components,
                std::span<const double> var_floor, std::uint64_t seed,
                std::size_t em_iters = 10);

}  // namespace asmsel
