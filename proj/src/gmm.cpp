#include "asmsel/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "asmsel/asm_init.hpp"
#include "asmsel/common.hpp"

namespace asmsel {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

DiagGmm::DiagGmm(std::vector<double> weights, Matrix means, Matrix variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
  if (weights_.size() != means_.rows() || means_.rows() != variances_.rows() ||
      means_.cols() != variances_.cols()) {
    throw ContractError("inconsistent GMM dimensions");
  }
  refresh();
}

void DiagGmm::refresh() {
  const std::size_t k = weights_.size();
  const std::size_t dim = means_.cols();
  log_const_.assign(k, 0.0);
  inv_var_ = Matrix(k, dim);
  for (std::size_t c = 0; c < k; ++c) {
    if (weights_[c] <= 0.0) {
      log_const_[c] = kNegInf;
      continue;
    }
    double lc = std::log(weights_[c]);
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = variances_(c, d);
      if (!(v > 0.0)) throw ContractError("non-positive GMM variance");
      lc -= 0.5 * std::log(2.0 * std::numbers::pi * v);
      inv_var_(c, d) = 1.0 / v;
    }
    log_const_[c] = lc;
  }
}

double DiagGmm::component_log_likelihoods(std::span<const double> x, std::span<double> out) const {
  const std::size_t dim = means_.cols();
  for (std::size_t c = 0; c < weights_.size(); ++c) {
    if (log_const_[c] == kNegInf) {
      out[c] = kNegInf;
      continue;
    }
    const auto mu = means_.row(c);
    const auto iv = inv_var_.row(c);
    double q = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double z = x[d] - mu[d];
      q += z * z * iv[d];
    }
    out[c] = log_const_[c] - 0.5 * q;
  }
  return log_sum_exp(out.first(weights_.size()));
}

double DiagGmm::log_likelihood(std::span<const double> x) const {
  double buf[64];
  std::vector<double> heap;
  std::span<double> out;
  if (weights_.size() <= 64) {
    out = std::span<double>(buf, weights_.size());
  } else {
    heap.resize(weights_.size());
    out = heap;
  }
  return component_log_likelihoods(x, out);
}

void GmmStats::accumulate(const DiagGmm& gmm, std::span<const double> x) {
  const std::size_t k = gmm.num_components();
  std::vector<double> lp(k);
  const double total = gmm.component_log_likelihoods(x, lp);
  total_log_likelihood += total;
  ++frames;
  for (std::size_t c = 0; c < k; ++c) {
    if (lp[c] == kNegInf) continue;
    const double g = std::exp(lp[c] - total);
    occupancy[c] += g;
    auto s = sum.row(c);
    auto s2 = sum_sq.row(c);
    for (std::size_t d = 0; d < x.size(); ++d) {
      s[d] += g * x[d];
      s2[d] += g * x[d] * x[d];
    }
  }
}

void GmmStats::merge(const GmmStats& other) {
  for (std::size_t c = 0; c < occupancy.size(); ++c) occupancy[c] += other.occupancy[c];
  for (std::size_t i = 0; i < sum.data().size(); ++i) {
    sum.data()[i] += other.sum.data()[i];
    sum_sq.data()[i] += other.sum_sq.data()[i];
  }
  total_log_likelihood += other.total_log_likelihood;
  frames += other.frames;
}

DiagGmm gmm_update(const DiagGmm& prev, const GmmStats& stats, std::span<const double> var_floor) {
  const std::size_t k = prev.num_components();
  const std::size_t dim = prev.dim();
  double total = 0.0;
  for (double o : stats.occupancy) total += o;
  if (total <= 0.0) return prev;

  std::vector<double> weights(k);
  Matrix means = prev.means();
  Matrix vars = prev.variances();
  for (std::size_t c = 0; c < k; ++c) {
    const double occ = stats.occupancy[c];
    if (occ <= 1e-10 * total) {
      weights[c] = 0.0;
      continue;
    }
    weights[c] = occ / total;
    for (std::size_t d = 0; d < dim; ++d) {
      const double mu = stats.sum(c, d) / occ;
      const double var = stats.sum_sq(c, d) / occ - mu * mu;
      means(c, d) = mu;
      vars(c, d) = std::max(var, var_floor[d]);
    }
  }
  return DiagGmm(std::move(weights), std::move(means), std::move(vars));
}

DiagGmm fit_gmm(const Matrix& frames, std::size_t n_components, std::span<const double> var_floor,
                std::uint64_t seed, std::size_t em_iters) {
  if (frames.rows() == 0) throw ContractError("cannot fit a GMM on zero frames");
  const std::size_t k = std::min(n_components, frames.rows());
  const std::size_t dim = frames.cols();
  const KMeansResult km = kmeans(frames, k, seed, {.max_iters = 20, .tol = 1e-6});

  std::vector<double> weights(k, 0.0);
  Matrix vars(k, dim);
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    const std::size_t c = km.assignment[i];
    weights[c] += 1.0;
    const auto x = frames.row(i);
    const auto mu = km.centroids.row(c);
    for (std::size_t d = 0; d < dim; ++d) vars(c, d) += (x[d] - mu[d]) * (x[d] - mu[d]);
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = weights[c] > 0 ? vars(c, d) / weights[c] : 0.0;
      vars(c, d) = std::max(v, var_floor[d]);
    }
    weights[c] /= static_cast<double>(frames.rows());
  }
  DiagGmm gmm(std::move(weights), km.centroids, std::move(vars));

  double last = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < em_iters; ++it) {
    GmmStats stats(gmm.num_components(), dim);
    for (std::size_t i = 0; i < frames.rows(); ++i) stats.accumulate(gmm, frames.row(i));
    gmm = gmm_update(gmm, stats, var_floor);
    const double ll = stats.total_log_likelihood;
    if (ll - last < 1e-6 * std::max(1.0, std::abs(ll))) break;
    last = ll;
  }
  return gmm;
}

}  // namespace asmsel
