#pragma once

// Slow, direct reference computations. They share no code with the library
// beyond plain containers, so agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

// |X_k|^2 of a zero-padded frame by the O(n^2) DFT sum.
inline Vec dft_power(const Vec& frame, std::size_t n_fft) {
  Vec c(n_fft), s(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft);
    c[i] = std::cos(ang);
    s[i] = std::sin(ang);
  }
  Vec out(n_fft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double re = 0, im = 0;
    std::size_t idx = 0;
    for (std::size_t n = 0; n < frame.size(); ++n) {
      re += frame[n] * c[idx];
      im += frame[n] * s[idx];
      idx += k;
      if (idx >= n_fft) idx -= n_fft;
    }
    out[k] = re * re + im * im;
  }
  return out;
}

// Weight of frequency f in triangle m, built straight from the mel formula.
inline double triangle(int m, int n_mels, double f, double sr) {
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz = [](double mv) { return 700.0 * (std::pow(10.0, mv / 2595.0) - 1.0); };
  const double step = mel(sr / 2.0) / (n_mels + 1);
  const double lo = hz(step * m), mid = hz(step * (m + 1)), hi = hz(step * (m + 2));
  if (f <= lo || f >= hi) return 0.0;
  return f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
}

inline Mat mel_energies(const Vec& x, double sr, std::size_t n_fft, std::size_t win, std::size_t hop,
                        int n_mels) {
  const std::size_t bins = n_fft / 2 + 1;
  Mat tri(n_mels, Vec(bins));
  for (int m = 0; m < n_mels; ++m)
    for (std::size_t k = 0; k < bins; ++k) tri[m][k] = triangle(m, n_mels, k * sr / n_fft, sr);
  Mat out;
  for (std::size_t start = 0; start + win <= x.size(); start += hop) {
    Vec frame(win);
    for (std::size_t i = 0; i < win; ++i) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / win));
      frame[i] = x[start + i] * w;
    }
    const Vec p = dft_power(frame, n_fft);
    Vec row(n_mels);
    for (int m = 0; m < n_mels; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < bins; ++k) e += tri[m][k] * p[k];
      row[m] = e;
    }
    out.push_back(row);
  }
  return out;
}

// Unit sequences as plain id lists, one per utterance.
struct Counts {
  Mat prob;
  std::vector<std::size_t> docs;
  std::vector<std::size_t> occ;
};

inline Counts count_units(const std::vector<std::vector<std::size_t>>& utts, std::size_t D) {
  Counts c{{}, std::vector<std::size_t>(D), std::vector<std::size_t>(D)};
  for (const auto& u : utts) {
    Vec row(D, 0.0);
    for (std::size_t id : u) row[id] += 1.0;
    for (std::size_t j = 0; j < D; ++j) {
      if (row[j] > 0) ++c.docs[j];
      c.occ[j] += static_cast<std::size_t>(row[j]);
      row[j] /= static_cast<double>(u.size());
    }
    c.prob.push_back(row);
  }
  return c;
}

inline Vec mp(const Counts& c) {
  const std::size_t D = c.docs.size();
  Vec out(D, 0.0);
  for (std::size_t j = 0; j < D; ++j) {
    for (const auto& r : c.prob) out[j] += r[j];
    out[j] /= c.prob.size();
  }
  return out;
}

inline Vec idf(const Counts& c, bool occurrences = false) {
  Vec out;
  const double N = static_cast<double>(c.prob.size());
  for (std::size_t j = 0; j < c.docs.size(); ++j) {
    const double nj = occurrences ? c.occ[j] : c.docs[j];
    out.push_back(std::log((N + 1.0) / (nj + 1.0)));
  }
  return out;
}

// Two-pass population variance.
inline Vec vp(const Counts& c) {
  const Vec m = mp(c);
  Vec out(m.size(), 0.0);
  for (std::size_t j = 0; j < m.size(); ++j) {
    for (const auto& r : c.prob) out[j] += (r[j] - m[j]) * (r[j] - m[j]);
    out[j] /= c.prob.size();
  }
  return out;
}

inline Vec sat(const Counts& c, double eps = 1e-12) {
  const Vec m = mp(c), v = vp(c);
  Vec out;
  for (std::size_t j = 0; j < m.size(); ++j) out.push_back(m[j] / std::max(std::sqrt(v[j]), eps));
  return out;
}

// Every legal state path through D parallel left-to-right units of S states,
// enumerated depth-first. log_em is T x (D*S). Paths must end in a last state.
struct PathResult {
  double score = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> path;  // graph index unit*S + state
  std::size_t paths = 0;
};

inline void enumerate_paths(const Mat& log_em, std::size_t D, std::size_t S, const Vec& log_self,
                            const Vec& log_next, double log_enter, std::vector<std::size_t>& cur,
                            double score, PathResult& best) {
  const std::size_t t = cur.size();
  const std::size_t T = log_em.size();
  if (t == T) {
    const std::size_t last = cur.back();
    if (last % S != S - 1) return;
    ++best.paths;
    if (score > best.score) {
      best.score = score;
      best.path = cur;
    }
    return;
  }
  auto step = [&](std::size_t next, double trans) {
    cur.push_back(next);
    enumerate_paths(log_em, D, S, log_self, log_next, log_enter, cur, score + trans + log_em[t][next], best);
    cur.pop_back();
  };
  if (t == 0) {
    for (std::size_t u = 0; u < D; ++u) step(u * S, log_enter);
    return;
  }
  const std::size_t prev = cur.back();
  const std::size_t s = prev % S;
  step(prev, log_self[prev]);
  if (s + 1 < S) {
    step(prev + 1, log_next[prev]);
  } else {
    for (std::size_t v = 0; v < D; ++v) step(v * S, log_next[prev] + log_enter);
  }
}

inline PathResult best_path(const Mat& log_em, std::size_t D, std::size_t S, const Vec& log_self,
                            const Vec& log_next, double log_enter) {
  PathResult best;
  std::vector<std::size_t> cur;
  enumerate_paths(log_em, D, S, log_self, log_next, log_enter, cur, 0.0, best);
  return best;
}

inline double path_score(const Mat& log_em, std::size_t S, const Vec& log_self, const Vec& log_next,
                         double log_enter, const std::vector<std::size_t>& path) {
  double s = log_enter + log_em[0][path[0]];
  for (std::size_t t = 1; t < path.size(); ++t) {
    const std::size_t a = path[t - 1], b = path[t];
    if (a == b) s += log_self[a];
    else if (b == a + 1 && a % S != S - 1) s += log_next[a];
    else s += log_next[a] + log_enter;
    s += log_em[t][b];
  }
  return s;
}

inline Vec masked_mean(const Mat& seg, std::size_t real) {
  Vec out(seg[0].size(), 0.0);
  for (std::size_t t = 0; t < real; ++t)
    for (std::size_t f = 0; f < out.size(); ++f) out[f] += seg[t][f];
  for (double& v : out) v /= static_cast<double>(real);
  return out;
}

inline std::size_t vote(const std::vector<std::size_t>& labels, const Vec& post_sums) {
  std::map<std::size_t, std::size_t> n;
  for (auto l : labels) ++n[l];
  std::size_t top = 0;
  for (auto& [l, c] : n) top = std::max(top, c);
  std::size_t best = 0;
  double best_post = -1;
  for (auto& [l, c] : n) {
    if (c == top && post_sums[l] > best_post) {
      best = l;
      best_post = post_sums[l];
    }
  }
  return best;
}

}  // namespace oracle
