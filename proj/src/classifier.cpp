#include "asmsel/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"
#include "asmsel/rng.hpp"

namespace asmsel {

std::vector<double> pool_segment(const Matrix& segment, std::size_t real_frames) {
  if (real_frames == 0 || real_frames > segment.rows()) {
    throw ContractError("segment has no real frames to pool");
  }
  std::vector<double> out(segment.cols(), 0.0);
  for (std::size_t t = 0; t < real_frames; ++t) {
    const auto row = segment.row(t);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
  }
  for (double& v : out) v /= static_cast<double>(real_frames);
  return out;
}

std::vector<double> pool_segment(const Matrix& segment, const std::vector<bool>& pad_mask) {
  if (pad_mask.size() != segment.rows()) throw ContractError("pad mask length differs from segment length");
  std::vector<double> out(segment.cols(), 0.0);
  std::size_t n = 0;
  for (std::size_t t = 0; t < segment.rows(); ++t) {
    if (!pad_mask[t]) continue;
    const auto row = segment.row(t);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
    ++n;
  }
  if (n == 0) throw ContractError("segment has no real frames to pool");
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

namespace {

void softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
}

std::vector<double> logits(const Matrix& w, const std::vector<double>& b, std::span<const double> x) {
  std::vector<double> z(b);
  for (std::size_t c = 0; c < w.rows(); ++c) {
    const auto wr = w.row(c);
    for (std::size_t d = 0; d < x.size(); ++d) z[c] += wr[d] * x[d];
  }
  return z;
}

}  // namespace

std::vector<double> LinearSoftmaxClassifier::posteriors(std::span<const double> pooled) const {
  std::vector<double> x(pooled.begin(), pooled.end());
  for (std::size_t d = 0; d < x.size(); ++d) x[d] = (x[d] - feature_mean[d]) / feature_scale[d];
  auto z = logits(weights, bias, x);
  softmax_inplace(z);
  return z;
}

std::vector<double> LinearSoftmaxClassifier::score_segment(const Matrix& segment, std::size_t real_frames) const {
  return posteriors(pool_segment(segment, real_frames));
}

std::size_t LinearSoftmaxClassifier::class_index(const std::string& name) const {
  const auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw ContractError("unknown scene label '" + name + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

LossGradient softmax_loss_gradient(const Matrix& weights, const std::vector<double>& bias, const Matrix& x,
                                   const std::vector<std::size_t>& y, double l2) {
  const std::size_t C = weights.rows();
  const std::size_t F = weights.cols();
  const double n = static_cast<double>(x.rows());
  LossGradient g;
  g.grad_weights = Matrix(C, F);
  g.grad_bias.assign(C, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    auto p = logits(weights, bias, xi);
    const double m = *std::max_element(p.begin(), p.end());
    double s = 0.0;
    for (double v : p) s += std::exp(v - m);
    g.loss -= (p[y[i]] - m - std::log(s)) / n;
    softmax_inplace(p);
    p[y[i]] -= 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      g.grad_bias[c] += p[c] / n;
      auto gw = g.grad_weights.row(c);
      for (std::size_t d = 0; d < F; ++d) gw[d] += p[c] * xi[d] / n;
    }
  }
  for (std::size_t i = 0; i < weights.data().size(); ++i) {
    g.loss += 0.5 * l2 * weights.data()[i] * weights.data()[i];
    g.grad_weights.data()[i] += l2 * weights.data()[i];
  }
  return g;
}

LinearSoftmaxClassifier train_classifier(const std::vector<SegmentBatch>& batches,
                                         const std::vector<std::string>& classes,
                                         const ClassifierOptions& opts) {
  if (classes.size() < 2) throw ContractError("a classifier needs at least two classes");
  LinearSoftmaxClassifier model;
  model.classes = classes;
  model.epochs = opts.epochs;
  model.learning_rate = opts.learning_rate;
  model.seed = opts.seed;

  Matrix x;
  std::vector<std::size_t> y;
  for (const auto& b : batches) {
    const std::size_t label = model.class_index(b.label);
    for (std::size_t k = 0; k < b.size(); ++k) {
      x.append_row(pool_segment(b.segments[k], b.real_frames[k]));
      y.push_back(label);
    }
  }
  std::vector<std::size_t> per_class(classes.size(), 0);
  for (std::size_t c : y) ++per_class[c];
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (per_class[c] == 0) throw ContractError("class '" + classes[c] + "' has no training segments");
  }

  const std::size_t n = x.rows();
  const std::size_t F = x.cols();
  model.feature_mean.assign(F, 0.0);
  model.feature_scale.assign(F, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < F; ++d) model.feature_mean[d] += x(i, d);
  }
  for (double& m : model.feature_mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < F; ++d) {
      const double z = x(i, d) - model.feature_mean[d];
      model.feature_scale[d] += z * z;
    }
  }
  for (double& s : model.feature_scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-12) s = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < F; ++d) x(i, d) = (x(i, d) - model.feature_mean[d]) / model.feature_scale[d];
  }

  model.weights = Matrix(classes.size(), F);
  model.bias.assign(classes.size(), 0.0);
  Rng rng(opts.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    // Cosine-decayed step size.
    const double lr = opts.learning_rate * 0.5 *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(opts.epochs)));
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      Matrix xb(end - start, F);
      std::vector<std::size_t> yb(end - start);
      for (std::size_t i = start; i < end; ++i) {
        std::copy_n(x.row(order[i]).begin(), F, xb.row(i - start).begin());
        yb[i - start] = y[order[i]];
      }
      const auto g = softmax_loss_gradient(model.weights, model.bias, xb, yb, opts.l2);
      for (std::size_t i = 0; i < model.weights.data().size(); ++i) model.weights.data()[i] -= lr * g.grad_weights.data()[i];
      for (std::size_t c = 0; c < model.bias.size(); ++c) model.bias[c] -= lr * g.grad_bias[c];
    }
  }
  return model;
}

std::size_t majority_vote(const std::vector<std::size_t>& segment_labels, const std::vector<double>& posterior_sums) {
  if (segment_labels.empty()) throw ContractError("cannot vote over zero segments");
  std::vector<std::size_t> votes(posterior_sums.size(), 0);
  for (std::size_t l : segment_labels) ++votes.at(l);
  std::size_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && posterior_sums[c] > posterior_sums[best])) best = c;
  }
  return best;
}

UtteranceDecision classify_utterance(const SegmentBatch& batch, const SegmentScorer& model) {
  if (batch.size() == 0) throw ContractError("utterance " + batch.utterance_id + " has no segments");
  UtteranceDecision out;
  out.posterior_sums.assign(model.num_classes(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto post = model.score_segment(batch.segments[k], batch.real_frames[k]);
    const auto arg = static_cast<std::size_t>(std::max_element(post.begin(), post.end()) - post.begin());
    out.segment_labels.push_back(arg);
    for (std::size_t c = 0; c < post.size(); ++c) out.posterior_sums[c] += post[c];
  }
  out.label = majority_vote(out.segment_labels, out.posterior_sums);
  return out;
}

double EvalReport::class_accuracy(std::size_t c) const {
  double row = 0.0;
  for (std::size_t j = 0; j < confusion.cols(); ++j) row += confusion(c, j);
  return row == 0.0 ? 0.0 : confusion(c, c) / row;
}

EvalReport evaluate(const std::vector<SegmentBatch>& batches, const SegmentScorer& model,
                    const std::vector<std::string>& classes) {
  if (classes.size() != model.num_classes()) throw ContractError("class list does not match the model");
  EvalReport report;
  report.classes = classes;
  report.confusion = Matrix(classes.size(), classes.size());
  for (const auto& b : batches) {
    const auto it = std::find(classes.begin(), classes.end(), b.label);
    if (it == classes.end()) {
      throw ContractError("utterance " + b.utterance_id + " has label '" + b.label + "' outside the class list");
    }
    const auto ref = static_cast<std::size_t>(it - classes.begin());
    const auto decision = classify_utterance(b, model);
    report.confusion(ref, decision.label) += 1.0;
    ++report.total;
    if (decision.label == ref) ++report.correct;
    report.predictions.emplace_back(b.utterance_id, decision.label);
  }
  return report;
}

std::string format_report(const EvalReport& report, const std::string& title) {
  std::ostringstream out;
  char buf[128];
  out << title << '\n';
  std::snprintf(buf, sizeof(buf), "accuracy: %.4f (%zu / %zu)\n", report.accuracy(), report.correct, report.total);
  out << buf << "\nper-class accuracy:\n";
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "  %-24s %.4f\n", report.classes[c].c_str(), report.class_accuracy(c));
    out << buf;
  }
  out << "\nconfusion (rows = reference, columns = predicted):\n";
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "  %-24s", report.classes[c].c_str());
    out << buf;
    for (std::size_t j = 0; j < report.classes.size(); ++j) {
      std::snprintf(buf, sizeof(buf), " %5.0f", report.confusion(c, j));
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

std::string format_report_csv(const EvalReport& report) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", report.accuracy());
  out << "kind,reference,predicted,value\n";
  out << "accuracy,,," << buf << '\n';
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "%.6f", report.class_accuracy(c));
    out << "class_accuracy," << report.classes[c] << ",," << buf << '\n';
  }
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    for (std::size_t j = 0; j < report.classes.size(); ++j) {
      out << "confusion," << report.classes[c] << ',' << report.classes[j] << ','
          << static_cast<long>(report.confusion(c, j)) << '\n';
    }
  }
  return out.str();
}

void write_classifier(const std::filesystem::path& path, const LinearSoftmaxClassifier& model) {
  ByteWriter out;
  out.magic("ASML1");
  out.u32(static_cast<std::uint32_t>(model.num_classes()));
  out.u32(static_cast<std::uint32_t>(model.dim()));
  out.u32(static_cast<std::uint32_t>(model.epochs));
  out.f64(model.learning_rate);
  out.u64(model.seed);
  for (const auto& c : model.classes) out.str(c);
  for (double v : model.feature_mean) out.f64(v);
  for (double v : model.feature_scale) out.f64(v);
  for (double v : model.weights.data()) out.f64(v);
  for (double v : model.bias) out.f64(v);
  write_file_atomic(path, out.bytes());
}

LinearSoftmaxClassifier read_classifier(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  in.expect_magic("ASML1");
  LinearSoftmaxClassifier m;
  const std::size_t C = in.u32();
  const std::size_t F = in.u32();
  m.epochs = in.u32();
  m.learning_rate = in.f64();
  m.seed = in.u64();
  for (std::size_t c = 0; c < C; ++c) m.classes.push_back(in.str());
  m.feature_mean.resize(F);
  m.feature_scale.resize(F);
  for (double& v : m.feature_mean) v = in.f64();
  for (double& v : m.feature_scale) v = in.f64();
  m.weights = Matrix(C, F);
  for (double& v : m.weights.data()) v = in.f64();
  m.bias.resize(C);
  for (double& v : m.bias) v = in.f64();
  if (!in.at_end()) throw ContractError("trailing bytes in " + path.string());
  for (double v : m.weights.data()) {
    if (!std::isfinite(v)) throw ContractError("non-finite classifier weight in " + path.string());
  }
  return m;
}

}  // namespace asmsel
