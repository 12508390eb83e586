#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "asmsel/matrix.hpp"
#include "asmsel/selection.hpp"

namespace asmsel {

/// Mean over the real (unpadded) frames of a segment.
std::vector<double> pool_segment(const Matrix& segment, const std::vector<bool>& pad_mask);
std::vector<double> pool_segment(const Matrix& segment, std::size_t real_frames);

/// Anything that maps a segment to class posteriors can drive the voting
/// classifier.
class SegmentScorer {
 public:
  virtual ~SegmentScorer() = default;
  virtual std::size_t num_classes() const = 0;
  virtual std::vector<double> score_segment(const Matrix& segment, std::size_t real_frames) const = 0;
};

/// Multinomial logistic regression over standardized, mask-pooled segments.
class LinearSoftmaxClassifier : public SegmentScorer {
 public:
  std::vector<std::string> classes;
  Matrix weights;             // C x F
  std::vector<double> bias;   // C
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;  // divide by this after centering
  std::size_t epochs = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;

  std::size_t num_classes() const override { return classes.size(); }
  std::size_t dim() const { return feature_mean.size(); }
  std::vector<double> score_segment(const Matrix& segment, std::size_t real_frames) const override;
  std::vector<double> posteriors(std::span<const double> pooled) const;
  std::size_t class_index(const std::string& name) const;
};

struct ClassifierOptions {
  std::size_t epochs = 40;
  double learning_rate = 0.5;
  std::size_t batch_size = 32;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct LossGradient {
  double loss = 0.0;
  Matrix grad_weights;
  std::vector<double> grad_bias;
};

/// Mean softmax cross-entropy over rows of `x` plus 0.5 * l2 * |W|^2, and its
/// gradient.
LossGradient softmax_loss_gradient(const Matrix& weights, const std::vector<double>& bias, const Matrix& x,
                                   const std::vector<std::size_t>& y, double l2);

/// Trains on every segment of every batch; each batch must carry a label
/// from `classes`.
LinearSoftmaxClassifier train_classifier(const std::vector<SegmentBatch>& batches,
                                         const std::vector<std::string>& classes,
                                         const ClassifierOptions& opts = {});

struct UtteranceDecision {
  std::size_t label = 0;
  std::vector<std::size_t> segment_labels;
  std::vector<double> posterior_sums;
};

/// Mode of `segment_labels`; ties go to the highest posterior sum, then the
/// lowest class id.
std::size_t majority_vote(const std::vector<std::size_t>& segment_labels,
                          const std::vector<double>& posterior_sums);

UtteranceDecision classify_utterance(const SegmentBatch& batch, const SegmentScorer& model);

struct EvalReport {
  std::vector<std::string> classes;
  std::size_t total = 0;
  std::size_t correct = 0;
  Matrix confusion;  // rows = reference, cols = predicted
  std::vector<std::pair<std::string, std::size_t>> predictions;

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  double class_accuracy(std::size_t c) const;
};

EvalReport evaluate(const std::vector<SegmentBatch>& batches, const SegmentScorer& model,
                    const std::vector<std::string>& classes);

std::string format_report(const EvalReport& report, const std::string& title);
std::string format_report_csv(const EvalReport& report);

/// "ASML1": magic, C, F (u32), epochs (u32), learning rate (f64), seed (u64),
/// class names, then feature mean, scale, weights and bias as float64.
void write_classifier(const std::filesystem::path& path, const LinearSoftmaxClassifier& model);
LinearSoftmaxClassifier read_classifier(const std::filesystem::path& path);

}  // namespace asmsel
