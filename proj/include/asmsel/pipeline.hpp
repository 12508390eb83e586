#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asmsel/asm_init.hpp"
#include "asmsel/classifier.hpp"
#include "asmsel/features.hpp"
#include "asmsel/selection.hpp"
#include "asmsel/stop_asm.hpp"
#include "asmsel/synth.hpp"
#include "asmsel/tokenizer_hmm.hpp"

namespace asmsel {

enum class TokenizerKind { kInitial, kHmm };
std::string_view tokenizer_name(TokenizerKind k);
TokenizerKind parse_tokenizer(std::string_view name);

struct PipelineConfig {
  FeatureConfig features;
  std::size_t num_units = 64;
  std::size_t n_segments = 50;
  std::size_t seg_len = 20;
  KMeansOptions kmeans;
  TrainOptions tokenizer;
  StopMetric metric = StopMetric::kSat;
  std::size_t top_p = 3;
  IdfCount idf_count = IdfCount::kDocumentFrequency;
  ClassifierOptions classifier;
  std::uint64_t seed = 1;
  SynthSpec synth;

  /// Overwrites fields from `key = value` pairs. Unknown keys are errors.
  void apply(const std::map<std::string, std::string>& kv);
  /// Reads ASMSEL_<KEY> for every known key.
  void apply_env();
  void validate() const;
  std::string to_text() const;

  static std::vector<std::string> keys();
};

/// `key = value` lines; `#` starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
PipelineConfig load_config(const std::optional<std::filesystem::path>& path);

/// Per-stage fingerprints: each hashes the upstream fingerprint together with
/// the parameters of its own stage.
std::uint64_t asm_fingerprint(std::uint64_t features_fp, const PipelineConfig& cfg);
std::uint64_t hmm_fingerprint(std::uint64_t asm_fp, const PipelineConfig& cfg);
std::uint64_t stop_fingerprint(std::uint64_t tokenizer_fp, StopMetric metric, const PipelineConfig& cfg);
std::uint64_t select_fingerprint(std::uint64_t upstream_fp, const PipelineConfig& cfg);
std::uint64_t eval_fingerprint(std::uint64_t segments_fp, const PipelineConfig& cfg);

/// Labeled utterances with their split.
struct Dataset {
  std::vector<FrameMatrix> utterances;
  std::vector<std::string> labels;
  std::vector<std::string> splits;
  std::vector<std::string> classes;

  std::vector<std::size_t> indices(std::string_view split) const;
  std::vector<FrameMatrix> subset(const std::vector<std::size_t>& idx) const;
};

Dataset dataset_from_synth(const SynthCorpus& corpus);

struct InitialTokenization {
  AsmInventory inventory;
  std::vector<AsmSequence> sequences;  // every utterance, dataset order
};

/// K-means on the training split's segment means; tokenizes every utterance.
InitialTokenization initial_tokenization(const Dataset& data, const PipelineConfig& cfg);

/// Merges a final token shorter than `min_len` into its predecessor.
AsmSequence merge_short_tail(AsmSequence seq, std::size_t min_len);

struct HmmTokenization {
  TrainResult training;
  std::vector<AsmSequence> sequences;  // every utterance, dataset order
};

/// Trains on the training split, then decodes the remaining utterances with
/// the final models.
HmmTokenization hmm_tokenization(const Dataset& data, const std::vector<AsmSequence>& initial,
                                 const PipelineConfig& cfg);

/// Stop units from the training split's sequences.
StopAsmSet detect_stop(const Dataset& data, const std::vector<AsmSequence>& seqs, StopMetric metric,
                       const PipelineConfig& cfg);

/// Segment batches for every utterance; without a stop set this is the
/// baseline segmentation.
std::vector<SegmentBatch> select_corpus(const Dataset& data, const std::vector<AsmSequence>* seqs,
                                        const StopAsmSet* stop, const PipelineConfig& cfg);

struct EvalOutcome {
  LinearSoftmaxClassifier model;
  EvalReport report;
};

EvalOutcome train_eval(const Dataset& data, const std::vector<SegmentBatch>& batches, const PipelineConfig& cfg);

// ---- on-disk stores --------------------------------------------------------

struct ManifestRow {
  std::string utterance_id;
  std::string path;
  std::string label;
  std::string split;
};

/// Tab-separated `id<TAB>path<TAB>label<TAB>split`; relative paths resolve
/// against the manifest's directory.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

std::map<std::string, std::string> read_meta(const std::filesystem::path& path);
void write_meta(const std::filesystem::path& path, const std::map<std::string, std::string>& kv);

/// Writes `<dir>/<id>.asmf`, `index.tsv` and `meta.txt`.
void write_feature_store(const std::filesystem::path& dir, const Dataset& data, std::uint64_t stage_fp);
Dataset read_feature_store(const std::filesystem::path& dir, std::uint64_t* stage_fp = nullptr);

}  // namespace asmsel
