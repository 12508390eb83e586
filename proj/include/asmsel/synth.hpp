#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "asmsel/asm_sequence.hpp"
#include "asmsel/features.hpp"

namespace asmsel {

/// Labeled corpus with planted units. Unit ids: event units of class c are
/// c * n_event_units + e; filler units follow all event units.
struct SynthSpec {
  std::size_t n_classes = 4;
  std::size_t n_event_units = 2;   // per class
  std::size_t n_filler_units = 3;  // shared by all classes
  std::size_t dim = 16;
  std::size_t units_per_utterance = 50;
  double filler_rate = 0.5;
  double noise_sd = 1.0;
  /// Minimum pairwise prototype distance, in multiples of noise_sd.
  double separation = 4.0;
  std::size_t min_span = 15;
  std::size_t max_span = 25;
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  std::uint64_t seed = 1;

  std::size_t num_units() const { return n_classes * n_event_units + n_filler_units; }
  void validate() const;
  std::uint64_t fingerprint() const;
};

struct SynthCorpus {
  std::vector<FrameMatrix> utterances;
  std::vector<std::string> labels;
  std::vector<std::string> splits;  // "train" / "test"
  std::vector<AsmSequence> truth;
  std::vector<std::size_t> filler_ids;
  std::vector<std::string> classes;
  Matrix prototypes;  // num_units x dim
};

SynthCorpus generate_corpus(const SynthSpec& spec);

/// Renders a ground-truth sequence as audio: each unit is a fixed mixture of
/// sinusoids plus noise, laid out so frame t of the features covers the
/// samples of frame t of the sequence. `seed` fixes the unit timbres, so use
/// one seed per corpus; the noise also depends on the utterance id.
Waveform render_waveform(const AsmSequence& truth, std::size_t num_units, const FeatureConfig& cfg,
                         std::uint64_t seed);

/// Writes `features/<id>.asmf`, `manifest.tsv` (id, path, label, split),
/// `truth.seq` and `fillers.txt` under `dir`.
void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace asmsel
