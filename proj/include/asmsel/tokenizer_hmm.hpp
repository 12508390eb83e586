#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "asmsel/asm_sequence.hpp"
#include "asmsel/features.hpp"
#include "asmsel/gmm.hpp"
#include "asmsel/matrix.hpp"

namespace asmsel {

/// Scores a frame against one HMM state. The GMM set implements it; other
/// emission models (e.g. a network producing state posteriors) can be
/// decoded through the same graph.
class EmissionModel {
 public:
  virtual ~EmissionModel() = default;
  virtual std::size_t num_units() const = 0;
  virtual std::size_t num_states() const = 0;
  virtual double state_log_likelihood(std::size_t unit, std::size_t state,
                                      std::span<const double> frame) const = 0;
};

/// Left-to-right HMM for one unit. State s either loops (self_loop[s]) or
/// advances with probability 1 - self_loop[s]; advancing out of the last
/// state leaves the unit.
struct GmmHmm {
  std::size_t unit_id = 0;
  std::vector<DiagGmm> states;
  std::vector<double> self_loop;

  std::size_t num_states() const { return states.size(); }

  /// Dense (S+1) x (S+1) matrix; the extra column/row is the exit.
  Matrix transition_matrix() const;

  bool operator==(const GmmHmm&) const = default;
};

struct GmmHmmSet : EmissionModel {
  std::vector<GmmHmm> models;
  double unit_loop_logprob = 0.0;  // log(1 / D)
  std::uint64_t fingerprint = 0;
  std::vector<double> var_floor;
  std::size_t iterations_run = 0;
  double final_objective = 0.0;

  std::size_t num_units() const override { return models.size(); }
  std::size_t num_states() const override {
    return models.empty() ? 0 : models.front().num_states();
  }
  double state_log_likelihood(std::size_t unit, std::size_t state,
                              std::span<const double> frame) const override {
    return models[unit].states[state].log_likelihood(frame);
  }
};

/// Transition structure of the ergodic decoding graph: all units in parallel,
/// last state of every unit feeding the first state of every unit.
struct DecodeGraph {
  std::size_t num_units = 0;
  std::size_t num_states = 0;
  std::vector<double> log_self;  // indexed unit * num_states + state
  std::vector<double> log_next;  // advance; for the last state, the exit
  double log_enter = 0.0;        // entering any unit (also at t = 0)

  std::size_t index(std::size_t unit, std::size_t state) const { return unit * num_states + state; }
};

DecodeGraph decode_graph(const GmmHmmSet& set);

/// T x (D * S) table of state log-likelihoods.
Matrix emission_table(const FrameMatrix& fm, const EmissionModel& model);

struct DecodeResult {
  AsmSequence sequence;
  double log_likelihood = 0.0;
  std::vector<std::size_t> state_path;  // per frame, graph state index
};

/// Exact Viterbi over a precomputed emission table. Ties prefer the
/// predecessor with the lower unit id, then staying in the current state.
DecodeResult viterbi(const Matrix& log_emissions, const DecodeGraph& graph,
                     std::string utterance_id = {});

DecodeResult viterbi_decode(const FrameMatrix& fm, const GmmHmmSet& set);

struct HmmOptions {
  std::size_t n_states = 6;
  std::size_t n_gauss = 4;
  std::size_t seed_em_iters = 10;
  double var_floor_scale = 1e-3;
  double min_var_floor = 1e-6;
  double min_self_loop = 0.1;
  double max_self_loop = 0.9;
  std::uint64_t seed = 0;
};

GmmHmmSet seed_hmms(const std::vector<FrameMatrix>& corpus,
                    const std::vector<AsmSequence>& init_seqs, std::size_t num_units,
                    const HmmOptions& opts = {});

/// Best state alignment of one token through its unit's HMM, starting in the
/// first and ending in the last state. `unit_emissions` is L x S. Returns the
/// state per frame.
std::vector<std::size_t> align_token(const Matrix& unit_emissions, std::span<const double> log_self,
                                     std::span<const double> log_next);

/// Segmental re-training on hard transcriptions.
GmmHmmSet reestimate(const std::vector<FrameMatrix>& corpus, const std::vector<AsmSequence>& seqs,
                     const GmmHmmSet& prev, const HmmOptions& opts = {});

struct TrainOptions {
  HmmOptions hmm;
  std::size_t max_iters = 10;
  double stability_threshold = 0.995;
};

struct TrainResult {
  GmmHmmSet models;
  std::vector<AsmSequence> sequences;
  std::vector<double> objective;  // summed best-path log-likelihood per decode
  std::vector<double> stability;  // fraction of unchanged frame labels per decode
  bool converged = false;
};

/// Fraction of frames in `next` whose label equals the one in `prev`. Frames
/// not covered by `prev` count as changed.
double label_stability(const std::vector<AsmSequence>& prev, const std::vector<AsmSequence>& next);

std::vector<DecodeResult> decode_corpus(const std::vector<FrameMatrix>& corpus, const GmmHmmSet& set);

TrainResult train_tokenizer(const std::vector<FrameMatrix>& corpus,
                            const std::vector<AsmSequence>& init_seqs, std::size_t num_units,
                            const TrainOptions& opts = {});

/// "ASMH1": magic, D, S, K, F (u32), iterations (u32), unit loop log-prob,
/// final objective, F variance floors, then per unit and state the component
/// count (u32), weights, means, variances, and per unit S self-loop
/// probabilities. Reals are float64.
void write_hmm_set(const std::filesystem::path& path, const GmmHmmSet& set);
GmmHmmSet read_hmm_set(const std::filesystem::path& path);

}  // namespace asmsel
