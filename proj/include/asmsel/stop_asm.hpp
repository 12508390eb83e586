#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "asmsel/asm_sequence.hpp"
#include "asmsel/matrix.hpp"

namespace asmsel {

/// Per-utterance unit statistics of a tokenized training set.
struct TokenStats {
  std::size_t num_utterances = 0;
  std::size_t num_units = 0;
  Matrix probability;                   // N x D, row i = unit frequencies of utterance i
  std::vector<std::size_t> doc_freq;    // utterances containing the unit
  std::vector<std::size_t> occ_count;   // total occurrences
};

TokenStats collect_stats(const std::vector<AsmSequence>& seqs, std::size_t num_units);

enum class StopMetric { kMp, kIdf, kVp, kSat };

std::string_view metric_name(StopMetric m);
StopMetric parse_metric(std::string_view name);
constexpr StopMetric kAllMetrics[] = {StopMetric::kMp, StopMetric::kIdf, StopMetric::kVp, StopMetric::kSat};

/// Mean probability of each unit over utterances.
std::vector<double> score_mp(const TokenStats& stats);

/// Which count plays the role of N_j in the IDF formula.
enum class IdfCount { kDocumentFrequency, kOccurrences };

/// ln((N + 1) / (N_j + 1)).
std::vector<double> score_idf(const TokenStats& stats, IdfCount count = IdfCount::kDocumentFrequency);

/// Population variance of each unit's per-utterance probability.
std::vector<double> score_vp(const TokenStats& stats);

/// MP / max(sqrt(VP), eps). Large values mean frequent and uniform.
std::vector<double> score_sat(const TokenStats& stats, double eps = 1e-12);

std::vector<double> score_metric(const TokenStats& stats, StopMetric metric,
                                 IdfCount idf_count = IdfCount::kDocumentFrequency);

struct StopAsmSet {
  StopMetric metric = StopMetric::kSat;
  std::vector<double> scores;
  std::vector<std::size_t> ranking;   // all units, most stop-like first
  std::vector<std::size_t> selected;  // first P of the ranking

  bool contains(std::size_t unit) const;
};

/// MP and SAT rank descending, IDF and VP ascending; ties go to the lower id.
StopAsmSet select_stop_asms(std::vector<double> scores, StopMetric metric, std::size_t top_p = 3);

/// `metric=<name> P=<k>`, then `unit<TAB>score` rows in ranking order, then
/// `selected: id,id,id`.
std::string format_stop_set(const StopAsmSet& set);
StopAsmSet parse_stop_set(const std::string& text);
void write_stop_set(const std::filesystem::path& path, const StopAsmSet& set);
StopAsmSet read_stop_set(const std::filesystem::path& path);

}  // namespace asmsel
