#include "asmsel/stop_asm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"

namespace asmsel {

TokenStats collect_stats(const std::vector<AsmSequence>& seqs, std::size_t num_units) {
  if (seqs.empty()) throw ContractError("cannot collect statistics from an empty corpus");
  if (num_units == 0) throw ContractError("unit count must be positive");
  TokenStats st;
  st.num_utterances = seqs.size();
  st.num_units = num_units;
  st.probability = Matrix(seqs.size(), num_units);
  st.doc_freq.assign(num_units, 0);
  st.occ_count.assign(num_units, 0);
  std::vector<std::size_t> counts(num_units);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& tokens = seqs[i].tokens;
    if (tokens.empty()) throw ContractError("utterance " + seqs[i].utterance_id + " has zero tokens");
    std::fill(counts.begin(), counts.end(), 0);
    for (const Token& tok : tokens) {
      if (tok.unit >= num_units) {
        throw ContractError("utterance " + seqs[i].utterance_id + ": unit " + std::to_string(tok.unit) +
                            " out of range");
      }
      ++counts[tok.unit];
    }
    const double n = static_cast<double>(tokens.size());
    for (std::size_t j = 0; j < num_units; ++j) {
      st.probability(i, j) = static_cast<double>(counts[j]) / n;
      st.occ_count[j] += counts[j];
      if (counts[j] > 0) ++st.doc_freq[j];
    }
  }
  return st;
}

std::string_view metric_name(StopMetric m) {
  switch (m) {
    case StopMetric::kMp: return "mp";
    case StopMetric::kIdf: return "idf";
    case StopMetric::kVp: return "vp";
    case StopMetric::kSat: return "sat";
  }
  return "?";
}

StopMetric parse_metric(std::string_view name) {
  for (StopMetric m : kAllMetrics) {
    if (metric_name(m) == name) return m;
  }
  throw ContractError("unknown metric '" + std::string(name) + "' (expected mp, idf, vp or sat)");
}

std::vector<double> score_mp(const TokenStats& stats) {
  std::vector<double> mp(stats.num_units, 0.0);
  for (std::size_t i = 0; i < stats.num_utterances; ++i) {
    const auto row = stats.probability.row(i);
    for (std::size_t j = 0; j < stats.num_units; ++j) mp[j] += row[j];
  }
  for (double& v : mp) v /= static_cast<double>(stats.num_utterances);
  return mp;
}

std::vector<double> score_idf(const TokenStats& stats, IdfCount count) {
  const auto& nj = count == IdfCount::kDocumentFrequency ? stats.doc_freq : stats.occ_count;
  std::vector<double> idf(stats.num_units);
  const double n = static_cast<double>(stats.num_utterances);
  for (std::size_t j = 0; j < stats.num_units; ++j) {
    idf[j] = std::log((n + 1.0) / (static_cast<double>(nj[j]) + 1.0));
  }
  return idf;
}

std::vector<double> score_vp(const TokenStats& stats) {
  const auto mp = score_mp(stats);
  std::vector<double> vp(stats.num_units, 0.0);
  for (std::size_t i = 0; i < stats.num_utterances; ++i) {
    const auto row = stats.probability.row(i);
    for (std::size_t j = 0; j < stats.num_units; ++j) vp[j] += (row[j] - mp[j]) * (row[j] - mp[j]);
  }
  for (double& v : vp) v /= static_cast<double>(stats.num_utterances);
  return vp;
}

std::vector<double> score_sat(const TokenStats& stats, double eps) {
  const auto mp = score_mp(stats);
  const auto vp = score_vp(stats);
  std::vector<double> sat(stats.num_units);
  for (std::size_t j = 0; j < stats.num_units; ++j) sat[j] = mp[j] / std::max(std::sqrt(vp[j]), eps);
  return sat;
}

std::vector<double> score_metric(const TokenStats& stats, StopMetric metric, IdfCount idf_count) {
  switch (metric) {
    case StopMetric::kMp: return score_mp(stats);
    case StopMetric::kIdf: return score_idf(stats, idf_count);
    case StopMetric::kVp: return score_vp(stats);
    case StopMetric::kSat: return score_sat(stats);
  }
  throw ContractError("unknown metric");
}

bool StopAsmSet::contains(std::size_t unit) const {
  return std::find(selected.begin(), selected.end(), unit) != selected.end();
}

StopAsmSet select_stop_asms(std::vector<double> scores, StopMetric metric, std::size_t top_p) {
  if (top_p > scores.size()) {
    throw ContractError("top-P (" + std::to_string(top_p) + ") exceeds the unit count (" +
                        std::to_string(scores.size()) + ")");
  }
  StopAsmSet set;
  set.metric = metric;
  set.scores = std::move(scores);
  set.ranking.resize(set.scores.size());
  std::iota(set.ranking.begin(), set.ranking.end(), std::size_t{0});
  const bool descending = metric == StopMetric::kMp || metric == StopMetric::kSat;
  const auto& sc = set.scores;
  std::stable_sort(set.ranking.begin(), set.ranking.end(), [&](std::size_t a, std::size_t b) {
    return descending ? sc[a] > sc[b] : sc[a] < sc[b];
  });
  set.selected.assign(set.ranking.begin(), set.ranking.begin() + static_cast<std::ptrdiff_t>(top_p));
  return set;
}

std::string format_stop_set(const StopAsmSet& set) {
  std::ostringstream out;
  out << "metric=" << metric_name(set.metric) << " P=" << set.selected.size() << '\n';
  char buf[64];
  for (std::size_t u : set.ranking) {
    std::snprintf(buf, sizeof(buf), "%.17g", set.scores[u]);
    out << u << '\t' << buf << '\n';
  }
  out << "selected: ";
  for (std::size_t i = 0; i < set.selected.size(); ++i) out << (i ? "," : "") << set.selected[i];
  out << '\n';
  return out.str();
}

StopAsmSet parse_stop_set(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  StopAsmSet set;
  if (!std::getline(in, line) || line.rfind("metric=", 0) != 0) {
    throw ContractError("stop set file must start with 'metric=<name> P=<k>'");
  }
  const auto sp = line.find(" P=");
  if (sp == std::string::npos) throw ContractError("stop set header lacks P=");
  set.metric = parse_metric(line.substr(7, sp - 7));
  const std::size_t p = std::stoul(line.substr(sp + 3));

  std::vector<std::pair<std::size_t, double>> rows;
  while (std::getline(in, line)) {
    if (line.rfind("selected:", 0) == 0) {
      std::string rest = line.substr(9);
      std::istringstream ids(rest);
      std::string tok;
      while (std::getline(ids, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(' '));
        if (!tok.empty()) set.selected.push_back(std::stoul(tok));
      }
      break;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ContractError("malformed stop set row: " + line);
    rows.emplace_back(std::stoul(line.substr(0, tab)), std::stod(line.substr(tab + 1)));
  }
  set.scores.assign(rows.size(), 0.0);
  for (const auto& [u, s] : rows) {
    if (u >= rows.size()) throw ContractError("stop set unit id out of range");
    set.scores[u] = s;
    set.ranking.push_back(u);
  }
  if (set.selected.size() != p) throw ContractError("stop set selection size differs from P");
  for (std::size_t u : set.selected) {
    if (u >= rows.size()) throw ContractError("selected stop unit out of range");
  }
  return set;
}

void write_stop_set(const std::filesystem::path& path, const StopAsmSet& set) {
  write_file_atomic(path, format_stop_set(set));
}

StopAsmSet read_stop_set(const std::filesystem::path& path) { return parse_stop_set(read_file(path)); }

}  // namespace asmsel
