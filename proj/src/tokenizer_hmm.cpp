#include "asmsel/tokenizer_hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"
#include "asmsel/parallel.hpp"

namespace asmsel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fixed chunking keeps the statistics merge order independent of the
// machine's thread count.
constexpr std::size_t kAccumulationChunks = 16;

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

void check_pairing(const std::vector<FrameMatrix>& corpus, const std::vector<AsmSequence>& seqs,
                   std::size_t num_units) {
  if (corpus.size() != seqs.size()) {
    throw ContractError("corpus has " + std::to_string(corpus.size()) + " utterances but " +
                        std::to_string(seqs.size()) + " sequences");
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].utterance_id != seqs[i].utterance_id) {
      throw ContractError("sequence " + seqs[i].utterance_id + " paired with features of " +
                          corpus[i].utterance_id);
    }
    validate_sequence(seqs[i], num_units);
    if (seqs[i].total_frames() > corpus[i].num_frames()) {
      throw ContractError("sequence of " + seqs[i].utterance_id + " covers " +
                          std::to_string(seqs[i].total_frames()) + " frames but the utterance has " +
                          std::to_string(corpus[i].num_frames()));
    }
  }
}

double clamp_self_loop(double p, const HmmOptions& opts) {
  return std::clamp(p, opts.min_self_loop, opts.max_self_loop);
}

}  // namespace

Matrix GmmHmm::transition_matrix() const {
  const std::size_t S = num_states();
  Matrix a(S + 1, S + 1);
  for (std::size_t s = 0; s < S; ++s) {
    a(s, s) = self_loop[s];
    a(s, s + 1) = 1.0 - self_loop[s];
  }
  a(S, S) = 1.0;
  return a;
}

DecodeGraph decode_graph(const GmmHmmSet& set) {
  DecodeGraph g;
  g.num_units = set.num_units();
  g.num_states = set.num_states();
  g.log_self.resize(g.num_units * g.num_states);
  g.log_next.resize(g.num_units * g.num_states);
  for (std::size_t u = 0; u < g.num_units; ++u) {
    for (std::size_t s = 0; s < g.num_states; ++s) {
      const double p = set.models[u].self_loop[s];
      g.log_self[g.index(u, s)] = std::log(p);
      g.log_next[g.index(u, s)] = std::log1p(-p);
    }
  }
  g.log_enter = set.unit_loop_logprob;
  return g;
}

Matrix emission_table(const FrameMatrix& fm, const EmissionModel& model) {
  const std::size_t D = model.num_units();
  const std::size_t S = model.num_states();
  Matrix table(fm.num_frames(), D * S);
  for (std::size_t t = 0; t < fm.num_frames(); ++t) {
    const auto x = fm.frames.row(t);
    auto out = table.row(t);
    for (std::size_t u = 0; u < D; ++u) {
      for (std::size_t s = 0; s < S; ++s) out[u * S + s] = model.state_log_likelihood(u, s, x);
    }
  }
  return table;
}

DecodeResult viterbi(const Matrix& log_emissions, const DecodeGraph& graph, std::string utterance_id) {
  const std::size_t T = log_emissions.rows();
  const std::size_t D = graph.num_units;
  const std::size_t S = graph.num_states;
  const std::size_t N = D * S;
  if (D == 0 || S == 0) throw ContractError("empty decoding graph");
  if (log_emissions.cols() != N) throw ContractError("emission table does not match decoding graph");
  if (T < S) {
    throw ContractError("utterance " + utterance_id + " has " + std::to_string(T) +
                        " frames, fewer than the " + std::to_string(S) + " states of one unit");
  }

  std::vector<double> prev(N, kNegInf), cur(N);
  std::vector<std::uint32_t> back(T * N);
  std::vector<std::uint8_t> entered(T * N, 0);

  for (std::size_t u = 0; u < D; ++u) {
    const std::size_t i = graph.index(u, 0);
    prev[i] = graph.log_enter + log_emissions(0, i);
    back[i] = static_cast<std::uint32_t>(i);
    entered[i] = 1;
  }

  for (std::size_t t = 1; t < T; ++t) {
    double entry = kNegInf;
    std::size_t entry_from = graph.index(0, S - 1);
    for (std::size_t v = 0; v < D; ++v) {
      const std::size_t j = graph.index(v, S - 1);
      const double score = prev[j] + graph.log_next[j] + graph.log_enter;
      if (score > entry) {
        entry = score;
        entry_from = j;
      }
    }
    const std::size_t entry_unit = entry_from / S;
    const auto e = log_emissions.row(t);
    for (std::size_t u = 0; u < D; ++u) {
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = graph.index(u, s);
        double best = prev[i] + graph.log_self[i];
        std::size_t from = i;
        bool from_entry = false;
        if (s > 0) {
          const double adv = prev[i - 1] + graph.log_next[i - 1];
          if (adv > best) {
            best = adv;
            from = i - 1;
          }
        } else if (entry > best || (entry == best && entry_unit < u)) {
          best = entry;
          from = entry_from;
          from_entry = true;
        }
        cur[i] = best + e[i];
        back[t * N + i] = static_cast<std::uint32_t>(from);
        entered[t * N + i] = from_entry ? 1 : 0;
      }
    }
    std::swap(prev, cur);
  }

  double best = kNegInf;
  std::size_t state = graph.index(0, S - 1);
  for (std::size_t v = 0; v < D; ++v) {
    const std::size_t j = graph.index(v, S - 1);
    if (prev[j] > best) {
      best = prev[j];
      state = j;
    }
  }
  if (!std::isfinite(best)) {
    throw ContractError("no finite-scoring path through utterance " + utterance_id);
  }

  DecodeResult result;
  result.log_likelihood = best;
  result.state_path.resize(T);
  std::vector<std::uint8_t> starts(T, 0);
  for (std::size_t t = T; t-- > 0;) {
    result.state_path[t] = state;
    starts[t] = entered[t * N + state];
    state = back[t * N + state];
  }

  result.sequence.utterance_id = std::move(utterance_id);
  for (std::size_t t = 0; t < T; ++t) {
    if (starts[t]) {
      if (!result.sequence.tokens.empty()) result.sequence.tokens.back().end = t;
      result.sequence.tokens.push_back({result.state_path[t] / S, t, T});
    }
  }
  return result;
}

DecodeResult viterbi_decode(const FrameMatrix& fm, const GmmHmmSet& set) {
  if (fm.fingerprint != set.fingerprint) {
    throw ContractError("feature fingerprint of " + fm.utterance_id + " does not match the HMM set");
  }
  if (fm.dim() != set.var_floor.size()) {
    throw ContractError("feature dimension of " + fm.utterance_id + " does not match the HMM set");
  }
  return viterbi(emission_table(fm, set), decode_graph(set), fm.utterance_id);
}

std::vector<DecodeResult> decode_corpus(const std::vector<FrameMatrix>& corpus, const GmmHmmSet& set) {
  std::vector<DecodeResult> out(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) { out[i] = viterbi_decode(corpus[i], set); });
  return out;
}

GmmHmmSet seed_hmms(const std::vector<FrameMatrix>& corpus, const std::vector<AsmSequence>& init_seqs,
                    std::size_t num_units, const HmmOptions& opts) {
  if (corpus.empty()) throw ContractError("cannot seed HMMs from an empty corpus");
  if (num_units == 0 || opts.n_states == 0 || opts.n_gauss == 0) {
    throw ContractError("num_units, n_states and n_gauss must be positive");
  }
  check_pairing(corpus, init_seqs, num_units);
  const std::size_t S = opts.n_states;
  const std::size_t F = corpus.front().dim();
  for (const auto& fm : corpus) {
    if (fm.dim() != F) throw ContractError("feature dimension differs in " + fm.utterance_id);
    if (fm.fingerprint != corpus.front().fingerprint) {
      throw ContractError("feature fingerprint differs in " + fm.utterance_id);
    }
  }

  // Global per-dimension variance sets the floor.
  std::vector<double> mean(F, 0.0), var(F, 0.0);
  std::size_t count = 0;
  for (const auto& fm : corpus) {
    for (std::size_t t = 0; t < fm.num_frames(); ++t) {
      const auto x = fm.frames.row(t);
      for (std::size_t d = 0; d < F; ++d) mean[d] += x[d];
    }
    count += fm.num_frames();
  }
  for (double& m : mean) m /= static_cast<double>(count);
  for (const auto& fm : corpus) {
    for (std::size_t t = 0; t < fm.num_frames(); ++t) {
      const auto x = fm.frames.row(t);
      for (std::size_t d = 0; d < F; ++d) var[d] += (x[d] - mean[d]) * (x[d] - mean[d]);
    }
  }
  GmmHmmSet set;
  set.var_floor.resize(F);
  for (std::size_t d = 0; d < F; ++d) {
    set.var_floor[d] = std::max(opts.var_floor_scale * var[d] / static_cast<double>(count), opts.min_var_floor);
  }

  std::vector<std::vector<Matrix>> pools(num_units, std::vector<Matrix>(S));
  std::vector<std::size_t> occurrences(num_units, 0), total_len(num_units, 0);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const Token& tok : init_seqs[i].tokens) {
      const std::size_t L = tok.length();
      if (L < S) {
        throw ContractError("token of unit " + std::to_string(tok.unit) + " in " + corpus[i].utterance_id +
                            " spans " + std::to_string(L) + " frames, fewer than " + std::to_string(S) +
                            " states");
      }
      ++occurrences[tok.unit];
      total_len[tok.unit] += L;
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t a = tok.start + s * L / S;
        const std::size_t b = tok.start + (s + 1) * L / S;
        for (std::size_t t = a; t < b; ++t) pools[tok.unit][s].append_row(corpus[i].frames.row(t));
      }
    }
  }
  for (std::size_t u = 0; u < num_units; ++u) {
    if (occurrences[u] == 0) {
      throw ContractError("unit " + std::to_string(u) + " has no occurrences in the initial tokenization");
    }
  }

  set.models.resize(num_units);
  for (std::size_t u = 0; u < num_units; ++u) {
    set.models[u].unit_id = u;
    set.models[u].states.assign(S, DiagGmm{});
    const double avg = static_cast<double>(total_len[u]) / static_cast<double>(occurrences[u]);
    set.models[u].self_loop.assign(S, clamp_self_loop(1.0 - static_cast<double>(S) / avg, opts));
  }
  parallel_for(num_units * S, [&](std::size_t job) {
    const std::size_t u = job / S;
    const std::size_t s = job % S;
    set.models[u].states[s] =
        fit_gmm(pools[u][s], opts.n_gauss, set.var_floor, mix_seed(opts.seed, u, s), opts.seed_em_iters);
  });

  set.unit_loop_logprob = -std::log(static_cast<double>(num_units));
  set.fingerprint = corpus.front().fingerprint;
  return set;
}

std::vector<std::size_t> align_token(const Matrix& unit_emissions, std::span<const double> log_self,
                                     std::span<const double> log_next) {
  const std::size_t S = unit_emissions.cols();
  const std::size_t L = unit_emissions.rows();
  if (L < S) throw ContractError("token shorter than the unit's state count");

  std::vector<double> prev(S, kNegInf), cur(S);
  std::vector<std::uint8_t> advanced(L * S, 0);
  prev[0] = unit_emissions(0, 0);
  for (std::size_t k = 1; k < L; ++k) {
    const auto e = unit_emissions.row(k);
    for (std::size_t s = 0; s < S; ++s) {
      double best = prev[s] + log_self[s];
      if (s > 0) {
        const double adv = prev[s - 1] + log_next[s - 1];
        if (adv > best) {
          best = adv;
          advanced[k * S + s] = 1;
        }
      }
      cur[s] = best + e[s];
    }
    std::swap(prev, cur);
  }
  std::vector<std::size_t> states(L);
  std::size_t s = S - 1;
  for (std::size_t k = L; k-- > 0;) {
    states[k] = s;
    if (k > 0 && advanced[k * S + s]) --s;
  }
  return states;
}

namespace {

struct UnitAccumulator {
  std::vector<GmmStats> states;
  std::vector<double> occupancy;
  std::size_t tokens = 0;
  std::size_t exits = 0;  // tokens followed by another token
};

}  // namespace

GmmHmmSet reestimate(const std::vector<FrameMatrix>& corpus, const std::vector<AsmSequence>& seqs,
                     const GmmHmmSet& prev, const HmmOptions& opts) {
  const std::size_t D = prev.num_units();
  const std::size_t S = prev.num_states();
  check_pairing(corpus, seqs, D);
  const DecodeGraph graph = decode_graph(prev);

  auto fresh = [&] {
    std::vector<UnitAccumulator> acc(D);
    for (std::size_t u = 0; u < D; ++u) {
      acc[u].occupancy.assign(S, 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        const DiagGmm& g = prev.models[u].states[s];
        acc[u].states.emplace_back(g.num_components(), g.dim());
      }
    }
    return acc;
  };

  const std::size_t chunks = std::min(kAccumulationChunks, corpus.size());
  std::vector<std::vector<UnitAccumulator>> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    auto acc = fresh();
    const std::size_t lo = c * corpus.size() / chunks;
    const std::size_t hi = (c + 1) * corpus.size() / chunks;
    for (std::size_t i = lo; i < hi; ++i) {
      const FrameMatrix& fm = corpus[i];
      if (fm.fingerprint != prev.fingerprint) {
        throw ContractError("feature fingerprint of " + fm.utterance_id + " does not match the HMM set");
      }
      const auto& tokens = seqs[i].tokens;
      for (std::size_t k = 0; k < tokens.size(); ++k) {
        const Token& tok = tokens[k];
        if (tok.length() < S) {
          throw ContractError("token of unit " + std::to_string(tok.unit) + " in " + fm.utterance_id +
                              " is shorter than " + std::to_string(S) + " states");
        }
        Matrix table(tok.length(), S);
        for (std::size_t t = tok.start; t < tok.end; ++t) {
          for (std::size_t s = 0; s < S; ++s) {
            table(t - tok.start, s) = prev.state_log_likelihood(tok.unit, s, fm.frames.row(t));
          }
        }
        const std::size_t base = graph.index(tok.unit, 0);
        const auto states = align_token(table, std::span(graph.log_self).subspan(base, S),
                                        std::span(graph.log_next).subspan(base, S));
        UnitAccumulator& ua = acc[tok.unit];
        for (std::size_t t = tok.start; t < tok.end; ++t) {
          const std::size_t s = states[t - tok.start];
          ua.states[s].accumulate(prev.models[tok.unit].states[s], fm.frames.row(t));
          ua.occupancy[s] += 1.0;
        }
        ++ua.tokens;
        if (k + 1 < tokens.size()) ++ua.exits;
      }
    }
    partial[c] = std::move(acc);
  });

  std::vector<UnitAccumulator> total = fresh();
  for (const auto& part : partial) {
    for (std::size_t u = 0; u < D; ++u) {
      for (std::size_t s = 0; s < S; ++s) {
        total[u].states[s].merge(part[u].states[s]);
        total[u].occupancy[s] += part[u].occupancy[s];
      }
      total[u].tokens += part[u].tokens;
      total[u].exits += part[u].exits;
    }
  }

  GmmHmmSet next = prev;
  for (std::size_t u = 0; u < D; ++u) {
    const UnitAccumulator& ua = total[u];
    if (ua.tokens == 0) continue;  // carried forward unchanged
    GmmHmm& model = next.models[u];
    for (std::size_t s = 0; s < S; ++s) {
      model.states[s] = gmm_update(prev.models[u].states[s], ua.states[s], prev.var_floor);
      const double stays = ua.occupancy[s] - static_cast<double>(ua.tokens);
      const double leaves = static_cast<double>(s + 1 < S ? ua.tokens : ua.exits);
      if (stays + leaves > 0.0) model.self_loop[s] = clamp_self_loop(stays / (stays + leaves), opts);
    }
  }
  return next;
}

double label_stability(const std::vector<AsmSequence>& prev, const std::vector<AsmSequence>& next) {
  if (prev.size() != next.size()) throw ContractError("sequence corpora differ in size");
  std::size_t same = 0, total = 0;
  for (std::size_t i = 0; i < next.size(); ++i) {
    const auto a = prev[i].frame_labels();
    const auto b = next[i].frame_labels();
    total += b.size();
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t t = 0; t < n; ++t) same += a[t] == b[t] ? 1 : 0;
  }
  return total == 0 ? 1.0 : static_cast<double>(same) / static_cast<double>(total);
}

TrainResult train_tokenizer(const std::vector<FrameMatrix>& corpus, const std::vector<AsmSequence>& init_seqs,
                            std::size_t num_units, const TrainOptions& opts) {
  if (opts.max_iters == 0) throw ContractError("max_iters must be positive");
  TrainResult result;
  result.models = seed_hmms(corpus, init_seqs, num_units, opts.hmm);
  std::vector<AsmSequence> prev = init_seqs;

  for (std::size_t iter = 1; iter <= opts.max_iters; ++iter) {
    const auto decoded = decode_corpus(corpus, result.models);
    double objective = 0.0;
    result.sequences.clear();
    for (const auto& d : decoded) {
      objective += d.log_likelihood;
      result.sequences.push_back(d.sequence);
    }
    result.objective.push_back(objective);
    result.stability.push_back(label_stability(prev, result.sequences));
    result.models.iterations_run = iter;
    result.models.final_objective = objective;
    if (result.stability.back() >= opts.stability_threshold) {
      result.converged = true;
      break;
    }
    if (iter == opts.max_iters) break;
    result.models = reestimate(corpus, result.sequences, result.models, opts.hmm);
    prev = result.sequences;
  }
  return result;
}

void write_hmm_set(const std::filesystem::path& path, const GmmHmmSet& set) {
  const std::size_t D = set.num_units();
  const std::size_t S = set.num_states();
  const std::size_t F = set.var_floor.size();
  std::size_t K = 0;
  for (const auto& m : set.models) {
    for (const auto& g : m.states) K = std::max(K, g.num_components());
  }
  ByteWriter out;
  out.magic("ASMH1");
  out.u32(static_cast<std::uint32_t>(D));
  out.u32(static_cast<std::uint32_t>(S));
  out.u32(static_cast<std::uint32_t>(K));
  out.u32(static_cast<std::uint32_t>(F));
  out.u32(static_cast<std::uint32_t>(set.iterations_run));
  out.f64(set.unit_loop_logprob);
  out.f64(set.final_objective);
  for (double v : set.var_floor) out.f64(v);
  for (const auto& m : set.models) {
    for (const auto& g : m.states) {
      out.u32(static_cast<std::uint32_t>(g.num_components()));
      for (double w : g.weights()) out.f64(w);
      for (double v : g.means().data()) out.f64(v);
      for (double v : g.variances().data()) out.f64(v);
    }
    for (double p : m.self_loop) out.f64(p);
  }
  write_file_atomic(path, out.bytes());
}

GmmHmmSet read_hmm_set(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  in.expect_magic("ASMH1");
  const std::size_t D = in.u32();
  const std::size_t S = in.u32();
  const std::size_t K = in.u32();
  const std::size_t F = in.u32();
  GmmHmmSet set;
  set.iterations_run = in.u32();
  set.unit_loop_logprob = in.f64();
  set.final_objective = in.f64();
  set.var_floor.resize(F);
  for (double& v : set.var_floor) v = in.f64();
  set.models.resize(D);
  for (std::size_t u = 0; u < D; ++u) {
    GmmHmm& m = set.models[u];
    m.unit_id = u;
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t k = in.u32();
      if (k == 0 || k > K) throw ContractError("bad component count in " + path.string());
      std::vector<double> w(k);
      Matrix mu(k, F), var(k, F);
      for (double& v : w) v = in.f64();
      for (double& v : mu.data()) v = in.f64();
      for (double& v : var.data()) v = in.f64();
      m.states.emplace_back(std::move(w), std::move(mu), std::move(var));
    }
    m.self_loop.resize(S);
    for (double& p : m.self_loop) p = in.f64();
  }
  if (!in.at_end()) throw ContractError("trailing bytes in " + path.string());
  return set;
}

}  // namespace asmsel
