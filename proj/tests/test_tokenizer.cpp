#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "asmsel/asm_init.hpp"
#include "asmsel/common.hpp"
#include "asmsel/gmm.hpp"
#include "asmsel/pipeline.hpp"
#include "asmsel/tokenizer_hmm.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace asmsel;
using testutil::TempDir;

namespace {

double diag_gauss_log(std::span<const double> x, const std::vector<double>& mu, const std::vector<double>& var) {
  double s = 0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    s += -0.5 * std::log(2 * std::numbers::pi * var[d]) - 0.5 * (x[d] - mu[d]) * (x[d] - mu[d]) / var[d];
  }
  return s;
}

// Frames drawn around per-unit prototypes; tokens never repeat a unit back
// to back so every true boundary is visible.
struct Planted {
  std::vector<FrameMatrix> corpus;
  std::vector<AsmSequence> truth;
};

Planted planted_corpus(std::size_t n_utts, std::size_t D, std::size_t F, std::size_t tokens, double sep,
                       std::uint64_t seed) {
  Rng rng(seed);
  Matrix proto(D, F);
  for (std::size_t u = 0; u < D; ++u) proto(u, u % F) = sep * (1 + u / F);
  Planted p;
  for (std::size_t i = 0; i < n_utts; ++i) {
    std::vector<std::pair<std::size_t, std::size_t>> units;
    std::size_t prev = D;
    for (std::size_t k = 0; k < tokens; ++k) {
      std::size_t u;
      do u = rng.index(D); while (u == prev);
      prev = u;
      units.push_back({u, 15 + rng.index(11)});
    }
    AsmSequence seq = testutil::make_seq("p" + std::to_string(i), units);
    FrameMatrix fm;
    fm.utterance_id = seq.utterance_id;
    fm.fingerprint = 5;
    fm.frames = Matrix(seq.total_frames(), F);
    for (const Token& tok : seq.tokens) {
      for (std::size_t t = tok.start; t < tok.end; ++t) {
        for (std::size_t d = 0; d < F; ++d) fm.frames(t, d) = proto(tok.unit, d) + rng.normal();
      }
    }
    p.corpus.push_back(std::move(fm));
    p.truth.push_back(std::move(seq));
  }
  return p;
}

std::vector<AsmSequence> fixed_tokenization(const std::vector<FrameMatrix>& corpus, std::size_t D,
                                            std::uint64_t seed) {
  Matrix means;
  for (const auto& fm : corpus) {
    const Matrix m = segment_means(fm, fixed_segment(fm.num_frames(), 1000, 20));
    for (std::size_t r = 0; r < m.rows(); ++r) means.append_row(m.row(r));
  }
  const AsmInventory inv = kmeans_fit(means, D, seed, corpus.front().fingerprint);
  std::vector<AsmSequence> out;
  // a short tail can't hold every state
  for (const auto& fm : corpus) out.push_back(merge_short_tail(tokenize_initial(fm, inv, 1000, 20), 3));
  return out;
}

DecodeGraph random_graph(Rng& rng, std::size_t D, std::size_t S) {
  DecodeGraph g;
  g.num_units = D;
  g.num_states = S;
  for (std::size_t i = 0; i < D * S; ++i) {
    const double p = rng.uniform(0.1, 0.9);
    g.log_self.push_back(std::log(p));
    g.log_next.push_back(std::log1p(-p));
  }
  g.log_enter = std::log(1.0 / D);
  return g;
}

}  // namespace

TEST_SUITE("gmm") {

TEST_CASE("log-likelihood matches the mixture formula") {
  Rng rng(1);
  const std::size_t K = 3, F = 4;
  Matrix mu(K, F), var(K, F);
  for (double& v : mu.data()) v = rng.normal();
  for (double& v : var.data()) v = rng.uniform(0.2, 2.0);
  const std::vector<double> w{0.2, 0.5, 0.3};
  const DiagGmm g(w, mu, var);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(F);
    for (double& v : x) v = rng.normal(0, 2);
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) {
      s += w[k] * std::exp(diag_gauss_log(x, {mu.row(k).begin(), mu.row(k).end()},
                                          {var.row(k).begin(), var.row(k).end()}));
    }
    CHECK(g.log_likelihood(x) == doctest::Approx(std::log(s)).epsilon(1e-12));
  }
  const DiagGmm z({1.0, 0.0}, Matrix(2, 1), Matrix(2, 1, 1.0));
  std::vector<double> out(2);
  z.component_log_likelihoods(std::vector<double>{0.0}, out);
  CHECK(std::isinf(out[1]));
  CHECK(log_sum_exp(std::vector<double>{-1000.0, -1000.0}) == doctest::Approx(-1000.0 + std::log(2.0)));
}

TEST_CASE("statistics merge regardless of order") {
  Rng rng(2);
  const DiagGmm g({0.5, 0.5}, Matrix(2, 2, 0.0), Matrix(2, 2, 1.0));
  Matrix x(60, 2);
  for (double& v : x.data()) v = rng.normal();
  GmmStats all(2, 2), a(2, 2), b(2, 2);
  for (std::size_t t = 0; t < 60; ++t) {
    all.accumulate(g, x.row(t));
    (t % 3 ? a : b).accumulate(g, x.row(t));
  }
  GmmStats ab = a, ba = b;
  ab.merge(b);
  ba.merge(a);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ab.sum.data()[i] == doctest::Approx(all.sum.data()[i]).epsilon(1e-12));
    CHECK(ba.sum_sq.data()[i] == doctest::Approx(all.sum_sq.data()[i]).epsilon(1e-12));
  }
  CHECK(ab.frames == 60);
}

TEST_CASE("fitting keeps weights normalised and variances floored") {
  Rng rng(3);
  Matrix x(300, 3);
  for (std::size_t t = 0; t < 300; ++t) {
    for (std::size_t d = 0; d < 3; ++d) x(t, d) = (t % 2 ? 5.0 : -5.0) + rng.normal(0, 0.5);
  }
  const std::vector<double> floor(3, 0.01);
  const DiagGmm g = fit_gmm(x, 4, floor, 9);
  double s = 0;
  for (double w : g.weights()) s += w;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : g.variances().data()) CHECK(v >= 0.01);
  CHECK(fit_gmm(x.slice_rows(0, 2), 4, floor, 9).num_components() == 2);
}

}  // TEST_SUITE

TEST_SUITE("tokenizer_hmm") {

TEST_CASE("viterbi equals exhaustive path enumeration") {
  Rng rng(17);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t D = 1 + rng.index(3), S = 1 + rng.index(3);
    const std::size_t T = S + rng.index(9 - S);
    const DecodeGraph g = random_graph(rng, D, S);
    Matrix em(T, D * S);
    oracle::Mat em_plain(T, oracle::Vec(D * S));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < D * S; ++j) em_plain[t][j] = em(t, j) = rng.normal(-3, 2);
    }
    const DecodeResult r = viterbi(em, g);
    const auto best = oracle::best_path(em_plain, D, S, g.log_self, g.log_next, g.log_enter);
    REQUIRE(best.paths > 0);
    CHECK(std::abs(r.log_likelihood - best.score) <= 1e-9);
    if (S > 1) CHECK(r.state_path == best.path);
    if (S > 1)
      CHECK(oracle::path_score(em_plain, S, g.log_self, g.log_next, g.log_enter, r.state_path) ==
          doctest::Approx(r.log_likelihood).epsilon(1e-12));
    validate_sequence(r.sequence, D);
    CHECK(r.sequence.total_frames() == T);
    for (const Token& tok : r.sequence.tokens) CHECK(tok.length() >= S);
  }
}

TEST_CASE("a single unit tiles the utterance") {
  Rng rng(4);
  const DecodeGraph g = random_graph(rng, 1, 3);
  Matrix em(40, 3);
  for (double& v : em.data()) v = rng.normal();
  const DecodeResult r = viterbi(em, g);
  CHECK(r.sequence.total_frames() == 40);
  for (const Token& tok : r.sequence.tokens) CHECK(tok.unit == 0);
}

TEST_CASE("crafted two-unit sequence recovers its boundaries") {
  DecodeGraph g;
  g.num_units = 2;
  g.num_states = 2;
  g.log_self.assign(4, std::log(0.5));
  g.log_next.assign(4, std::log(0.5));
  g.log_enter = std::log(0.5);
  // unit 0 for frames 0-2, unit 1 for 3-5, unit 0 for 6-7
  const std::size_t truth[8] = {0, 0, 1, 2, 3, 3, 0, 1};
  Matrix em(8, 4, -50.0);
  for (std::size_t t = 0; t < 8; ++t) em(t, truth[t]) = 0.0;
  const DecodeResult r = viterbi(em, g);
  REQUIRE(r.sequence.tokens.size() == 3);
  CHECK(r.sequence.tokens[0] == Token{0, 0, 3});
  CHECK(r.sequence.tokens[1] == Token{1, 3, 6});
  CHECK(r.sequence.tokens[2] == Token{0, 6, 8});
}

TEST_CASE("exact ties prefer the lower unit") {
  DecodeGraph g;
  g.num_units = 3;
  g.num_states = 1;
  g.log_self.assign(3, std::log(0.5));
  g.log_next.assign(3, std::log(0.5));
  g.log_enter = std::log(1.0 / 3);
  const DecodeResult r = viterbi(Matrix(5, 3, -1.0), g);
  for (const Token& tok : r.sequence.tokens) CHECK(tok.unit == 0);
  Rng rng(1);
  CHECK_THROWS_AS(viterbi(Matrix(2, 9, 0.0), random_graph(rng, 3, 3)), ContractError);
}

TEST_CASE("seeding on constant data") {
  std::vector<FrameMatrix> corpus{{"c", Matrix(48, 2, 1.5), 1}};
  const std::vector<AsmSequence> init{testutil::make_seq("c", {{0, 24}, {1, 24}})};
  HmmOptions opts;
  opts.n_states = 3;
  const GmmHmmSet set = seed_hmms(corpus, init, 2, opts);
  REQUIRE(set.num_units() == 2);
  for (const GmmHmm& m : set.models) {
    for (const DiagGmm& st : m.states) {
      for (double v : st.means().data()) CHECK(v == doctest::Approx(1.5).epsilon(1e-12));
      for (double v : st.variances().data()) CHECK(v == 1e-6);
    }
    for (double p : m.self_loop) CHECK(p == doctest::Approx(1.0 - 3.0 / 24));
  }
}

TEST_CASE("single Gaussian states are the floored sub-span moments") {
  Rng rng(6);
  const FrameMatrix fm = testutil::random_frames(rng, 70, 3, "g", 1);
  const std::vector<AsmSequence> init{testutil::make_seq("g", {{0, 17}, {1, 30}, {0, 23}})};
  HmmOptions opts;
  opts.n_states = 3;
  opts.n_gauss = 1;
  const GmmHmmSet set = seed_hmms({fm}, init, 2, opts);
  for (std::size_t u = 0; u < 2; ++u) {
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<std::size_t> frames;
      for (const Token& tok : init[0].tokens) {
        if (tok.unit != u) continue;
        const std::size_t L = tok.length();
        for (std::size_t t = tok.start + s * L / 3; t < tok.start + (s + 1) * L / 3; ++t) frames.push_back(t);
      }
      const DiagGmm& g = set.models[u].states[s];
      REQUIRE(g.num_components() == 1);
      for (std::size_t d = 0; d < 3; ++d) {
        double m = 0, v = 0;
        for (auto t : frames) m += fm.frames(t, d);
        m /= frames.size();
        for (auto t : frames) v += (fm.frames(t, d) - m) * (fm.frames(t, d) - m);
        v = std::max(v / frames.size(), set.var_floor[d]);
        CHECK(g.means()(0, d) == doctest::Approx(m).epsilon(1e-9));
        CHECK(g.variances()(0, d) == doctest::Approx(v).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("seeded state means land near their generators") {
  const Planted p = planted_corpus(20, 2, 3, 10, 6.0, 3);
  HmmOptions opts;
  opts.n_states = 3;
  opts.n_gauss = 1;
  const GmmHmmSet set = seed_hmms(p.corpus, p.truth, 2, opts);
  for (std::size_t u = 0; u < 2; ++u) {
    for (std::size_t s = 0; s < 3; ++s) {
      std::size_t n = 0;
      for (const auto& seq : p.truth)
        for (const Token& tok : seq.tokens)
          if (tok.unit == u) n += (s + 1) * tok.length() / 3 - s * tok.length() / 3;
      const DiagGmm& g = set.models[u].states[s];
      for (std::size_t d = 0; d < 3; ++d) {
        const double expect = d == u ? 6.0 : 0.0;
        CHECK(std::abs(g.means()(0, d) - expect) <= 4.0 / std::sqrt(double(n)));
      }
    }
  }
}

TEST_CASE("seeding contract") {
  std::vector<FrameMatrix> corpus{{"c", Matrix(30, 1, 0.0), 1}};
  HmmOptions opts;
  opts.n_states = 6;
  CHECK_THROWS_AS(seed_hmms(corpus, {testutil::make_seq("c", {{0, 25}, {1, 5}})}, 2, opts), ContractError);
  try {
    seed_hmms(corpus, {testutil::make_seq("c", {{0, 30}})}, 2, opts);
    FAIL("expected an error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("unit 1") != std::string::npos);
  }
}

TEST_CASE("model invariants hold after seeding and training") {
  const Planted p = planted_corpus(12, 3, 4, 12, 5.0, 9);
  TrainOptions opts;
  opts.hmm.n_states = 3;
  opts.hmm.n_gauss = 2;
  const TrainResult r = train_tokenizer(p.corpus, fixed_tokenization(p.corpus, 3, 1), 3, opts);
  for (const GmmHmm& m : r.models.models) {
    for (const DiagGmm& st : m.states) {
      double s = 0;
      for (double w : st.weights()) s += w;
      CHECK(std::abs(s - 1.0) <= 1e-9);
      for (std::size_t k = 0; k < st.num_components(); ++k)
        for (std::size_t d = 0; d < st.dim(); ++d) CHECK(st.variances()(k, d) >= r.models.var_floor[d]);
    }
    const Matrix a = m.transition_matrix();
    for (std::size_t i = 0; i < m.num_states(); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        s += a(i, j);
        if (j != i && j != i + 1) CHECK(a(i, j) == 0.0);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
  for (const AsmSequence& seq : r.sequences) {
    validate_sequence(seq, 3);
    for (const Token& tok : seq.tokens) CHECK(tok.length() >= 3);
  }
  CHECK(r.models.unit_loop_logprob == doctest::Approx(std::log(1.0 / 3)));
}

TEST_CASE("re-estimation at a fixed point changes nothing") {
  // Well separated per-state levels make the in-token alignment the uniform
  // split; long final tokens pin every clamped self-loop at the ceiling.
  Rng rng(12);
  const std::size_t S = 2;
  std::vector<FrameMatrix> corpus;
  std::vector<AsmSequence> seqs;
  for (int i = 0; i < 4; ++i) {
    const AsmSequence seq = testutil::make_seq("f" + std::to_string(i), {{0, 6}, {0, 6}, {1, 24}});
    FrameMatrix fm{seq.utterance_id, Matrix(seq.total_frames(), 1), 1};
    for (const Token& tok : seq.tokens) {
      const std::size_t L = tok.length();
      for (std::size_t t = tok.start; t < tok.end; ++t) {
        const std::size_t s = (t - tok.start) * S / L;
        fm.frames(t, 0) = 40.0 * tok.unit + 20.0 * s + rng.normal(0, 0.5);
      }
    }
    corpus.push_back(std::move(fm));
    seqs.push_back(seq);
  }
  HmmOptions opts;
  opts.n_states = S;
  opts.n_gauss = 1;
  const GmmHmmSet prev = seed_hmms(corpus, seqs, 2, opts);
  const GmmHmmSet next = reestimate(corpus, seqs, prev, opts);
  for (std::size_t u = 0; u < 2; ++u) {
    for (std::size_t s = 0; s < S; ++s) {
      const DiagGmm& a = prev.models[u].states[s];
      const DiagGmm& b = next.models[u].states[s];
      CHECK(std::abs(a.means()(0, 0) - b.means()(0, 0)) <= 1e-9);
      CHECK(std::abs(a.variances()(0, 0) - b.variances()(0, 0)) <= 1e-9);
      CHECK(std::abs(prev.models[u].self_loop[s] - next.models[u].self_loop[s]) <= 1e-9);
    }
  }
}

TEST_CASE("units absent from the transcription are carried forward") {
  const Planted p = planted_corpus(6, 3, 3, 8, 5.0, 4);
  HmmOptions opts;
  opts.n_states = 3;
  opts.n_gauss = 2;
  const GmmHmmSet prev = seed_hmms(p.corpus, p.truth, 3, opts);
  std::vector<AsmSequence> relabeled = p.truth;
  for (auto& seq : relabeled)
    for (auto& tok : seq.tokens)
      if (tok.unit == 2) tok.unit = 0;
  const GmmHmmSet next = reestimate(p.corpus, relabeled, prev, opts);
  CHECK(next.models[2] == prev.models[2]);
  CHECK_FALSE(next.models[0] == prev.models[0]);
}

TEST_CASE("alignment is confined to the token") {
  Matrix em(5, 3, -10.0);
  em(0, 0) = 0;
  em(1, 1) = 0;
  em(2, 1) = 0;
  em(3, 1) = 0;
  em(4, 2) = 0;
  const std::vector<double> ls(3, std::log(0.5)), ln(3, std::log(0.5));
  CHECK(align_token(em, ls, ln) == std::vector<std::size_t>{0, 1, 1, 1, 2});
  // the path must start in the first state and end in the last
  Matrix flat(3, 3, 0.0);
  flat(0, 2) = 5;
  CHECK(align_token(flat, ls, ln) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("training recovers planted boundaries and never loses likelihood") {
  const Planted p = planted_corpus(30, 3, 4, 12, 5.0, 21);
  TrainOptions opts;
  opts.hmm.n_states = 3;
  opts.hmm.n_gauss = 2;
  opts.hmm.seed = 2;
  const TrainResult r = train_tokenizer(p.corpus, fixed_tokenization(p.corpus, 3, 7), 3, opts);
  for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] >= r.objective[i - 1] - 1e-6);
  CHECK(r.objective.size() <= 10);
  CHECK(r.converged);

  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < p.truth.size(); ++i) {
    for (std::size_t k = 1; k < p.truth[i].tokens.size(); ++k) {
      const std::size_t b = p.truth[i].tokens[k].start;
      bool found = false;
      for (const Token& tok : r.sequences[i].tokens) {
        if (tok.start > 0 && (tok.start + 2 >= b && tok.start <= b + 2)) found = true;
      }
      hit += found;
      ++total;
    }
  }
  CHECK(double(hit) / total >= 0.9);
}

TEST_CASE("a corpus at its fixed point converges after one decode") {
  const Planted p = planted_corpus(10, 3, 4, 10, 8.0, 5);
  TrainOptions opts;
  opts.hmm.n_states = 3;
  opts.hmm.n_gauss = 1;
  const TrainResult r = train_tokenizer(p.corpus, p.truth, 3, opts);
  CHECK(r.objective.size() == 1);
  CHECK(r.converged);
  CHECK(label_stability(p.truth, r.sequences) >= 0.995);
}

TEST_CASE("label stability") {
  const std::vector<AsmSequence> a{testutil::make_seq("x", {{0, 10}, {1, 10}})};
  const std::vector<AsmSequence> b{testutil::make_seq("x", {{0, 12}, {1, 8}})};
  CHECK(label_stability(a, a) == 1.0);
  CHECK(label_stability(a, b) == doctest::Approx(18.0 / 20));
  const std::vector<AsmSequence> longer{testutil::make_seq("x", {{0, 10}, {1, 20}})};
  CHECK(label_stability(a, longer) == doctest::Approx(20.0 / 30));
}

TEST_CASE("training is deterministic") {
  const Planted p = planted_corpus(8, 3, 3, 8, 4.0, 8);
  TrainOptions opts;
  opts.hmm.n_states = 3;
  opts.hmm.n_gauss = 2;
  const auto init = fixed_tokenization(p.corpus, 3, 3);
  const TrainResult a = train_tokenizer(p.corpus, init, 3, opts);
  const TrainResult b = train_tokenizer(p.corpus, init, 3, opts);
  CHECK(a.sequences == b.sequences);
  CHECK(a.objective == b.objective);
  for (std::size_t u = 0; u < 3; ++u) CHECK(a.models.models[u] == b.models.models[u]);
}

TEST_CASE("ASMH1 round trip") {
  TempDir dir("asmh");
  const Planted p = planted_corpus(4, 2, 2, 6, 5.0, 2);
  HmmOptions opts;
  opts.n_states = 2;
  opts.n_gauss = 2;
  GmmHmmSet set = seed_hmms(p.corpus, p.truth, 2, opts);
  set.iterations_run = 3;
  set.final_objective = -123.5;
  write_hmm_set(dir / "m.asmh", set);
  const GmmHmmSet back = read_hmm_set(dir / "m.asmh");
  CHECK(testutil::slurp(dir / "m.asmh").substr(0, 5) == "ASMH1");
  REQUIRE(back.num_units() == 2);
  for (std::size_t u = 0; u < 2; ++u) CHECK(back.models[u] == set.models[u]);
  CHECK(back.var_floor == set.var_floor);
  CHECK(back.iterations_run == 3);
  CHECK(back.final_objective == -123.5);
  CHECK(back.unit_loop_logprob == set.unit_loop_logprob);
}

}  // TEST_SUITE
