#include "asmsel/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"
#include "asmsel/rng.hpp"

namespace asmsel {

void SynthSpec::validate() const {
  if (n_classes < 2) throw ContractError("synthetic corpus needs at least 2 classes");
  if (n_event_units == 0 || n_filler_units == 0) throw ContractError("need event and filler units");
  if (!(filler_rate > 0.0 && filler_rate < 1.0)) throw ContractError("filler_rate must be in (0, 1)");
  if (dim == 0 || units_per_utterance == 0) throw ContractError("dim and units_per_utterance must be positive");
  if (min_span == 0 || min_span > max_span) throw ContractError("invalid span length range");
  if (!(noise_sd > 0.0) || !(separation > 0.0)) throw ContractError("noise_sd and separation must be positive");
  if (n_train == 0) throw ContractError("need at least one training utterance");
}

std::uint64_t SynthSpec::fingerprint() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "synth;classes=" << n_classes << ";events=" << n_event_units << ";fillers=" << n_filler_units
     << ";dim=" << dim << ";units=" << units_per_utterance << ";rate=" << filler_rate << ";noise=" << noise_sd
     << ";sep=" << separation << ";span=" << min_span << '-' << max_span << ";train=" << n_train
     << ";test=" << n_test << ";seed=" << seed;
  return fnv1a(ss.str());
}

namespace {

Matrix make_prototypes(const SynthSpec& spec, Rng& rng) {
  const std::size_t n = spec.num_units();
  const double min_dist = spec.separation * spec.noise_sd;
  // Box wide enough that rejection sampling terminates quickly.
  const double half_width = min_dist * std::max(1.0, std::cbrt(static_cast<double>(n)));
  Matrix protos(n, spec.dim);
  for (std::size_t u = 0; u < n; ++u) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw ContractError("cannot place prototypes with the requested separation");
      for (double& v : protos.row(u)) v = rng.uniform(-half_width, half_width);
      bool ok = true;
      for (std::size_t w = 0; w < u && ok; ++w) {
        ok = std::sqrt(squared_distance(protos.row(u), protos.row(w))) >= min_dist;
      }
      if (ok) break;
    }
  }
  return protos;
}

}  // namespace

SynthCorpus generate_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthCorpus corpus;
  corpus.prototypes = make_prototypes(spec, rng);
  for (std::size_t c = 0; c < spec.n_classes; ++c) corpus.classes.push_back("scene" + std::to_string(c));
  const std::size_t first_filler = spec.n_classes * spec.n_event_units;
  for (std::size_t f = 0; f < spec.n_filler_units; ++f) corpus.filler_ids.push_back(first_filler + f);

  const std::uint64_t fp = spec.fingerprint();
  const std::size_t total = spec.n_train + spec.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t cls = i % spec.n_classes;
    const bool train = i < spec.n_train;
    char id[32];
    std::snprintf(id, sizeof(id), "%s%05zu", train ? "tr" : "te", i);

    AsmSequence seq;
    seq.utterance_id = id;
    std::size_t t = 0;
    for (std::size_t k = 0; k < spec.units_per_utterance; ++k) {
      std::size_t unit;
      if (rng.uniform() < spec.filler_rate) {
        unit = first_filler + rng.index(spec.n_filler_units);
      } else {
        unit = cls * spec.n_event_units + rng.index(spec.n_event_units);
      }
      const auto len = static_cast<std::size_t>(
          rng.integer(static_cast<int>(spec.min_span), static_cast<int>(spec.max_span)));
      seq.tokens.push_back({unit, t, t + len});
      t += len;
    }

    FrameMatrix fm;
    fm.utterance_id = id;
    fm.fingerprint = fp;
    fm.frames = Matrix(t, spec.dim);
    for (const Token& tok : seq.tokens) {
      const auto proto = corpus.prototypes.row(tok.unit);
      for (std::size_t f = tok.start; f < tok.end; ++f) {
        auto row = fm.frames.row(f);
        for (std::size_t d = 0; d < spec.dim; ++d) row[d] = proto[d] + rng.normal(0.0, spec.noise_sd);
      }
    }
    corpus.utterances.push_back(std::move(fm));
    corpus.truth.push_back(std::move(seq));
    corpus.labels.push_back(corpus.classes[cls]);
    corpus.splits.push_back(train ? "train" : "test");
  }
  return corpus;
}

Waveform render_waveform(const AsmSequence& truth, std::size_t num_units, const FeatureConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  const std::size_t hop = cfg.hop_samples();
  const std::size_t win = cfg.window_samples();
  const double nyquist = cfg.sample_rate / 2.0;

  // Three partials per unit, spread on a log-frequency grid.
  Rng unit_rng(seed);
  std::vector<std::array<double, 3>> partials(num_units);
  for (auto& p : partials) {
    for (double& f : p) f = 100.0 * std::pow(nyquist * 0.8 / 100.0, unit_rng.uniform());
  }

  Rng noise(fnv1a(truth.utterance_id, seed ^ 0x5bd1e995ull));
  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.channels.assign(1, std::vector<double>(truth.total_frames() * hop + (win - hop), 0.0));
  auto& x = w.channels[0];
  for (const Token& tok : truth.tokens) {
    const std::size_t a = tok.start * hop;
    const std::size_t b = tok.end == truth.total_frames() ? x.size() : tok.end * hop;
    for (std::size_t n = a; n < b; ++n) {
      const double tsec = static_cast<double>(n) / cfg.sample_rate;
      double v = 0.0;
      for (double f : partials[tok.unit]) v += std::sin(2.0 * std::numbers::pi * f * tsec);
      x[n] = 0.25 * v + 0.01 * noise.normal();
    }
  }
  return w;
}

void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::string manifest;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& fm = corpus.utterances[i];
    const std::string rel = "features/" + fm.utterance_id + ".asmf";
    write_frames(dir / rel, fm);
    manifest += fm.utterance_id + '\t' + rel + '\t' + corpus.labels[i] + '\t' + corpus.splits[i] + '\n';
  }
  write_file_atomic(dir / "manifest.tsv", manifest);
  write_sequences(dir / "truth.seq", corpus.truth);
  std::string fillers;
  for (std::size_t f : corpus.filler_ids) fillers += std::to_string(f) + '\n';
  write_file_atomic(dir / "fillers.txt", fillers);
}

}  // namespace asmsel
