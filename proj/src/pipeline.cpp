#include "asmsel/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"
#include "asmsel/parallel.hpp"

namespace asmsel {

std::string_view tokenizer_name(TokenizerKind k) { return k == TokenizerKind::kInitial ? "initial" : "hmm"; }

TokenizerKind parse_tokenizer(std::string_view name) {
  if (name == "initial") return TokenizerKind::kInitial;
  if (name == "hmm") return TokenizerKind::kHmm;
  throw ContractError("unknown tokenizer '" + std::string(name) + "' (expected initial or hmm)");
}

namespace {

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T v{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ContractError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return v;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// One row per config key: how to read it and how to print it.
struct KeyBinding {
  const char* key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define ASMSEL_SIZE(name, field)                                                                      \
  KeyBinding{name, [](PipelineConfig& c, const std::string& v) { c.field = parse_number<std::size_t>(name, v); }, \
             [](const PipelineConfig& c) { return std::to_string(c.field); }}
#define ASMSEL_INT(name, field)                                                                       \
  KeyBinding{name, [](PipelineConfig& c, const std::string& v) { c.field = parse_number<int>(name, v); },         \
             [](const PipelineConfig& c) { return std::to_string(c.field); }}
#define ASMSEL_REAL(name, field)                                                                      \
  KeyBinding{name, [](PipelineConfig& c, const std::string& v) { c.field = parse_number<double>(name, v); },      \
             [](const PipelineConfig& c) { return fmt_double(c.field); }}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = {
      ASMSEL_INT("sample_rate", features.sample_rate),
      ASMSEL_INT("n_fft", features.n_fft),
      ASMSEL_REAL("window_ms", features.window_ms),
      ASMSEL_REAL("hop_ms", features.hop_ms),
      ASMSEL_INT("n_mels", features.n_mels),
      ASMSEL_REAL("log_floor", features.log_floor),
      KeyBinding{"feature_kind",
                 [](PipelineConfig& c, const std::string& v) {
                   if (v == "lmfb") c.features.kind = FeatureKind::kLmfb;
                   else if (v == "mfcc") c.features.kind = FeatureKind::kMfcc;
                   else throw ContractError("feature_kind must be lmfb or mfcc, got '" + v + "'");
                 },
                 [](const PipelineConfig& c) {
                   return std::string(c.features.kind == FeatureKind::kLmfb ? "lmfb" : "mfcc");
                 }},
      ASMSEL_INT("n_ceps", features.n_ceps),
      ASMSEL_SIZE("num_units", num_units),
      ASMSEL_SIZE("n_segments", n_segments),
      ASMSEL_SIZE("seg_len", seg_len),
      ASMSEL_SIZE("kmeans_iters", kmeans.max_iters),
      ASMSEL_REAL("kmeans_tol", kmeans.tol),
      ASMSEL_SIZE("n_states", tokenizer.hmm.n_states),
      ASMSEL_SIZE("n_gauss", tokenizer.hmm.n_gauss),
      ASMSEL_SIZE("seed_em_iters", tokenizer.hmm.seed_em_iters),
      ASMSEL_REAL("var_floor_scale", tokenizer.hmm.var_floor_scale),
      ASMSEL_SIZE("hmm_iters", tokenizer.max_iters),
      ASMSEL_REAL("stability_threshold", tokenizer.stability_threshold),
      KeyBinding{"metric", [](PipelineConfig& c, const std::string& v) { c.metric = parse_metric(v); },
                 [](const PipelineConfig& c) { return std::string(metric_name(c.metric)); }},
      ASMSEL_SIZE("top_p", top_p),
      KeyBinding{"idf_count",
                 [](PipelineConfig& c, const std::string& v) {
                   if (v == "documents") c.idf_count = IdfCount::kDocumentFrequency;
                   else if (v == "occurrences") c.idf_count = IdfCount::kOccurrences;
                   else throw ContractError("idf_count must be documents or occurrences, got '" + v + "'");
                 },
                 [](const PipelineConfig& c) {
                   return std::string(c.idf_count == IdfCount::kDocumentFrequency ? "documents" : "occurrences");
                 }},
      ASMSEL_SIZE("epochs", classifier.epochs),
      ASMSEL_REAL("learning_rate", classifier.learning_rate),
      ASMSEL_SIZE("batch_size", classifier.batch_size),
      ASMSEL_REAL("l2", classifier.l2),
      KeyBinding{"seed", [](PipelineConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const PipelineConfig& c) { return std::to_string(c.seed); }},
      ASMSEL_SIZE("synth_classes", synth.n_classes),
      ASMSEL_SIZE("synth_event_units", synth.n_event_units),
      ASMSEL_SIZE("synth_filler_units", synth.n_filler_units),
      ASMSEL_SIZE("synth_dim", synth.dim),
      ASMSEL_SIZE("synth_units_per_utterance", synth.units_per_utterance),
      ASMSEL_REAL("synth_filler_rate", synth.filler_rate),
      ASMSEL_REAL("synth_noise_sd", synth.noise_sd),
      ASMSEL_REAL("synth_separation", synth.separation),
      ASMSEL_SIZE("synth_min_span", synth.min_span),
      ASMSEL_SIZE("synth_max_span", synth.max_span),
      ASMSEL_SIZE("synth_train", synth.n_train),
      ASMSEL_SIZE("synth_test", synth.n_test),
  };
  return table;
}

#undef ASMSEL_SIZE
#undef ASMSEL_INT
#undef ASMSEL_REAL

std::uint64_t chain(std::uint64_t upstream, const std::string& params) {
  return fnv1a(params, fnv1a(fingerprint_hex(upstream)));
}

}  // namespace

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const auto& b : bindings()) out.emplace_back(b.key);
  return out;
}

void PipelineConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    const auto& table = bindings();
    const auto it = std::find_if(table.begin(), table.end(), [&](const KeyBinding& b) { return key == b.key; });
    if (it == table.end()) throw ContractError("unknown config key '" + key + "'");
    it->set(*this, value);
  }
}

void PipelineConfig::apply_env() {
  std::map<std::string, std::string> kv;
  for (const auto& b : bindings()) {
    std::string name = "ASMSEL_";
    for (const char* p = b.key; *p; ++p) name += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
    if (const char* v = std::getenv(name.c_str())) kv[b.key] = trim(v);
  }
  apply(kv);
}

void PipelineConfig::validate() const {
  features.validate();
  if (num_units < 2) throw ContractError("num_units must be at least 2");
  if (n_segments == 0 || seg_len == 0) throw ContractError("n_segments and seg_len must be positive");
  if (tokenizer.hmm.n_states == 0 || tokenizer.hmm.n_gauss == 0) throw ContractError("n_states and n_gauss must be positive");
  if (tokenizer.hmm.n_states > seg_len) {
    throw ContractError("n_states (" + std::to_string(tokenizer.hmm.n_states) +
                        ") cannot exceed seg_len: initial tokens would be too short to seed the HMMs");
  }
  if (tokenizer.max_iters == 0) throw ContractError("hmm_iters must be positive");
  if (top_p > num_units) throw ContractError("top_p exceeds num_units");
  if (classifier.epochs == 0 || !(classifier.learning_rate > 0)) throw ContractError("epochs and learning_rate must be positive");
}

std::string PipelineConfig::to_text() const {
  std::string out;
  for (const auto& b : bindings()) out += std::string(b.key) + " = " + b.get(*this) + '\n';
  return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError("line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

PipelineConfig load_config(const std::optional<std::filesystem::path>& path) {
  PipelineConfig cfg;
  if (path) cfg.apply(parse_key_values(read_file(*path)));
  cfg.apply_env();
  return cfg;
}

std::uint64_t asm_fingerprint(std::uint64_t features_fp, const PipelineConfig& c) {
  std::ostringstream ss;
  ss << "asm;D=" << c.num_units << ";nseg=" << c.n_segments << ";seg=" << c.seg_len << ";iters=" << c.kmeans.max_iters
     << ";tol=" << fmt_double(c.kmeans.tol) << ";seed=" << c.seed;
  return chain(features_fp, ss.str());
}

std::uint64_t hmm_fingerprint(std::uint64_t asm_fp, const PipelineConfig& c) {
  const auto& h = c.tokenizer.hmm;
  std::ostringstream ss;
  ss << "hmm;S=" << h.n_states << ";K=" << h.n_gauss << ";em=" << h.seed_em_iters << ";floor=" << fmt_double(h.var_floor_scale)
     << ";iters=" << c.tokenizer.max_iters << ";stab=" << fmt_double(c.tokenizer.stability_threshold) << ";seed=" << c.seed;
  return chain(asm_fp, ss.str());
}

std::uint64_t stop_fingerprint(std::uint64_t tokenizer_fp, StopMetric metric, const PipelineConfig& c) {
  std::ostringstream ss;
  ss << "stop;metric=" << metric_name(metric) << ";P=" << c.top_p << ";idf=" << static_cast<int>(c.idf_count);
  return chain(tokenizer_fp, ss.str());
}

std::uint64_t select_fingerprint(std::uint64_t upstream_fp, const PipelineConfig& c) {
  return chain(upstream_fp, "select;seg=" + std::to_string(c.seg_len));
}

std::uint64_t eval_fingerprint(std::uint64_t segments_fp, const PipelineConfig& c) {
  std::ostringstream ss;
  ss << "eval;epochs=" << c.classifier.epochs << ";lr=" << fmt_double(c.classifier.learning_rate)
     << ";bs=" << c.classifier.batch_size << ";l2=" << fmt_double(c.classifier.l2) << ";seed=" << c.seed;
  return chain(segments_fp, ss.str());
}

std::vector<std::size_t> Dataset::indices(std::string_view split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::vector<FrameMatrix> Dataset::subset(const std::vector<std::size_t>& idx) const {
  std::vector<FrameMatrix> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(utterances[i]);
  return out;
}

Dataset dataset_from_synth(const SynthCorpus& corpus) {
  Dataset d;
  d.utterances = corpus.utterances;
  d.labels = corpus.labels;
  d.splits = corpus.splits;
  d.classes = corpus.classes;
  return d;
}

InitialTokenization initial_tokenization(const Dataset& data, const PipelineConfig& cfg) {
  const auto train = data.indices("train");
  if (train.empty()) throw ContractError("no training utterances");
  Matrix vectors;
  for (std::size_t i : train) {
    const auto& fm = data.utterances[i];
    const Matrix means = segment_means(fm, fixed_segment(fm.num_frames(), cfg.n_segments, cfg.seg_len));
    for (std::size_t r = 0; r < means.rows(); ++r) vectors.append_row(means.row(r));
  }
  InitialTokenization out;
  out.inventory = kmeans_fit(vectors, cfg.num_units, cfg.seed, data.utterances.front().fingerprint, cfg.kmeans);
  out.sequences.resize(data.utterances.size());
  parallel_for(data.utterances.size(), [&](std::size_t i) {
    out.sequences[i] = tokenize_initial(data.utterances[i], out.inventory, cfg.n_segments, cfg.seg_len);
  });
  return out;
}

AsmSequence merge_short_tail(AsmSequence seq, std::size_t min_len) {
  if (seq.tokens.size() >= 2 && seq.tokens.back().length() < min_len) {
    const std::size_t end = seq.tokens.back().end;
    seq.tokens.pop_back();
    seq.tokens.back().end = end;
  }
  return seq;
}

HmmTokenization hmm_tokenization(const Dataset& data, const std::vector<AsmSequence>& initial,
                                 const PipelineConfig& cfg) {
  const auto train = data.indices("train");
  std::vector<AsmSequence> init_train;
  for (std::size_t i : train) init_train.push_back(merge_short_tail(initial[i], cfg.tokenizer.hmm.n_states));

  TrainOptions opts = cfg.tokenizer;
  opts.hmm.seed = cfg.seed;
  HmmTokenization out;
  out.training = train_tokenizer(data.subset(train), init_train, cfg.num_units, opts);

  out.sequences.resize(data.utterances.size());
  for (std::size_t k = 0; k < train.size(); ++k) out.sequences[train[k]] = out.training.sequences[k];
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < data.splits.size(); ++i) {
    if (data.splits[i] != "train") rest.push_back(i);
  }
  parallel_for(rest.size(), [&](std::size_t k) {
    out.sequences[rest[k]] = viterbi_decode(data.utterances[rest[k]], out.training.models).sequence;
  });
  return out;
}

StopAsmSet detect_stop(const Dataset& data, const std::vector<AsmSequence>& seqs, StopMetric metric,
                       const PipelineConfig& cfg) {
  std::vector<AsmSequence> train;
  for (std::size_t i : data.indices("train")) train.push_back(seqs[i]);
  const TokenStats stats = collect_stats(train, cfg.num_units);
  return select_stop_asms(score_metric(stats, metric, cfg.idf_count), metric, cfg.top_p);
}

std::vector<SegmentBatch> select_corpus(const Dataset& data, const std::vector<AsmSequence>* seqs,
                                        const StopAsmSet* stop, const PipelineConfig& cfg) {
  std::vector<SegmentBatch> out(data.utterances.size());
  parallel_for(data.utterances.size(), [&](std::size_t i) {
    out[i] = stop ? select_utterance(data.utterances[i], (*seqs)[i], *stop, cfg.seg_len)
                  : baseline_segments(data.utterances[i], cfg.seg_len);
    out[i].label = data.labels[i];
  });
  return out;
}

EvalOutcome train_eval(const Dataset& data, const std::vector<SegmentBatch>& batches, const PipelineConfig& cfg) {
  std::vector<SegmentBatch> train, test;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    (data.splits[i] == "train" ? train : test).push_back(batches[i]);
  }
  if (train.empty() || test.empty()) throw ContractError("train-eval needs non-empty train and test splits");
  ClassifierOptions opts = cfg.classifier;
  opts.seed = cfg.seed;
  EvalOutcome out;
  out.model = train_classifier(train, data.classes, opts);
  out.report = evaluate(test, out.model, data.classes);
  return out;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    ManifestRow row;
    if (!std::getline(fields, row.utterance_id, '\t') || !std::getline(fields, row.path, '\t') ||
        !std::getline(fields, row.label, '\t') || !std::getline(fields, row.split)) {
      throw ContractError(path.string() + ":" + std::to_string(lineno) + ": expected id, path, label, split");
    }
    if (row.utterance_id.empty() || row.utterance_id.find_first_of("/\\ \t#") != std::string::npos) {
      throw ContractError(path.string() + ":" + std::to_string(lineno) + ": invalid utterance id '" +
                          row.utterance_id + "'");
    }
    if (row.split != "train" && row.split != "test") {
      throw ContractError("utterance " + row.utterance_id + ": split must be train or test");
    }
    if (!seen.insert(row.utterance_id).second) throw ContractError("duplicate utterance id " + row.utterance_id);
    if (std::filesystem::path(row.path).is_relative()) row.path = (path.parent_path() / row.path).string();
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ContractError(path.string() + ": empty manifest");
  return rows;
}

std::map<std::string, std::string> read_meta(const std::filesystem::path& path) {
  return parse_key_values(read_file(path));
}

void write_meta(const std::filesystem::path& path, const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + '\n';
  write_file_atomic(path, out);
}

void write_feature_store(const std::filesystem::path& dir, const Dataset& data, std::uint64_t stage_fp) {
  std::string index;
  for (std::size_t i = 0; i < data.utterances.size(); ++i) {
    write_frames(dir / (data.utterances[i].utterance_id + ".asmf"), data.utterances[i]);
    index += data.utterances[i].utterance_id + '\t' + data.labels[i] + '\t' + data.splits[i] + '\n';
  }
  std::string classes;
  for (const auto& c : data.classes) classes += (classes.empty() ? "" : ",") + c;
  write_file_atomic(dir / "index.tsv", index);
  write_meta(dir / "meta.txt", {{"fingerprint", fingerprint_hex(stage_fp)},
                                {"feature_fingerprint", fingerprint_hex(data.utterances.front().fingerprint)},
                                {"classes", classes}});
}

Dataset read_feature_store(const std::filesystem::path& dir, std::uint64_t* stage_fp) {
  const auto meta = read_meta(dir / "meta.txt");
  const auto need = [&](const char* key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw ContractError((dir / "meta.txt").string() + " lacks " + key);
    return it->second;
  };
  if (stage_fp) *stage_fp = parse_fingerprint(need("fingerprint"));
  const std::uint64_t feature_fp = parse_fingerprint(need("feature_fingerprint"));
  Dataset d;
  std::istringstream classes(need("classes"));
  for (std::string c; std::getline(classes, c, ',');) d.classes.push_back(c);
  std::istringstream index(read_file(dir / "index.tsv"));
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream f(line);
    std::string id, label, split;
    std::getline(f, id, '\t');
    std::getline(f, label, '\t');
    std::getline(f, split);
    d.labels.push_back(label);
    d.splits.push_back(split);
    d.utterances.emplace_back();
    d.utterances.back().utterance_id = id;
  }
  parallel_for(d.utterances.size(), [&](std::size_t i) {
    FrameMatrix fm = read_frames(dir / (d.utterances[i].utterance_id + ".asmf"));
    if (fm.utterance_id != d.utterances[i].utterance_id) {
      throw ContractError("feature file for " + d.utterances[i].utterance_id + " holds " + fm.utterance_id);
    }
    fm.fingerprint = feature_fp;
    d.utterances[i] = std::move(fm);
  });
  return d;
}

}  // namespace asmsel
