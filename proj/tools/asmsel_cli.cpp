// Staged command-line front end. Every command reads and writes inside one
// workspace directory (--out):
//
//   features/                   feature store
//   asm/                        initial inventory and sequences
//   hmm/                        refined models and sequences
//   stop/<tokenizer>/<metric>.txt
//   segments/<tag>/             tag is "baseline" or "<tokenizer>-<metric>"
//   eval/<tag>/                 model and report
//   report.txt
//
// Each stage directory holds a meta.txt with the stage fingerprint. A stage
// recomputes the fingerprint it expects from the current configuration and
// refuses inputs that disagree.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"
#include "asmsel/parallel.hpp"
#include "asmsel/pipeline.hpp"

using namespace asmsel;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::optional<fs::path> config;
  std::optional<fs::path> manifest;
  fs::path out = ".";
  std::optional<std::string> metric;
  std::optional<std::size_t> top_p;
  std::string tokenizer = "hmm";
  bool baseline = false;
  std::optional<std::uint64_t> seed;
  bool wav = false;
};

void note(const std::string& msg) { std::fprintf(stderr, "asmsel: %s\n", msg.c_str()); }

PipelineConfig resolve_config(const Options& o) {
  PipelineConfig cfg = load_config(o.config);
  if (o.metric) cfg.metric = parse_metric(*o.metric);
  if (o.top_p) cfg.top_p = *o.top_p;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.synth.seed = *o.seed;
  }
  cfg.validate();
  return cfg;
}

std::string meta_value(const std::map<std::string, std::string>& meta, const fs::path& path, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw ContractError(path.string() + " lacks " + key);
  return it->second;
}

void expect_fingerprint(const fs::path& meta_path, const std::string& key, std::uint64_t expected,
                        const std::string& rerun) {
  const auto meta = read_meta(meta_path);
  const std::uint64_t recorded = parse_fingerprint(meta_value(meta, meta_path, key));
  if (recorded != expected) {
    throw ContractError("stale artifact " + meta_path.parent_path().string() + ": recorded " + fingerprint_hex(recorded) +
                        ", current configuration expects " + fingerprint_hex(expected) + "; rerun `asmsel " + rerun +
                        "`");
  }
}

// ---- fingerprint chain -----------------------------------------------------

struct Workspace {
  fs::path root;
  fs::path features() const { return root / "features"; }
  fs::path asm_dir() const { return root / "asm"; }
  fs::path hmm_dir() const { return root / "hmm"; }
  fs::path stop_dir(TokenizerKind t) const { return root / "stop" / std::string(tokenizer_name(t)); }
  fs::path segments(const std::string& tag) const { return root / "segments" / tag; }
  fs::path eval(const std::string& tag) const { return root / "eval" / tag; }
};

std::uint64_t features_fp(const Workspace& ws) {
  const fs::path meta = ws.features() / "meta.txt";
  if (!fs::exists(meta)) throw IoError("no feature store at " + ws.features().string() + "; run `asmsel features`");
  return parse_fingerprint(meta_value(read_meta(meta), meta, "fingerprint"));
}

std::uint64_t expected_tokenizer_fp(const Workspace& ws, TokenizerKind t, const PipelineConfig& cfg) {
  const std::uint64_t a = asm_fingerprint(features_fp(ws), cfg);
  return t == TokenizerKind::kInitial ? a : hmm_fingerprint(a, cfg);
}

std::string tag_of(const Options& o, const PipelineConfig& cfg) {
  if (o.baseline) return "baseline";
  return o.tokenizer + "-" + std::string(metric_name(cfg.metric));
}

std::uint64_t expected_segments_fp(const Workspace& ws, const Options& o, const PipelineConfig& cfg) {
  if (o.baseline) return select_fingerprint(features_fp(ws), cfg);
  const TokenizerKind t = parse_tokenizer(o.tokenizer);
  return select_fingerprint(stop_fingerprint(expected_tokenizer_fp(ws, t, cfg), cfg.metric, cfg), cfg);
}

// ---- loading ---------------------------------------------------------------

std::vector<AsmSequence> load_sequences(const Workspace& ws, TokenizerKind t, const PipelineConfig& cfg,
                                        const Dataset& data) {
  const fs::path dir = t == TokenizerKind::kInitial ? ws.asm_dir() : ws.hmm_dir();
  expect_fingerprint(dir / "meta.txt", "fingerprint", expected_tokenizer_fp(ws, t, cfg),
                     t == TokenizerKind::kInitial ? "init-asm" : "train-tokenizer");
  std::vector<AsmSequence> seqs = read_sequences(dir / "sequences.seq");
  if (seqs.size() != data.utterances.size()) {
    throw ContractError(dir.string() + ": " + std::to_string(seqs.size()) + " sequences for " +
                        std::to_string(data.utterances.size()) + " utterances");
  }
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].utterance_id != data.utterances[i].utterance_id) {
      throw ContractError(dir.string() + ": sequence " + std::to_string(i) + " is " + seqs[i].utterance_id +
                          ", expected " + data.utterances[i].utterance_id);
    }
    validate_sequence(seqs[i], cfg.num_units);
  }
  return seqs;
}

// Splits and classes from the feature store index, without the frames.
Dataset load_index(const Workspace& ws) {
  const fs::path meta_path = ws.features() / "meta.txt";
  const auto meta = read_meta(meta_path);
  Dataset d;
  std::istringstream classes(meta_value(meta, meta_path, "classes"));
  for (std::string c; std::getline(classes, c, ',');) d.classes.push_back(c);
  std::istringstream index(read_file(ws.features() / "index.tsv"));
  for (std::string line; std::getline(index, line);) {
    if (line.empty()) continue;
    std::istringstream f(line);
    std::string id, label, split;
    std::getline(f, id, '\t');
    std::getline(f, label, '\t');
    std::getline(f, split);
    d.utterances.emplace_back();
    d.utterances.back().utterance_id = id;
    d.labels.push_back(label);
    d.splits.push_back(split);
  }
  return d;
}

// ---- commands --------------------------------------------------------------

void cmd_features(const Options& o, const PipelineConfig& cfg) {
  if (!o.manifest) throw ContractError("features needs --manifest");
  const Workspace ws{o.out};
  const auto rows = read_manifest(*o.manifest);
  const auto is_frames = [](const ManifestRow& r) { return fs::path(r.path).extension() == ".asmf"; };
  const std::size_t n_frames = std::count_if(rows.begin(), rows.end(), is_frames);
  if (n_frames != 0 && n_frames != rows.size()) {
    throw ContractError(o.manifest->string() + ": mixes feature files and audio files");
  }
  const bool precomputed = n_frames != 0;

  Dataset data;
  data.utterances.resize(rows.size());
  for (const auto& r : rows) {
    data.labels.push_back(r.label);
    data.splits.push_back(r.split);
  }
  std::set<std::string> classes(data.labels.begin(), data.labels.end());
  data.classes.assign(classes.begin(), classes.end());

  parallel_for(rows.size(), [&](std::size_t i) {
    FrameMatrix fm;
    if (precomputed) {
      fm = read_frames(rows[i].path);
    } else {
      fm = compute_features(downmix(load_audio(rows[i].path, cfg.features.sample_rate)), cfg.features);
    }
    fm.utterance_id = rows[i].utterance_id;
    if (fm.num_frames() == 0) throw ContractError("utterance " + rows[i].utterance_id + " yields no frames");
    data.utterances[i] = std::move(fm);
  });

  const std::size_t dim = data.utterances.front().dim();
  for (const auto& fm : data.utterances) {
    if (fm.dim() != dim) {
      throw ContractError("utterance " + fm.utterance_id + " has " + std::to_string(fm.dim()) + " features, expected " +
                          std::to_string(dim));
    }
  }
  const std::uint64_t feature_fp =
      precomputed ? fnv1a("precomputed;F=" + std::to_string(dim)) : cfg.features.fingerprint();
  for (auto& fm : data.utterances) fm.fingerprint = feature_fp;
  const std::uint64_t stage_fp = fnv1a(read_file(*o.manifest), feature_fp);

  fs::remove_all(ws.features());
  write_feature_store(ws.features(), data, stage_fp);
  note("features: " + std::to_string(rows.size()) + " utterances, dim " + std::to_string(dim) + ", " +
       std::to_string(data.classes.size()) + " classes -> " + ws.features().string());
}

void cmd_init_asm(const Options& o, const PipelineConfig& cfg) {
  const Workspace ws{o.out};
  std::uint64_t ffp = 0;
  const Dataset data = read_feature_store(ws.features(), &ffp);
  const InitialTokenization init = initial_tokenization(data, cfg);
  write_inventory(ws.asm_dir() / "inventory.asmc", init.inventory);
  write_sequences(ws.asm_dir() / "sequences.seq", init.sequences);
  write_meta(ws.asm_dir() / "meta.txt", {{"fingerprint", fingerprint_hex(asm_fingerprint(ffp, cfg))},
                                         {"upstream", fingerprint_hex(ffp)}});
  note("init-asm: " + std::to_string(cfg.num_units) + " units -> " + ws.asm_dir().string());
}

void cmd_train_tokenizer(const Options& o, const PipelineConfig& cfg) {
  const Workspace ws{o.out};
  std::uint64_t ffp = 0;
  const Dataset data = read_feature_store(ws.features(), &ffp);
  const std::vector<AsmSequence> initial = load_sequences(ws, TokenizerKind::kInitial, cfg, data);
  const HmmTokenization hmm = hmm_tokenization(data, initial, cfg);
  write_hmm_set(ws.hmm_dir() / "models.asmh", hmm.training.models);
  write_sequences(ws.hmm_dir() / "sequences.seq", hmm.sequences);
  std::string objective, stability;
  for (double v : hmm.training.objective) objective += (objective.empty() ? "" : ",") + std::to_string(v);
  for (double v : hmm.training.stability) stability += (stability.empty() ? "" : ",") + std::to_string(v);
  const std::uint64_t afp = asm_fingerprint(ffp, cfg);
  write_meta(ws.hmm_dir() / "meta.txt", {{"fingerprint", fingerprint_hex(hmm_fingerprint(afp, cfg))},
                                         {"upstream", fingerprint_hex(afp)},
                                         {"objective", objective},
                                         {"stability", stability},
                                         {"converged", hmm.training.converged ? "yes" : "no"}});
  note("train-tokenizer: " + std::to_string(hmm.training.objective.size()) + " decodes, converged " +
       (hmm.training.converged ? "yes" : "no") + " -> " + ws.hmm_dir().string());
}

void cmd_detect_stop(const Options& o, const PipelineConfig& cfg) {
  const Workspace ws{o.out};
  const TokenizerKind t = parse_tokenizer(o.tokenizer);
  const Dataset data = load_index(ws);
  const std::vector<AsmSequence> seqs = load_sequences(ws, t, cfg, data);
  const std::uint64_t tfp = expected_tokenizer_fp(ws, t, cfg);
  std::map<std::string, std::string> meta{{"upstream", fingerprint_hex(tfp)},
                                          {"selected_metric", std::string(metric_name(cfg.metric))}};
  for (StopMetric m : kAllMetrics) {
    const StopAsmSet stop = detect_stop(data, seqs, m, cfg);
    const std::string name(metric_name(m));
    write_stop_set(ws.stop_dir(t) / (name + ".txt"), stop);
    meta["fingerprint_" + name] = fingerprint_hex(stop_fingerprint(tfp, m, cfg));
    std::string ids;
    for (std::size_t u : stop.selected) ids += (ids.empty() ? "" : ",") + std::to_string(u);
    note("detect-stop: " + name + " -> " + ids);
  }
  write_meta(ws.stop_dir(t) / "meta.txt", meta);
}

std::vector<SegmentBatch> make_segments(const Options& o, const PipelineConfig& cfg, const Workspace& ws,
                                        const Dataset& data) {
  if (o.baseline) return select_corpus(data, nullptr, nullptr, cfg);
  const TokenizerKind t = parse_tokenizer(o.tokenizer);
  const std::vector<AsmSequence> seqs = load_sequences(ws, t, cfg, data);
  const std::string name(metric_name(cfg.metric));
  expect_fingerprint(ws.stop_dir(t) / "meta.txt", "fingerprint_" + name,
                     stop_fingerprint(expected_tokenizer_fp(ws, t, cfg), cfg.metric, cfg), "detect-stop");
  const StopAsmSet stop = read_stop_set(ws.stop_dir(t) / (name + ".txt"));
  if (stop.scores.size() != cfg.num_units) throw ContractError("stop set size does not match num_units");
  return select_corpus(data, &seqs, &stop, cfg);
}

void cmd_select(const Options& o, const PipelineConfig& cfg) {
  const Workspace ws{o.out};
  const Dataset data = read_feature_store(ws.features());
  const std::vector<SegmentBatch> batches = make_segments(o, cfg, ws, data);
  const std::string tag = tag_of(o, cfg);
  fs::remove_all(ws.segments(tag));
  write_segment_store(ws.segments(tag), batches);
  std::size_t segs = 0, fallback = 0;
  for (const auto& b : batches) {
    segs += b.size();
    fallback += b.fallback;
  }
  write_meta(ws.segments(tag) / "meta.txt", {{"fingerprint", fingerprint_hex(expected_segments_fp(ws, o, cfg))},
                                             {"segments", std::to_string(segs)},
                                             {"fallback_utterances", std::to_string(fallback)}});
  note("select: " + std::to_string(segs) + " segments, " + std::to_string(fallback) + " fallbacks -> " +
       ws.segments(tag).string());
}

void cmd_train_eval(const Options& o, const PipelineConfig& cfg) {
  const Workspace ws{o.out};
  const std::string tag = tag_of(o, cfg);
  const std::uint64_t sfp = expected_segments_fp(ws, o, cfg);
  Dataset data;
  std::vector<SegmentBatch> batches;
  if (fs::exists(ws.segments(tag) / "meta.txt")) {
    expect_fingerprint(ws.segments(tag) / "meta.txt", "fingerprint", sfp, "select");
    data = load_index(ws);
    batches = read_segment_store(ws.segments(tag));
    if (batches.size() != data.utterances.size()) throw ContractError("segment store does not match the feature store");
    for (std::size_t i = 0; i < batches.size(); ++i) {
      if (batches[i].utterance_id != data.utterances[i].utterance_id) {
        throw ContractError("segment store row " + std::to_string(i) + " is " + batches[i].utterance_id +
                            ", expected " + data.utterances[i].utterance_id);
      }
    }
  } else if (o.baseline) {
    data = read_feature_store(ws.features());
    batches = select_corpus(data, nullptr, nullptr, cfg);
  } else {
    throw IoError("no segment store at " + ws.segments(tag).string() + "; run `asmsel select`");
  }
  const EvalOutcome out = train_eval(data, batches, cfg);
  write_classifier(ws.eval(tag) / "model.asml", out.model);
  write_file_atomic(ws.eval(tag) / "report.txt", format_report(out.report, tag));
  write_file_atomic(ws.eval(tag) / "report.csv", format_report_csv(out.report));
  char acc[32];
  std::snprintf(acc, sizeof acc, "%.6f", out.report.accuracy());
  write_meta(ws.eval(tag) / "meta.txt", {{"fingerprint", fingerprint_hex(eval_fingerprint(sfp, cfg))},
                                         {"upstream", fingerprint_hex(sfp)},
                                         {"accuracy", acc}});
  std::printf("%s", format_report(out.report, tag).c_str());
}

void cmd_synth(const Options& o, const PipelineConfig& cfg) {
  const SynthCorpus corpus = generate_corpus(cfg.synth);
  write_synth_corpus(o.out, corpus);
  if (o.wav) {
    std::string manifest;
    for (std::size_t i = 0; i < corpus.truth.size(); ++i) {
      const std::string id = corpus.utterances[i].utterance_id;
      write_wav_pcm16(o.out / "audio" / (id + ".wav"),
                      render_waveform(corpus.truth[i], cfg.synth.num_units(), cfg.features, cfg.synth.seed));
      manifest += id + "\taudio/" + id + ".wav\t" + corpus.labels[i] + '\t' + corpus.splits[i] + '\n';
    }
    write_file_atomic(o.out / "manifest_audio.tsv", manifest);
  }
  note("synth: " + std::to_string(corpus.utterances.size()) + " utterances -> " + o.out.string());
}

void cmd_report(const Options& o) {
  const Workspace ws{o.out};
  if (!fs::exists(ws.root / "eval")) throw IoError("no evaluations under " + (ws.root / "eval").string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(ws.root / "eval"))
    if (e.is_directory() && fs::exists(e.path() / "meta.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no evaluations under " + (ws.root / "eval").string());

  std::string table = "system\taccuracy\n", details;
  double base = -1;
  for (const auto& d : dirs) {
    const auto meta = read_meta(d / "meta.txt");
    const std::string acc = meta_value(meta, d / "meta.txt", "accuracy");
    table += d.filename().string() + '\t' + acc + '\n';
    if (d.filename() == "baseline") base = std::stod(acc);
    details += "\n" + read_file(d / "report.txt");
  }
  if (base >= 0) {
    table += "\ndelta over baseline (points)\n";
    for (const auto& d : dirs) {
      if (d.filename() == "baseline") continue;
      char line[128];
      const double acc = std::stod(meta_value(read_meta(d / "meta.txt"), d / "meta.txt", "accuracy"));
      std::snprintf(line, sizeof line, "%s\t%+.2f\n", d.filename().string().c_str(), 100 * (acc - base));
      table += line;
    }
  }
  write_file_atomic(ws.root / "report.txt", table + details);
  std::printf("%s", table.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acoustic segment model guided segment selection for scene classification"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value configuration file");
    sub->add_option("--out", o.out, "workspace directory");
    sub->add_option("--seed", o.seed, "overrides the configured seed");
  };
  const auto stage = [&o](CLI::App* sub) {
    sub->add_option("--metric", o.metric, "stop metric")->check(CLI::IsMember({"mp", "idf", "vp", "sat"}));
    sub->add_option("--top-p", o.top_p, "number of stop units");
    sub->add_option("--tokenizer", o.tokenizer, "tokenizer whose sequences are used")
        ->check(CLI::IsMember({"initial", "hmm"}));
  };

  std::map<std::string, CLI::App*> subs;
  subs["features"] = app.add_subcommand("features", "extract features listed in a manifest");
  subs["init-asm"] = app.add_subcommand("init-asm", "k-means inventory and initial tokenization");
  subs["train-tokenizer"] = app.add_subcommand("train-tokenizer", "GMM-HMM training and re-decoding");
  subs["detect-stop"] = app.add_subcommand("detect-stop", "score units with every metric, write stop sets");
  subs["select"] = app.add_subcommand("select", "remove stop-unit frames and re-segment");
  subs["train-eval"] = app.add_subcommand("train-eval", "train the segment classifier and evaluate");
  subs["synth"] = app.add_subcommand("synth", "write a synthetic corpus with planted units");
  subs["report"] = app.add_subcommand("report", "summarise every evaluation in the workspace");
  for (auto& [name, sub] : subs) common(sub);
  subs["features"]->add_option("--manifest", o.manifest, "id, path, label, split per line");
  for (const char* name : {"detect-stop", "select", "train-eval"}) stage(subs[name]);
  for (const char* name : {"select", "train-eval"}) subs[name]->add_flag("--baseline", o.baseline, "skip selection");
  subs["synth"]->add_flag("--wav", o.wav, "also render audio and write manifest_audio.tsv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const PipelineConfig cfg = resolve_config(o);
    if (subs["features"]->parsed()) cmd_features(o, cfg);
    else if (subs["init-asm"]->parsed()) cmd_init_asm(o, cfg);
    else if (subs["train-tokenizer"]->parsed()) cmd_train_tokenizer(o, cfg);
    else if (subs["detect-stop"]->parsed()) cmd_detect_stop(o, cfg);
    else if (subs["select"]->parsed()) cmd_select(o, cfg);
    else if (subs["train-eval"]->parsed()) cmd_train_eval(o, cfg);
    else if (subs["synth"]->parsed()) cmd_synth(o, cfg);
    else if (subs["report"]->parsed()) cmd_report(o);
  } catch (const ContractError& e) {
    note(std::string("error: ") + e.what());
    return 2;
  } catch (const IoError& e) {
    note(std::string("I/O error: ") + e.what());
    return 3;
  } catch (const fs::filesystem_error& e) {
    note(std::string("I/O error: ") + e.what());
    return 3;
  } catch (const std::exception& e) {
    note(std::string("internal error: ") + e.what());
    return 1;
  }
  return 0;
}
