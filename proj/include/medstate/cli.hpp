#pragma once

// Subcommand implementations behind the `medstate` executable. Every stage
// reads its inputs from disk, writes its outputs plus a config.json echo into
// its own directory, and never modifies its inputs; `reproduce` chains them.

#include "medstate/experiment.hpp"
#include "medstate/pipeline.hpp"
#include "medstate/run_config.hpp"
#include "medstate/synthcorpus.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

namespace medstate::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIoError = 3,
  kFormatError = 4,
  kInvalidInput = 5,
  kStageFailure = 6,
  kMissingModelBank = 7,
  kMissingInput = 8,
};

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::kIo: return kIoError;
    case ErrorKind::kFormat: return kFormatError;
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kDimensionMismatch: return kInvalidInput;
    case ErrorKind::kTooShort:
    case ErrorKind::kDegenerate: return kStageFailure;
    case ErrorKind::kMissingModel: return kMissingModelBank;
    case ErrorKind::kMissingData: return kMissingInput;
  }
  return kInternal;
}

struct Logger {
  std::ostream* out = &std::cerr;
  bool quiet = false;
  void operator()(const std::string& stage, const std::string& msg) const {
    if (!quiet) *out << "[" << stage << "] " << msg << "\n";
  }
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

inline void prepare_dir(const fs::path& dir, const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  echo_config(dir, cfg);
}

inline CorpusManifest load_manifest_checked(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kMissingData, "manifest not found: " + path.string());
  auto m = read_manifest(path);
  check_unique(m);
  check_files_exist(m);
  return m;
}

// ---------------------------------------------------------------------------
// Stages

inline GeneratedCorpus stage_synth(const RunConfig& cfg, const fs::path& out, const Logger& log) {
  prepare_dir(out, cfg);
  CorpusSpec spec = cfg.corpus;
  spec.seed = derive_seed(cfg.seed, "synth");
  auto g = generate_corpus(spec, out, cfg.jobs);
  log("synth", std::to_string(g.patients.entries.size()) + " patient and " + std::to_string(g.control.entries.size()) +
                   " control recordings in " + out.string());
  return g;
}

inline void stage_segment(const RunConfig& cfg, const CorpusManifest& m, const fs::path& out, const Logger& log) {
  prepare_dir(out, cfg);
  parallel_for(m.entries.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const AudioClip clip = read_wav(m.resolve(e.path));
    write_segments(out / (e.stem() + ".seg"), segment_recording(clip, cfg.segmentation, derive_seed(cfg.seed, "sns", e.stem())));
  });
  log("segment", std::to_string(m.entries.size()) + " recordings segmented into " + out.string());
}

inline void save_speaker_models(const fs::path& dir, const SpeakerIdModels& m) {
  save_gmm(dir / "ubm.gmm", m.ubm);
  save_gmm(dir / "therapist.gmm", m.therapist);
  write_json(dir / "calibration.json", {{"threshold", m.calibration.threshold},
                                        {"insertion_rate", m.calibration.insertion_rate},
                                        {"deletion_rate", m.calibration.deletion_rate}});
}

inline SpeakerIdModels load_speaker_models(const fs::path& dir) {
  for (const char* f : {"ubm.gmm", "therapist.gmm", "calibration.json"})
    if (!fs::exists(dir / f)) fail(ErrorKind::kMissingModel, "missing speaker model file " + (dir / f).string());
  SpeakerIdModels m;
  m.ubm = load_gmm(dir / "ubm.gmm");
  m.therapist = load_gmm(dir / "therapist.gmm");
  const auto j = read_json(dir / "calibration.json");
  m.calibration.threshold = j.at("threshold").get<double>();
  m.calibration.insertion_rate = j.value("insertion_rate", 0.0);
  m.calibration.deletion_rate = j.value("deletion_rate", 0.0);
  return m;
}

inline SpeakerIdModels stage_speaker_models(const RunConfig& cfg, const CorpusManifest& control, const fs::path& out,
                                            const Logger& log) {
  prepare_dir(out, cfg);
  const auto m = train_speaker_models(control, cfg.speaker_id, derive_seed(cfg.seed, "speaker-id"), cfg.jobs);
  save_speaker_models(out, m);
  std::ostringstream os;
  os << "UBM K=" << m.ubm.num_components() << ", threshold " << m.calibration.threshold << " (control insertion "
     << m.calibration.insertion_rate << ", deletion " << m.calibration.deletion_rate << ")";
  log("speaker-id", os.str());
  return m;
}

struct FilterSummary {
  FilterRates rates;
  double sns_agreement = 0;  // against ground truth, where available
  std::int64_t truth_frames = 0;
};

inline nlohmann::json to_json(const FilterSummary& s) {
  return {{"insertion_rate", s.rates.insertion_rate},
          {"deletion_rate", s.rates.deletion_rate},
          {"therapist_frames", s.rates.therapist_frames},
          {"patient_frames", s.rates.patient_frames},
          {"sns_agreement", s.sns_agreement},
          {"truth_frames", s.truth_frames}};
}

// Filters every recording's energy segments (read from `segments_dir`, or
// computed if absent) and writes <stem>.seg with speaker verdicts.
inline FilterSummary stage_filter(const RunConfig& cfg, const CorpusManifest& m, const fs::path& segments_dir,
                                  const SpeakerIdModels& models, const fs::path& out, const Logger& log,
                                  const std::string& stage = "filter") {
  prepare_dir(out, cfg);
  const double threshold = cfg.threshold.value_or(models.calibration.threshold);
  std::vector<FilterRates> rates(m.entries.size());
  std::vector<std::int64_t> agree(m.entries.size(), 0), frames(m.entries.size(), 0);
  parallel_for(m.entries.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const AudioClip clip = read_wav(m.resolve(e.path));
    const auto seg_path = segments_dir / (e.stem() + ".seg");
    const SegmentList sns = fs::exists(seg_path) ? read_segments(seg_path)
                                                 : segment_recording(clip, cfg.segmentation, derive_seed(cfg.seed, "sns", e.stem()));
    const FeatureMatrix f = speaker_id_features(clip, sns, cfg.speaker_id.mfcc);
    const SegmentList filtered = filter_therapist(sns, f.values, models.ubm, models.therapist, threshold);
    write_segments(out / (e.stem() + ".seg"), filtered);
    if (e.truth) {
      const SegmentList truth = read_segments(m.resolve(*e.truth));
      accumulate_filter_rates(rates[i], filtered, truth);
      const std::int64_t n = std::min(truth.num_frames(), sns.num_frames());
      for (std::int64_t t = 0; t < n; ++t) agree[i] += sns.at(t).sns == truth.at(t).sns;
      frames[i] = n;
    }
  });
  FilterSummary s;
  std::int64_t ag = 0;
  double ins = 0, del = 0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    ins += rates[i].insertion_rate * static_cast<double>(rates[i].therapist_frames);
    del += rates[i].deletion_rate * static_cast<double>(rates[i].patient_frames);
    s.rates.therapist_frames += rates[i].therapist_frames;
    s.rates.patient_frames += rates[i].patient_frames;
    ag += agree[i];
    s.truth_frames += frames[i];
  }
  if (s.rates.therapist_frames) s.rates.insertion_rate = ins / static_cast<double>(s.rates.therapist_frames);
  if (s.rates.patient_frames) s.rates.deletion_rate = del / static_cast<double>(s.rates.patient_frames);
  if (s.truth_frames) s.sns_agreement = static_cast<double>(ag) / static_cast<double>(s.truth_frames);
  write_json(out / "filter_summary.json", to_json(s));
  std::ostringstream os;
  os << m.entries.size() << " recordings, threshold " << threshold;
  if (s.truth_frames)
    os << "; vs ground truth: speech/non-speech agreement " << s.sns_agreement << ", therapist insertion "
       << s.rates.insertion_rate << ", patient deletion " << s.rates.deletion_rate;
  log(stage, os.str());
  return s;
}

inline void stage_extract(const RunConfig& cfg, const CorpusManifest& m, const fs::path& filtered_dir,
                          std::span<const FeatureKind> kinds, const fs::path& out, const Logger& log) {
  prepare_dir(out, cfg);
  for (FeatureKind k : kinds) fs::create_directories(out / std::string(feature_kind_name(k)));
  std::vector<std::string> skipped(m.entries.size());
  parallel_for(m.entries.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const auto seg_path = filtered_dir / (e.stem() + ".seg");
    if (!fs::exists(seg_path)) fail(ErrorKind::kMissingData, "no filtered segments for " + e.stem());
    const SegmentList filtered = read_segments(seg_path);
    const AudioClip clip = read_wav(m.resolve(e.path));
    std::vector<FeatureMatrix> feats;
    try {
      for (FeatureKind k : kinds) feats.push_back(patient_features(clip, filtered, k));
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::kTooShort) throw;
      skipped[i] = err.what();
      return;
    }
    for (std::size_t j = 0; j < kinds.size(); ++j)
      save_features(out / std::string(feature_kind_name(kinds[j])) / (e.stem() + ".msfc"), feats[j]);
  });
  std::ostringstream sk;
  std::size_t n_skipped = 0;
  for (std::size_t i = 0; i < skipped.size(); ++i)
    if (!skipped[i].empty()) {
      sk << m.entries[i].stem() << "\t" << skipped[i] << "\n";
      ++n_skipped;
      log("extract", "warning: skipped " + m.entries[i].stem() + ": " + skipped[i]);
    }
  write_text(out / "skipped.txt", sk.str());
  log("extract", std::to_string(m.entries.size() - n_skipped) + " recordings x " + std::to_string(kinds.size()) +
                     " feature set(s), " + std::to_string(n_skipped) + " skipped");
}

inline CorpusManifest rebase(const CorpusManifest& m, const fs::path& new_root) {
  CorpusManifest out;
  out.root = new_root;
  for (auto e : m.entries) {
    auto abs = fs::absolute(m.resolve(e.path)).lexically_normal();
    e.path = abs.lexically_relative(fs::absolute(new_root).lexically_normal());
    if (e.truth) e.truth = fs::absolute(m.resolve(*e.truth)).lexically_normal().lexically_relative(fs::absolute(new_root).lexically_normal());
    out.entries.push_back(std::move(e));
  }
  return out;
}

inline Partition stage_partition(const RunConfig& cfg, const CorpusManifest& m, const fs::path& out, const Logger& log) {
  prepare_dir(out, cfg);
  const Partition p = partition(m, SplitPlan{});
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest})
    write_manifest(out / (std::string(split_name(s)) + ".csv"), rebase(p.at(s), out));
  log("partition", "train " + std::to_string(p.train.entries.size()) + ", dev " + std::to_string(p.dev.entries.size()) +
                       ", test " + std::to_string(p.test.entries.size()) + " files");
  return p;
}

inline Partition load_partition(const fs::path& dir) {
  Partition p;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    const auto path = dir / (std::string(split_name(s)) + ".csv");
    if (!fs::exists(path)) fail(ErrorKind::kMissingData, "partition file not found: " + path.string());
    (s == Split::kTrain ? p.train : s == Split::kDev ? p.dev : p.test) = read_manifest(path);
  }
  return p;
}

inline FeatureStore load_store(const fs::path& features_dir, const Partition& p, std::span<const FeatureKind> kinds) {
  FeatureStore store;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    auto part = load_feature_store(features_dir, p.at(s), kinds);
    store.merge(part);
  }
  return store;
}

inline GlobalConfig stage_grid(const RunConfig& cfg, const Partition& p, const fs::path& features_dir, const fs::path& out,
                               const Logger& log) {
  prepare_dir(out, cfg);
  const auto space = search_space(cfg.search == "none" ? "default" : cfg.search);
  std::vector<GlobalConfig> cells;
  for (auto c : space) {
    c.max_epochs = cfg.model.max_epochs;
    c.patience = cfg.model.patience;
    c.pca_variance = cfg.model.pca_variance;
    cells.push_back(c);
  }
  const auto kinds = kinds_needed(cells);
  const FeatureStore store = load_store(features_dir, p, kinds);
  log("grid-search", std::to_string(cells.size()) + " configurations");
  const auto g = grid_search(store, p, cells, derive_seed(cfg.seed, "model"), cfg.jobs);
  write_text(out / "grid.txt", format_grid(g));
  write_json(out / "grid.json", grid_json(g));
  log("grid-search", "selected " + g.best_config().label());
  return g.best_config();
}

inline SpeakerModelBank stage_train_bank(const RunConfig& cfg, const Partition& p, const fs::path& features_dir,
                                         const fs::path& out, const Logger& log) {
  prepare_dir(out, cfg);
  const std::array kinds{cfg.model.features};
  const FeatureStore store = load_store(features_dir, p, kinds);
  log("train-bank", cfg.model.label());
  auto bank = train_speaker_bank(cfg.model, store, p, derive_seed(cfg.seed, "model"), cfg.jobs);
  for (const auto& [s, why] : bank.excluded) log("train-bank", "warning: speaker " + s + " excluded: " + why);
  save_bank(out, bank);
  log("train-bank", std::to_string(bank.models.size()) + " speaker models, input dim " + std::to_string(bank.input_dim()));
  return bank;
}

inline EvaluationReport stage_evaluate(const RunConfig& cfg, const fs::path& bank_dir, const Partition& p,
                                       const fs::path& features_dir, Split split, const fs::path& out, const Logger& log) {
  const SpeakerModelBank bank = load_bank(bank_dir);
  prepare_dir(out, cfg);
  const std::array kinds{bank.config.features};
  const FeatureStore store = load_store(features_dir, p, kinds);
  std::optional<double> dev;
  if (split != Split::kDev) dev = evaluate(bank, store, p, Split::kDev, cfg.jobs).overall().accuracy();
  const auto rep = evaluate(bank, store, p, split, cfg.jobs);
  const std::string base = std::string(split_name(split)) + "_report";
  write_text(out / (base + ".txt"), format_report(rep, dev));
  write_json(out / (base + ".json"), report_json(rep, dev));
  const auto all = rep.overall();
  log("evaluate", std::string(split_name(split)) + " accuracy " + detail::pct(all.accuracy()) + "% (" +
                      std::to_string(all.correct) + "/" + std::to_string(all.total) + ")");
  return rep;
}

struct ReproduceResult {
  FilterSummary patients;
  FilterSummary control;
  GlobalConfig config;
  EvaluationReport report;
};

inline ReproduceResult reproduce(RunConfig cfg, const Logger& log) {
  require(!cfg.out_dir.empty(), ErrorKind::kInvalidArgument, "reproduce needs --out");
  const fs::path out = cfg.out_dir;
  prepare_dir(out, cfg);
  ReproduceResult r;
  stage_synth(cfg, out / "corpus", log);
  const auto patients = load_manifest_checked(out / "corpus" / "manifest.csv");
  const auto control = load_manifest_checked(out / "corpus" / "control.csv");
  stage_segment(cfg, patients, out / "segments", log);
  stage_segment(cfg, control, out / "control_segments", log);
  const auto models = stage_speaker_models(cfg, control, out / "speaker_models", log);
  r.control = stage_filter(cfg, control, out / "control_segments", models, out / "control_filtered", log, "filter-control");
  r.patients = stage_filter(cfg, patients, out / "segments", models, out / "filtered", log);
  std::vector<FeatureKind> kinds{cfg.model.features};
  if (cfg.search != "none") kinds = kinds_needed(search_space(cfg.search));
  stage_extract(cfg, patients, out / "filtered", kinds, out / "features", log);
  const Partition p = stage_partition(cfg, patients, out / "partition", log);
  const Partition loaded = load_partition(out / "partition");
  if (cfg.search != "none") {
    const auto best = stage_grid(cfg, loaded, out / "features", out / "grid", log);
    cfg.model = best;
  }
  r.config = cfg.model;
  stage_train_bank(cfg, loaded, out / "features", out / "bank", log);
  stage_evaluate(cfg, out / "bank", loaded, out / "features", Split::kDev, out / "report", log);
  r.report = stage_evaluate(cfg, out / "bank", loaded, out / "features", Split::kTest, out / "report", log);
  write_json(out / "report" / "preprocessing.json", {{"patients", to_json(r.patients)}, {"control", to_json(r.control)}});
  return r;
}

// ---------------------------------------------------------------------------
// Command line

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> speakers, control_speakers, components;
  std::optional<double> delta, snr, relevance, threshold, learning_rate;
  std::optional<int> context, epochs, patience;
  std::optional<std::string> features, hidden, search;
  std::optional<bool> pca;
  bool hard_therapist = false;
  std::string out, manifest, control, segments, filtered, models, features_dir, partition, bank, ubm, therapist,
      calibration, split = "test";
  bool quiet = false;
};

inline std::vector<int> parse_hidden(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, '-');) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidArgument, "bad --hidden '" + s + "' (expected e.g. 512-128)");
    }
  }
  if (!out.empty() && out.back() == 1 && out.size() > 1) out.pop_back();  // allow a trailing output unit
  return out;
}

inline std::vector<FeatureKind> parse_feature_list(const std::string& s) {
  if (s == "all") return {FeatureKind::kMfcc13, FeatureKind::kMfcc26, FeatureKind::kEgemaps};
  std::vector<FeatureKind> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_feature_kind(item));
  return out;
}

inline RunConfig resolve_config(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) c = load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  c.jobs = f.jobs.value_or(default_jobs());
  if (f.speakers) c.corpus.speakers = *f.speakers;
  if (f.control_speakers) c.corpus.control_speakers = *f.control_speakers;
  if (f.delta) c.corpus.effect.delta = *f.delta;
  if (f.snr) c.corpus.snr_db = *f.snr;
  if (f.hard_therapist) c.corpus.hard_therapist = true;
  if (f.components) c.speaker_id.components = *f.components;
  if (f.relevance) c.speaker_id.map.relevance_factor = *f.relevance;
  if (f.threshold) c.threshold = *f.threshold;
  if (f.features) c.model.features = parse_feature_kind(*f.features);
  if (f.pca) c.model.pca = *f.pca;
  if (f.context) c.model.context = *f.context;
  if (f.hidden) c.model.hidden = parse_hidden(*f.hidden);
  if (f.learning_rate) c.model.learning_rate = *f.learning_rate;
  if (f.epochs) c.model.max_epochs = *f.epochs;
  if (f.patience) c.model.patience = *f.patience;
  if (f.search) c.search = *f.search;
  if (!f.out.empty()) c.out_dir = f.out;
  validate(c);
  return c;
}

inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"Speech-based ON/OFF medication state classification toolkit", "medstate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "medstate 1.0");
  Flags f;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
    s->add_option("--seed", f.seed, "master seed");
    s->add_option("--jobs", f.jobs, "worker threads (default: available cores)")->check(CLI::PositiveNumber);
    s->add_flag("--quiet", f.quiet, "no progress output");
  };
  auto corpus_opts = [&](CLI::App* s) {
    s->add_option("--speakers", f.speakers, "number of synthetic patients")->check(CLI::PositiveNumber);
    s->add_option("--control-speakers", f.control_speakers, "number of synthetic control speakers")->check(CLI::NonNegativeNumber);
    s->add_option("--delta", f.delta, "ON/OFF effect size in [0, 1]")->check(CLI::Range(0.0, 1.0));
    s->add_option("--snr", f.snr, "background noise SNR in dB");
    s->add_flag("--hard-therapist", f.hard_therapist, "therapist voice close to the patients'");
  };
  auto speaker_opts = [&](CLI::App* s) {
    s->add_option("--components", f.components, "UBM components (power of two)");
    s->add_option("--relevance", f.relevance, "MAP relevance factor");
    s->add_option("--threshold", f.threshold, "therapist LLR threshold (overrides calibration)");
  };
  auto model_opts = [&](CLI::App* s) {
    s->add_option("--features", f.features, "mfcc13 | mfcc26 | egemaps");
    s->add_option("--pca", f.pca, "PCA on/off (true|false)");
    s->add_option("--context", f.context, "stacked frames (odd)");
    s->add_option("--hidden", f.hidden, "hidden widths, e.g. 512-128");
    s->add_option("--lr", f.learning_rate, "learning rate");
    s->add_option("--epochs", f.epochs, "maximum epochs");
    s->add_option("--patience", f.patience, "early-stopping patience in epochs");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  common(synth);
  corpus_opts(synth);
  synth->add_option("--out", f.out, "output directory")->required();

  auto* segment = app.add_subcommand("segment", "speech/non-speech segmentation");
  common(segment);
  segment->add_option("--manifest", f.manifest, "corpus manifest CSV")->required();
  segment->add_option("--out", f.out, "output directory")->required();

  auto* train_ubm_cmd = app.add_subcommand("train-ubm", "train the UBM on control speech");
  common(train_ubm_cmd);
  speaker_opts(train_ubm_cmd);
  train_ubm_cmd->add_option("--control", f.control, "control manifest CSV")->required();
  train_ubm_cmd->add_option("--out", f.out, "output directory")->required();

  auto* adapt = app.add_subcommand("adapt-therapist", "MAP-adapt the therapist model from control recordings");
  common(adapt);
  speaker_opts(adapt);
  adapt->add_option("--control", f.control, "control manifest CSV")->required();
  adapt->add_option("--ubm", f.ubm, "UBM file")->required();
  adapt->add_option("--out", f.out, "output directory")->required();

  auto* calibrate = app.add_subcommand("calibrate", "calibrate the therapist LLR threshold on control recordings");
  common(calibrate);
  calibrate->add_option("--control", f.control, "control manifest CSV")->required();
  calibrate->add_option("--ubm", f.ubm, "UBM file")->required();
  calibrate->add_option("--therapist", f.therapist, "therapist model file")->required();
  calibrate->add_option("--out", f.out, "output directory")->required();

  auto* filter = app.add_subcommand("filter", "label speech segments PATIENT/THERAPIST with given models");
  common(filter);
  speaker_opts(filter);
  filter->add_option("--manifest", f.manifest, "corpus manifest CSV")->required();
  filter->add_option("--segments", f.segments, "directory of speech/non-speech segment files")->required();
  filter->add_option("--models", f.models, "directory with ubm.gmm, therapist.gmm, calibration.json")->required();
  filter->add_option("--out", f.out, "output directory")->required();

  auto* filter_therapist_cmd = app.add_subcommand("filter-therapist", "train speaker models on control data and filter");
  common(filter_therapist_cmd);
  speaker_opts(filter_therapist_cmd);
  filter_therapist_cmd->add_option("--manifest", f.manifest, "corpus manifest CSV")->required();
  filter_therapist_cmd->add_option("--control", f.control, "control manifest CSV")->required();
  filter_therapist_cmd->add_option("--segments", f.segments, "directory of segment files (computed if missing)");
  filter_therapist_cmd->add_option("--out", f.out, "output directory")->required();

  std::string extract_kinds = "mfcc26";
  auto* extract = app.add_subcommand("extract", "extract per-file normalized patient-speech features");
  common(extract);
  extract->add_option("--manifest", f.manifest, "corpus manifest CSV")->required();
  extract->add_option("--filtered", f.filtered, "directory of filtered segment files")->required();
  extract->add_option("--features", extract_kinds, "comma-separated feature sets or 'all'");
  extract->add_option("--out", f.out, "output directory")->required();

  auto* part = app.add_subcommand("partition", "task-based train/dev/test split");
  common(part);
  part->add_option("--manifest", f.manifest, "corpus manifest CSV")->required();
  part->add_option("--out", f.out, "output directory")->required();

  auto* grid = app.add_subcommand("grid-search", "select the global configuration by mean dev accuracy");
  common(grid);
  model_opts(grid);
  grid->add_option("--search", f.search, "search space: default | reference | full");
  grid->add_option("--partition", f.partition, "partition directory")->required();
  grid->add_option("--features-dir", f.features_dir, "feature directory")->required();
  grid->add_option("--out", f.out, "output directory")->required();

  auto* bank = app.add_subcommand("train-bank", "train one classifier per speaker");
  common(bank);
  model_opts(bank);
  bank->add_option("--partition", f.partition, "partition directory")->required();
  bank->add_option("--features-dir", f.features_dir, "feature directory")->required();
  bank->add_option("--out", f.out, "output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "score a split with a trained bank");
  common(eval);
  eval->add_option("--bank", f.bank, "model bank directory")->required();
  eval->add_option("--partition", f.partition, "partition directory")->required();
  eval->add_option("--features-dir", f.features_dir, "feature directory")->required();
  eval->add_option("--split", f.split, "dev | test")->check(CLI::IsMember({"dev", "test"}));
  eval->add_option("--out", f.out, "output directory")->required();

  auto* repro = app.add_subcommand("reproduce", "synthesize a corpus and run the whole pipeline");
  common(repro);
  corpus_opts(repro);
  speaker_opts(repro);
  model_opts(repro);
  repro->add_option("--search", f.search, "none | default | reference | full");
  repro->add_option("--out", f.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, std::cout, err) == 0 ? kOk : kUsage;
  }

  try {
    const RunConfig cfg = resolve_config(f);
    const Logger log{&err, f.quiet};
    const fs::path out = f.out;
    if (*synth) {
      stage_synth(cfg, out, log);
    } else if (*segment) {
      stage_segment(cfg, load_manifest_checked(f.manifest), out, log);
    } else if (*train_ubm_cmd) {
      prepare_dir(out, cfg);
      const auto per = load_control_segments(load_manifest_checked(f.control), cfg.speaker_id.mfcc, cfg.jobs);
      UbmOptions opt = cfg.speaker_id.ubm;
      opt.jobs = cfg.jobs;
      const auto ubm = train_ubm(pool_frames(per, std::nullopt), cfg.speaker_id.components,
                                 derive_seed(derive_seed(cfg.seed, "speaker-id"), "ubm"), opt);
      save_gmm(out / "ubm.gmm", ubm);
      log("train-ubm", "K=" + std::to_string(ubm.num_components()) + " written to " + (out / "ubm.gmm").string());
    } else if (*adapt) {
      prepare_dir(out, cfg);
      const auto per = load_control_segments(load_manifest_checked(f.control), cfg.speaker_id.mfcc, cfg.jobs);
      const auto th = pool_frames(per, SpeakerLabel::kTherapist);
      require(th.num_frames() > 0, ErrorKind::kMissingData, "control recordings contain no therapist speech");
      save_gmm(out / "therapist.gmm", map_adapt(load_gmm(f.ubm), th, cfg.speaker_id.map));
      log("adapt-therapist", "written to " + (out / "therapist.gmm").string());
    } else if (*calibrate) {
      prepare_dir(out, cfg);
      const auto per = load_control_segments(load_manifest_checked(f.control), cfg.speaker_id.mfcc, cfg.jobs);
      const auto segs = flatten_segments(per);
      const auto c = calibrate_threshold(std::span<const std::pair<FeatureMatrix, SpeakerLabel>>(segs), load_gmm(f.ubm),
                                         load_gmm(f.therapist));
      write_json(out / "calibration.json",
                 {{"threshold", c.threshold}, {"insertion_rate", c.insertion_rate}, {"deletion_rate", c.deletion_rate}});
      log("calibrate", "threshold " + std::to_string(c.threshold));
    } else if (*filter) {
      stage_filter(cfg, load_manifest_checked(f.manifest), f.segments, load_speaker_models(f.models), out, log);
    } else if (*filter_therapist_cmd) {
      const auto m = load_manifest_checked(f.manifest);
      const auto models = stage_speaker_models(cfg, load_manifest_checked(f.control), out / "speaker_models", log);
      stage_filter(cfg, m, f.segments.empty() ? out / "segments" : fs::path(f.segments), models, out, log);
    } else if (*extract) {
      const auto kinds = parse_feature_list(extract_kinds);
      stage_extract(cfg, load_manifest_checked(f.manifest), f.filtered, kinds, out, log);
    } else if (*part) {
      stage_partition(cfg, load_manifest_checked(f.manifest), out, log);
    } else if (*grid) {
      RunConfig c = cfg;
      if (c.search == "none") c.search = "default";
      stage_grid(c, load_partition(f.partition), f.features_dir, out, log);
    } else if (*bank) {
      stage_train_bank(cfg, load_partition(f.partition), f.features_dir, out, log);
    } else if (*eval) {
      if (!fs::exists(fs::path(f.bank) / "bank.json"))
        fail(ErrorKind::kMissingModel, "missing model bank: no bank.json in " + f.bank);
      stage_evaluate(cfg, f.bank, load_partition(f.partition), f.features_dir, parse_split(f.split), out, log);
    } else if (*repro) {
      reproduce(cfg, log);
    }
  } catch (const Error& e) {
    err << "medstate: error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "medstate: internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}

}  // namespace medstate::cli
