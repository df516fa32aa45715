#pragma once

// Task-based split, global configuration search, per-speaker model banks and
// evaluation reports.

#include "medstate/egemaps.hpp"
#include "medstate/feature_io.hpp"
#include "medstate/manifest.hpp"
#include "medstate/neuralnet.hpp"
#include "medstate/parallel.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <iomanip>
#include <map>
#include <set>

namespace medstate {

enum class Split { kTrain, kDev, kTest };

inline constexpr std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  fail(ErrorKind::kInvalidArgument, "unknown split '" + std::string(s) + "'");
}

struct SplitPlan {
  std::vector<TaskKind> train{TaskKind::kMpt, TaskKind::kDdk, TaskKind::kReadWords, TaskKind::kProsodicSentences,
                              TaskKind::kConversation};
  std::vector<TaskKind> dev{TaskKind::kReadSentences};
  std::vector<TaskKind> test{TaskKind::kSustainedA, TaskKind::kReadText, TaskKind::kStorytelling};

  const std::vector<TaskKind>& tasks(Split s) const { return s == Split::kTrain ? train : s == Split::kDev ? dev : test; }

  std::optional<Split> split_of(TaskKind t) const {
    for (Split s : {Split::kTrain, Split::kDev, Split::kTest})
      if (std::find(tasks(s).begin(), tasks(s).end(), t) != tasks(s).end()) return s;
    return std::nullopt;
  }

  void validate() const {
    for (Split s : {Split::kTrain, Split::kDev, Split::kTest})
      require(!tasks(s).empty(), ErrorKind::kInvalidArgument, "split plan: " + std::string(split_name(s)) + " has no tasks");
    std::set<TaskKind> seen;
    for (Split s : {Split::kTrain, Split::kDev, Split::kTest})
      for (TaskKind t : tasks(s))
        require(seen.insert(t).second, ErrorKind::kInvalidArgument,
                "split plan: task '" + std::string(task_name(t)) + "' assigned twice");
  }
};

struct Partition {
  CorpusManifest train, dev, test;
  const CorpusManifest& at(Split s) const { return s == Split::kTrain ? train : s == Split::kDev ? dev : test; }
};

inline void check_unique(const CorpusManifest& m) {
  std::set<std::tuple<std::string, TaskKind, MedState>> seen;
  for (const auto& e : m.entries)
    require(seen.insert({e.speaker_id, e.task, e.state}).second, ErrorKind::kInvalidArgument,
            "manifest lists " + e.speaker_id + "/" + std::string(task_name(e.task)) + "/" +
                std::string(state_name(e.state)) + " twice");
}

inline void check_files_exist(const CorpusManifest& m) {
  for (const auto& e : m.entries)
    require(std::filesystem::exists(m.resolve(e.path)), ErrorKind::kIo, "missing recording " + m.resolve(e.path).string());
}

// Speaker-dependent split by task: every speaker contributes to all three subsets.
inline Partition partition(const CorpusManifest& m, const SplitPlan& plan) {
  plan.validate();
  check_unique(m);
  std::set<std::string> speakers;
  std::set<std::tuple<std::string, TaskKind, MedState>> have;
  for (const auto& e : m.entries) {
    require(e.state == MedState::kOn || e.state == MedState::kOff, ErrorKind::kInvalidArgument,
            "manifest entry " + e.path.string() + " has no ON/OFF label");
    speakers.insert(e.speaker_id);
    have.insert({e.speaker_id, e.task, e.state});
  }
  std::string missing;
  for (const auto& s : speakers)
    for (Split sp : {Split::kTrain, Split::kDev, Split::kTest})
      for (TaskKind t : plan.tasks(sp))
        for (MedState st : {MedState::kOn, MedState::kOff})
          if (!have.count({s, t, st})) missing += " " + s + "/" + std::string(task_name(t)) + "/" + std::string(state_name(st));
  require(missing.empty(), ErrorKind::kMissingData, "missing recordings:" + missing);
  Partition p;
  p.train.root = p.dev.root = p.test.root = m.root;
  for (const auto& e : m.entries)
    if (auto s = plan.split_of(e.task)) {
      auto& dst = *s == Split::kTrain ? p.train : *s == Split::kDev ? p.dev : p.test;
      dst.entries.push_back(e);
    }
  return p;
}

struct GlobalConfig {
  FeatureKind features = FeatureKind::kMfcc26;
  bool pca = true;
  int context = 11;
  std::vector<int> hidden{512, 128};
  double learning_rate = 0.003;
  double pca_variance = 0.95;
  bool per_speaker_pca = false;
  int max_epochs = 200;
  int patience = 20;

  void validate() const {
    require(features == FeatureKind::kMfcc13 || features == FeatureKind::kMfcc26 || features == FeatureKind::kEgemaps,
            ErrorKind::kInvalidArgument, "feature set must be mfcc13, mfcc26 or egemaps");
    require(context >= 1 && context % 2 == 1, ErrorKind::kInvalidArgument, "context must be odd and >= 1");
    require(!hidden.empty() && hidden.size() <= 3, ErrorKind::kInvalidArgument, "1 to 3 hidden layers");
    for (int h : hidden) require(h >= 1, ErrorKind::kInvalidArgument, "hidden width must be positive");
    require(learning_rate > 0, ErrorKind::kInvalidArgument, "learning rate must be positive");
    require(pca_variance > 0 && pca_variance <= 1, ErrorKind::kInvalidArgument, "PCA variance fraction in (0, 1]");
    require(max_epochs >= 1 && patience >= 1, ErrorKind::kInvalidArgument, "epochs and patience must be positive");
  }

  std::string feature_label() const {
    std::string s = features == FeatureKind::kMfcc13 ? "MFCC" : features == FeatureKind::kMfcc26 ? "MFCC+D" : "eGeMAPS";
    return pca ? s + "+PCA" : s;
  }

  std::string architecture_label() const {
    std::string s;
    for (int h : hidden) s += std::to_string(h) + "-";
    return s + "1";
  }

  std::string label() const {
    std::ostringstream os;
    os << feature_label() << " ctx=" << context << " arch=" << architecture_label() << " lr=" << learning_rate;
    return os.str();
  }

  int base_dim() const {
    return features == FeatureKind::kMfcc13 ? 13 : features == FeatureKind::kMfcc26 ? 26
                                                                                    : static_cast<int>(default_lld_columns().size());
  }

  bool operator==(const GlobalConfig&) const = default;
};

inline nlohmann::json to_json(const GlobalConfig& c) {
  return {{"features", std::string(feature_kind_name(c.features))},
          {"pca", c.pca},
          {"context", c.context},
          {"hidden", c.hidden},
          {"learning_rate", c.learning_rate},
          {"pca_variance", c.pca_variance},
          {"per_speaker_pca", c.per_speaker_pca},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience}};
}

inline GlobalConfig global_config_from_json(const nlohmann::json& j, GlobalConfig c = {}) {
  try {
    if (j.contains("features")) c.features = parse_feature_kind(j.at("features").get<std::string>());
    if (j.contains("pca")) c.pca = j.at("pca").get<bool>();
    if (j.contains("context")) c.context = j.at("context").get<int>();
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("pca_variance")) c.pca_variance = j.at("pca_variance").get<double>();
    if (j.contains("per_speaker_pca")) c.per_speaker_pca = j.at("per_speaker_pca").get<bool>();
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("patience")) c.patience = j.at("patience").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::vector<std::vector<int>> candidate_architectures() {
  const std::array widths{32, 64, 128, 256, 512};
  std::vector<std::vector<int>> out;
  for (int a : widths) out.push_back({a});
  for (int a : widths)
    for (int b : widths)
      if (b <= a) out.push_back({a, b});
  for (int a : widths)
    for (int b : widths)
      for (int c : widths)
        if (b <= a && c <= b) out.push_back({a, b, c});
  return out;
}

// Named search spaces: "full" is the whole product, "reference" the best
// configuration per feature set, "default" the strongest of those.
inline std::vector<GlobalConfig> search_space(std::string_view name) {
  auto make = [](FeatureKind f, bool pca, int ctx, std::vector<int> h, double lr) {
    GlobalConfig c;
    c.features = f;
    c.pca = pca;
    c.context = ctx;
    c.hidden = std::move(h);
    c.learning_rate = lr;
    return c;
  };
  if (name == "default") return {GlobalConfig{}};
  if (name == "reference")
    return {make(FeatureKind::kMfcc13, false, 15, {512, 128}, 0.003),
            make(FeatureKind::kMfcc26, false, 15, {512, 128}, 0.01),
            make(FeatureKind::kEgemaps, false, 15, {128, 64}, 0.001),
            make(FeatureKind::kMfcc13, true, 15, {256, 128, 32}, 0.01),
            make(FeatureKind::kMfcc26, true, 11, {512, 128}, 0.003),
            make(FeatureKind::kEgemaps, true, 15, {512, 128}, 0.003)};
  if (name == "full") {
    std::vector<GlobalConfig> out;
    for (FeatureKind f : {FeatureKind::kMfcc13, FeatureKind::kMfcc26, FeatureKind::kEgemaps})
      for (bool pca : {false, true})
        for (int ctx : {1, 5, 11, 15})
          for (const auto& h : candidate_architectures())
            for (double lr : {0.001, 0.003, 0.01}) out.push_back(make(f, pca, ctx, h, lr));
    return out;
  }
  fail(ErrorKind::kInvalidArgument, "unknown search space '" + std::string(name) + "' (default, reference, full)");
}

// ---------------------------------------------------------------------------
// Feature store: patient-speech features of each recording, keyed by file stem.

struct RecordingFeatures {
  ManifestEntry entry;
  std::map<FeatureKind, FeatureMatrix> features;
};

using FeatureStore = std::map<std::string, RecordingFeatures>;

inline const FeatureMatrix& features_of(const FeatureStore& store, const ManifestEntry& e, FeatureKind k) {
  const auto it = store.find(e.stem());
  if (it == store.end()) fail(ErrorKind::kMissingData, "no features for " + e.stem());
  const auto f = it->second.features.find(k);
  if (f == it->second.features.end())
    fail(ErrorKind::kMissingData, "no " + std::string(feature_kind_name(k)) + " features for " + e.stem());
  return f->second;
}

inline bool has_features(const FeatureStore& store, const ManifestEntry& e, FeatureKind k) {
  const auto it = store.find(e.stem());
  return it != store.end() && it->second.features.count(k) > 0;
}

inline Matrix stacked_input(const FeatureStore& store, const ManifestEntry& e, const GlobalConfig& cfg) {
  return stack_context(features_of(store, e, cfg.features), cfg.context).values;
}

inline double label_of(MedState s) { return s == MedState::kOn ? 1.0 : 0.0; }

struct SpeakerModel {
  DnnModel model;
  int best_epoch = 0;
  double dev_accuracy = 0;
  std::optional<PcaModel> pca;  // per-speaker projection when enabled
};

struct SpeakerModelBank {
  GlobalConfig config;
  std::uint64_t seed = 0;
  std::optional<PcaModel> pca;  // pooled projection
  std::map<std::string, SpeakerModel> models;
  std::map<std::string, std::string> excluded;  // speaker -> reason

  Eigen::Index input_dim() const {
    if (!models.empty()) return models.begin()->second.model.architecture.input_dim;
    return pca ? pca->kept() : static_cast<Eigen::Index>(config.base_dim()) * config.context;
  }
};

inline std::map<std::string, std::vector<const ManifestEntry*>> by_speaker(const CorpusManifest& m) {
  std::map<std::string, std::vector<const ManifestEntry*>> out;
  for (const auto& e : m.entries) out[e.speaker_id].push_back(&e);
  return out;
}

inline Matrix vstack(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0, cols = parts.empty() ? 0 : parts.front().cols();
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

// Input rows for a model: stacked, then projected if the bank uses PCA.
inline Matrix model_input(const SpeakerModelBank& bank, const SpeakerModel* sm, const FeatureStore& store,
                          const ManifestEntry& e) {
  Matrix x = stacked_input(store, e, bank.config);
  if (sm && sm->pca) return apply_pca(*sm->pca, x);
  if (bank.pca) return apply_pca(*bank.pca, x);
  return x;
}

inline PcaModel fit_pooled_pca(const FeatureStore& store, const CorpusManifest& train, const GlobalConfig& cfg) {
  std::vector<Matrix> parts;
  for (const auto& e : train.entries)
    if (has_features(store, e, cfg.features)) parts.push_back(stacked_input(store, e, cfg));
  require(!parts.empty(), ErrorKind::kMissingData, "no training features");
  return fit_pca(vstack(parts), cfg.pca_variance);
}

inline SpeakerModelBank train_speaker_bank(const GlobalConfig& cfg, const FeatureStore& store, const Partition& part,
                                           std::uint64_t seed, int jobs) {
  cfg.validate();
  SpeakerModelBank bank;
  bank.config = cfg;
  bank.seed = seed;
  if (cfg.pca && !cfg.per_speaker_pca) bank.pca = fit_pooled_pca(store, part.train, cfg);

  const auto train_files = by_speaker(part.train);
  const auto dev_files = by_speaker(part.dev);
  std::vector<std::string> speakers;
  for (const auto& [s, _] : train_files) speakers.push_back(s);

  std::vector<std::optional<SpeakerModel>> results(speakers.size());
  std::vector<std::string> reasons(speakers.size());
  parallel_for(speakers.size(), jobs, [&](std::size_t i) {
    const std::string& spk = speakers[i];
    std::vector<const ManifestEntry*> files;
    for (const auto* e : train_files.at(spk))
      if (has_features(store, *e, cfg.features)) files.push_back(e);
    std::set<double> classes;
    for (const auto* e : files) classes.insert(label_of(e->state));
    if (classes.size() < 2) {
      reasons[i] = "single-class training data";
      return;
    }
    SpeakerModel sm;
    if (cfg.pca && cfg.per_speaker_pca) {
      std::vector<Matrix> parts;
      for (const auto* e : files) parts.push_back(stacked_input(store, *e, cfg));
      sm.pca = fit_pca(vstack(parts), cfg.pca_variance);
    }
    std::vector<Matrix> xs;
    std::vector<double> ys;
    for (const auto* e : files) {
      xs.push_back(model_input(bank, &sm, store, *e));
      ys.insert(ys.end(), static_cast<std::size_t>(xs.back().rows()), label_of(e->state));
    }
    TrainSet ts;
    ts.frames = vstack(xs);
    ts.labels = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    std::vector<LabeledUtterance> dev_utts;
    if (auto it = dev_files.find(spk); it != dev_files.end())
      for (const auto* e : it->second)
        if (has_features(store, *e, cfg.features))
          dev_utts.push_back({model_input(bank, &sm, store, *e), label_of(e->state)});
    if (dev_utts.empty()) {
      reasons[i] = "no development recordings";
      return;
    }
    DnnArchitecture arch;
    arch.input_dim = static_cast<int>(ts.frames.cols());
    arch.hidden = cfg.hidden;
    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    tc.seed = derive_seed(seed, "dnn", spk);
    auto tr = train(init_network(arch, tc.seed), ts, dev_utts, tc);
    sm.model = std::move(tr.model);
    sm.best_epoch = tr.best_epoch;
    sm.dev_accuracy = tr.best_dev_accuracy;
    results[i] = std::move(sm);
  });
  for (std::size_t i = 0; i < speakers.size(); ++i) {
    if (results[i])
      bank.models.emplace(speakers[i], std::move(*results[i]));
    else
      bank.excluded.emplace(speakers[i], reasons[i]);
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Evaluation

struct UtteranceResult {
  std::string stem;
  std::string speaker_id;
  TaskKind task = TaskKind::kSustainedA;
  MedState truth = MedState::kOn;
  MedState predicted = MedState::kOff;
  double mean_prob = 0;
  std::size_t frames = 0;

  bool correct() const { return truth == predicted; }
};

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  void add(bool ok) {
    correct += ok;
    ++total;
  }
};

struct EvaluationReport {
  GlobalConfig config;
  std::uint64_t seed = 0;
  Split split = Split::kTest;
  Eigen::Index input_dim = 0;
  std::vector<UtteranceResult> utterances;
  std::vector<std::string> unscored;  // "<stem>: reason"

  Tally overall() const {
    Tally t;
    for (const auto& u : utterances) t.add(u.correct());
    return t;
  }
  std::map<TaskKind, Tally> per_task() const {
    std::map<TaskKind, Tally> m;
    for (const auto& u : utterances) m[u.task].add(u.correct());
    return m;
  }
  std::map<std::string, Tally> per_speaker() const {
    std::map<std::string, Tally> m;
    for (const auto& u : utterances) m[u.speaker_id].add(u.correct());
    return m;
  }
  // Accuracy over every task except the sustained vowel, if it was scored.
  std::optional<Tally> without_sustained_vowel() const {
    bool has_a = false;
    Tally t;
    for (const auto& u : utterances) {
      if (u.task == TaskKind::kSustainedA)
        has_a = true;
      else
        t.add(u.correct());
    }
    if (!has_a) return std::nullopt;
    return t;
  }
  // [truth][predicted], index 0 = ON, 1 = OFF.
  std::array<std::array<std::size_t, 2>, 2> confusion() const {
    std::array<std::array<std::size_t, 2>, 2> c{};
    for (const auto& u : utterances) ++c[u.truth == MedState::kOn ? 0 : 1][u.predicted == MedState::kOn ? 0 : 1];
    return c;
  }
  double mean_speaker_accuracy() const {
    const auto m = per_speaker();
    if (m.empty()) return 0;
    double s = 0;
    for (const auto& [_, t] : m) s += t.accuracy();
    return s / static_cast<double>(m.size());
  }
};

inline EvaluationReport evaluate(const SpeakerModelBank& bank, const FeatureStore& store, const Partition& part,
                                 Split split, int jobs) {
  const CorpusManifest& m = part.at(split);
  EvaluationReport r;
  r.config = bank.config;
  r.seed = bank.seed;
  r.split = split;
  r.input_dim = bank.input_dim();
  std::vector<std::optional<UtteranceResult>> out(m.entries.size());
  std::vector<std::string> why(m.entries.size());
  parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const auto it = bank.models.find(e.speaker_id);
    if (it == bank.models.end()) {
      why[i] = e.stem() + ": no model for speaker " + e.speaker_id;
      return;
    }
    if (!has_features(store, e, bank.config.features)) {
      why[i] = e.stem() + ": no patient speech";
      return;
    }
    const auto probs = predict_frames(it->second.model, model_input(bank, &it->second, store, e));
    const auto d = utterance_decision(probs);
    UtteranceResult u;
    u.stem = e.stem();
    u.speaker_id = e.speaker_id;
    u.task = e.task;
    u.truth = e.state;
    u.predicted = d.label == OnOff::kOn ? MedState::kOn : MedState::kOff;
    u.mean_prob = d.mean_prob;
    u.frames = d.frame_count;
    out[i] = u;
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i])
      r.utterances.push_back(*out[i]);
    else
      r.unscored.push_back(why[i]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridCell {
  GlobalConfig config;
  bool ok = false;
  std::string error;
  double dev_accuracy = 0;  // mean over speakers
  Eigen::Index input_dim = 0;
  std::size_t parameters = 0;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
  const GlobalConfig& best_config() const { return cells.at(best).config; }
};

inline std::size_t parameter_count(Eigen::Index input_dim, const std::vector<int>& hidden) {
  DnnArchitecture a;
  a.input_dim = static_cast<int>(input_dim);
  a.hidden = hidden;
  return a.num_parameters();
}

// True if a beats b: higher dev accuracy, then fewer parameters, smaller
// context, smaller learning rate.
inline bool better_cell(const GridCell& a, const GridCell& b) {
  if (a.ok != b.ok) return a.ok;
  if (a.dev_accuracy != b.dev_accuracy) return a.dev_accuracy > b.dev_accuracy;
  if (a.parameters != b.parameters) return a.parameters < b.parameters;
  if (a.config.context != b.config.context) return a.config.context < b.config.context;
  return a.config.learning_rate < b.config.learning_rate;
}

inline std::size_t select_best(const std::vector<GridCell>& cells) {
  require(!cells.empty(), ErrorKind::kInvalidArgument, "empty search space");
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (better_cell(cells[i], cells[best])) best = i;
  require(cells[best].ok, ErrorKind::kDegenerate, "every grid cell failed");
  return best;
}

inline GridResult grid_search(const FeatureStore& store, const Partition& part, const std::vector<GlobalConfig>& space,
                              std::uint64_t seed, int jobs) {
  require(!space.empty(), ErrorKind::kInvalidArgument, "empty search space");
  GridResult g;
  for (const auto& cfg : space) {
    GridCell cell;
    cell.config = cfg;
    try {
      const auto bank = train_speaker_bank(cfg, store, part, seed, jobs);
      if (!bank.excluded.empty()) {
        cell.error = "speaker " + bank.excluded.begin()->first + ": " + bank.excluded.begin()->second;
      } else {
        const auto rep = evaluate(bank, store, part, Split::kDev, jobs);
        cell.ok = rep.unscored.empty();
        if (!cell.ok) cell.error = rep.unscored.front();
        cell.dev_accuracy = rep.mean_speaker_accuracy();
        cell.input_dim = bank.input_dim();
        cell.parameters = parameter_count(cell.input_dim, cfg.hidden);
      }
    } catch (const Error& e) {
      cell.error = e.what();
    }
    g.cells.push_back(std::move(cell));
  }
  g.best = select_best(g.cells);
  return g;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
  return buf;
}

inline std::string fmt_lr(double lr) {
  std::ostringstream os;
  os << lr;
  return os.str();
}

// Left-aligned first column, right-aligned others.
inline std::string table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (w.size() <= c) w.push_back(0);
      w[c] = std::max(w[c], r[c].size());
    }
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c) os << "  ";
      os << (c == 0 ? std::left : std::right) << std::setw(static_cast<int>(w[c])) << rows[i][c];
    }
    os << "\n";
    if (i == 0) {
      std::size_t total = 0;
      for (auto x : w) total += x;
      os << std::string(total + 2 * (w.size() - 1), '-') << "\n";
    }
  }
  return os.str();
}

}  // namespace detail

inline std::string format_report(const EvaluationReport& r, std::optional<double> dev_accuracy = std::nullopt) {
  std::ostringstream os;
  const auto all = r.overall();
  os << "Evaluation (" << split_name(r.split) << " split), seed " << r.seed << "\n\n";
  os << detail::table({{"Feature set", "#Coefficients", "Context", "Input dim.", "Architecture", "alpha", "Acc devel.",
                        "Acc " + std::string(split_name(r.split))},
                       {r.config.feature_label(), std::to_string(r.config.base_dim()), std::to_string(r.config.context),
                        std::to_string(r.input_dim), r.config.architecture_label(), detail::fmt_lr(r.config.learning_rate),
                        dev_accuracy ? detail::pct(*dev_accuracy) : "-", detail::pct(all.accuracy())}});
  os << "\nPer task (utterance accuracy, %)\n";
  const auto tasks = r.per_task();
  std::vector<std::string> head{"Feature set"}, vals{r.config.feature_label()};
  for (const auto& [t, tally] : tasks) {
    head.emplace_back(task_name(t));
    vals.push_back(detail::pct(tally.accuracy()));
  }
  if (const auto rest = r.without_sustained_vowel()) {
    std::string name;
    for (const auto& [t, _] : tasks)
      if (t != TaskKind::kSustainedA) name += (name.empty() ? "" : "+") + std::string(task_name(t));
    head.push_back(name);
    vals.push_back(detail::pct(rest->accuracy()));
  }
  head.emplace_back("overall");
  vals.push_back(detail::pct(all.accuracy()));
  os << detail::table({head, vals});

  os << "\nCounts\n";
  std::vector<std::vector<std::string>> counts{{"task", "correct", "total"}};
  for (const auto& [t, tally] : tasks) counts.push_back({std::string(task_name(t)), std::to_string(tally.correct), std::to_string(tally.total)});
  counts.push_back({"all", std::to_string(all.correct), std::to_string(all.total)});
  os << detail::table(counts);

  const auto c = r.confusion();
  os << "\nConfusion (rows: true, columns: predicted)\n";
  os << detail::table({{"", "ON", "OFF"},
                       {"ON", std::to_string(c[0][0]), std::to_string(c[0][1])},
                       {"OFF", std::to_string(c[1][0]), std::to_string(c[1][1])}});

  os << "\nPer speaker\n";
  std::vector<std::vector<std::string>> spk{{"speaker", "correct", "total", "acc %"}};
  for (const auto& [s, t] : r.per_speaker())
    spk.push_back({s, std::to_string(t.correct), std::to_string(t.total), detail::pct(t.accuracy())});
  os << detail::table(spk);

  if (!r.unscored.empty()) {
    os << "\nNot scored\n";
    for (const auto& u : r.unscored) os << "  " << u << "\n";
  }
  return os.str();
}

inline nlohmann::json report_json(const EvaluationReport& r, std::optional<double> dev_accuracy = std::nullopt) {
  nlohmann::json j;
  j["split"] = std::string(split_name(r.split));
  j["seed"] = r.seed;
  j["config"] = to_json(r.config);
  j["input_dim"] = r.input_dim;
  const auto all = r.overall();
  j["overall"] = {{"correct", all.correct}, {"total", all.total}, {"accuracy", all.accuracy()}};
  if (dev_accuracy) j["dev_accuracy"] = *dev_accuracy;
  for (const auto& [t, tally] : r.per_task())
    j["per_task"][std::string(task_name(t))] = {{"correct", tally.correct}, {"total", tally.total}, {"accuracy", tally.accuracy()}};
  if (const auto rest = r.without_sustained_vowel())
    j["without_sustained_vowel"] = {{"correct", rest->correct}, {"total", rest->total}, {"accuracy", rest->accuracy()}};
  for (const auto& [s, t] : r.per_speaker())
    j["per_speaker"][s] = {{"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}};
  const auto c = r.confusion();
  j["confusion"] = {{"ON", {{"ON", c[0][0]}, {"OFF", c[0][1]}}}, {"OFF", {{"ON", c[1][0]}, {"OFF", c[1][1]}}}};
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : r.utterances)
    j["utterances"].push_back({{"file", u.stem},
                               {"speaker", u.speaker_id},
                               {"task", std::string(task_name(u.task))},
                               {"truth", std::string(state_name(u.truth))},
                               {"predicted", std::string(state_name(u.predicted))},
                               {"mean_prob", u.mean_prob},
                               {"frames", u.frames}});
  j["unscored"] = r.unscored;
  return j;
}

inline std::string format_grid(const GridResult& g) {
  std::vector<std::vector<std::string>> rows{{"Feature set", "Context", "Input dim.", "Architecture", "alpha", "Params", "Acc devel.", "status"}};
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    const auto& c = g.cells[i];
    rows.push_back({c.config.feature_label(), std::to_string(c.config.context), c.ok ? std::to_string(c.input_dim) : "-",
                    c.config.architecture_label(), detail::fmt_lr(c.config.learning_rate),
                    c.ok ? std::to_string(c.parameters) : "-", c.ok ? detail::pct(c.dev_accuracy) : "-",
                    i == g.best ? "selected" : c.ok ? "" : "failed: " + c.error});
  }
  return detail::table(rows);
}

inline nlohmann::json grid_json(const GridResult& g) {
  nlohmann::json j;
  j["selected"] = g.best;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : g.cells)
    j["cells"].push_back({{"config", to_json(c.config)},
                          {"ok", c.ok},
                          {"error", c.error},
                          {"dev_accuracy", c.dev_accuracy},
                          {"input_dim", c.input_dim},
                          {"parameters", c.parameters}});
  return j;
}

// ---------------------------------------------------------------------------
// Bank persistence: config.json, optional pooled pca.txt, one <speaker>.dnn
// (plus <speaker>.pca for per-speaker projections) in one directory.

inline void save_bank(const std::filesystem::path& dir, const SpeakerModelBank& bank) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["config"] = to_json(bank.config);
  j["seed"] = bank.seed;
  j["speakers"] = nlohmann::json::array();
  for (const auto& [s, m] : bank.models) j["speakers"].push_back({{"id", s}, {"best_epoch", m.best_epoch}, {"dev_accuracy", m.dev_accuracy}});
  for (const auto& [s, why] : bank.excluded) j["excluded"][s] = why;
  std::ofstream(dir / "bank.json") << j.dump(2) << "\n";
  if (bank.pca) save_pca(dir / "pca.txt", *bank.pca);
  for (const auto& [s, m] : bank.models) {
    TrainConfig tc;
    tc.learning_rate = bank.config.learning_rate;
    tc.max_epochs = bank.config.max_epochs;
    tc.patience = bank.config.patience;
    tc.seed = derive_seed(bank.seed, "dnn", s);
    save_dnn(dir / (s + ".dnn"), m.model, &tc, m.dev_accuracy);
    if (m.pca) save_pca(dir / (s + ".pca"), *m.pca);
  }
}

inline SpeakerModelBank load_bank(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "bank.json")) fail(ErrorKind::kMissingModel, "missing model bank in " + dir.string());
  std::ifstream in(dir / "bank.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bank.json: ") + e.what());
  }
  SpeakerModelBank bank;
  bank.config = global_config_from_json(j.at("config"));
  bank.seed = j.at("seed").get<std::uint64_t>();
  if (std::filesystem::exists(dir / "pca.txt")) bank.pca = load_pca(dir / "pca.txt");
  for (const auto& s : j.at("speakers")) {
    const std::string id = s.at("id").get<std::string>();
    SpeakerModel m;
    const auto path = dir / (id + ".dnn");
    if (!std::filesystem::exists(path)) fail(ErrorKind::kMissingModel, "missing model bank entry " + path.string());
    m.model = load_dnn(path);
    m.best_epoch = s.at("best_epoch").get<int>();
    m.dev_accuracy = s.at("dev_accuracy").get<double>();
    if (std::filesystem::exists(dir / (id + ".pca"))) m.pca = load_pca(dir / (id + ".pca"));
    bank.models.emplace(id, std::move(m));
  }
  if (j.contains("excluded"))
    for (const auto& [s, why] : j.at("excluded").items()) bank.excluded.emplace(s, why.get<std::string>());
  require(!bank.models.empty(), ErrorKind::kMissingModel, "missing model bank: no speaker models in " + dir.string());
  return bank;
}

// Feature store persistence: <dir>/<kind>/<stem>.msfc
inline void save_feature_store(const std::filesystem::path& dir, const FeatureStore& store) {
  for (const auto& [stem, rec] : store)
    for (const auto& [kind, f] : rec.features) {
      const auto sub = dir / std::string(feature_kind_name(kind));
      std::filesystem::create_directories(sub);
      save_features(sub / (stem + ".msfc"), f);
    }
}

// Recordings that extraction found no patient speech in, one stem per line.
inline std::set<std::string> read_skipped(const std::filesystem::path& dir) {
  std::set<std::string> out;
  std::ifstream in(dir / "skipped.txt");
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.insert(line.substr(0, line.find('\t')));
  return out;
}

inline FeatureStore load_feature_store(const std::filesystem::path& dir, const CorpusManifest& m,
                                       std::span<const FeatureKind> kinds) {
  FeatureStore store;
  const auto skipped = read_skipped(dir);
  for (const auto& e : m.entries) {
    if (skipped.count(e.stem())) continue;
    RecordingFeatures rec;
    rec.entry = e;
    for (FeatureKind k : kinds) {
      const auto path = dir / std::string(feature_kind_name(k)) / (e.stem() + ".msfc");
      if (!std::filesystem::exists(path)) fail(ErrorKind::kMissingData, "missing feature file " + path.string());
      rec.features.emplace(k, load_features(path));
    }
    store.emplace(e.stem(), std::move(rec));
  }
  return store;
}

inline std::vector<FeatureKind> kinds_needed(const std::vector<GlobalConfig>& space) {
  std::set<FeatureKind> s;
  for (const auto& c : space) s.insert(c.features);
  return {s.begin(), s.end()};
}

}  // namespace medstate
