#pragma once

// Effective configuration of a CLI run. Loaded from a JSON file (any subset of
// keys), then overridden by command-line flags, then echoed as config.json
// into every output directory.

#include "medstate/experiment.hpp"
#include "medstate/pipeline.hpp"
#include "medstate/synthcorpus.hpp"

#include <nlohmann/json.hpp>

namespace medstate {

struct RunConfig {
  std::uint64_t seed = 7;
  int jobs = 1;  // not part of the echo: results do not depend on it

  CorpusSpec corpus;
  SnsFsmParams segmentation;
  SpeakerIdConfig speaker_id;
  std::optional<double> threshold;  // overrides the calibrated one
  GlobalConfig model;
  std::string search = "none";  // "none" or a search space name

  std::filesystem::path corpus_dir;
  std::filesystem::path work_dir;
  std::filesystem::path out_dir;
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["corpus"] = corpus_spec_json(c.corpus);
  j["corpus"].erase("seed");
  j["segmentation"] = {{"enter_speech_posterior", c.segmentation.enter_speech_posterior},
                       {"exit_speech_posterior", c.segmentation.exit_speech_posterior},
                       {"min_speech_ms", c.segmentation.min_speech_ms},
                       {"min_pause_ms", c.segmentation.min_pause_ms}};
  j["speaker_id"] = {{"components", c.speaker_id.components}, {"relevance", c.speaker_id.map.relevance_factor}};
  j["speaker_id"]["threshold"] = c.threshold ? nlohmann::json(*c.threshold) : nlohmann::json(nullptr);
  j["model"] = to_json(c.model);
  j["search"] = c.search;
  j["paths"] = {{"corpus", c.corpus_dir.generic_string()},
                {"work", c.work_dir.generic_string()},
                {"out", c.out_dir.generic_string()}};
  return j;
}

namespace detail {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key) && !j.at(key).is_null()) dst = j.at(key).get<T>();
}

}  // namespace detail

// Applies every key present in `j` on top of `base`.
inline RunConfig merge_config(const nlohmann::json& j, RunConfig c = {}) {
  using detail::take;
  try {
    take(j, "seed", c.seed);
    if (j.contains("corpus")) {
      const auto& k = j.at("corpus");
      take(k, "speakers", c.corpus.speakers);
      take(k, "control_speakers", c.corpus.control_speakers);
      take(k, "delta", c.corpus.effect.delta);
      take(k, "snr_db", c.corpus.snr_db);
      take(k, "hard_therapist", c.corpus.hard_therapist);
      take(k, "therapist_turns", c.corpus.therapist_turns);
      if (k.contains("off_shape")) {
        const auto& s = k.at("off_shape");
        auto& sh = c.corpus.effect.shape;
        take(s, "f0_range_compression", sh.f0_range_compression);
        take(s, "intensity_drop_db", sh.intensity_drop_db);
        take(s, "loudness_range_compression", sh.loudness_range_compression);
        take(s, "jitter_increase", sh.jitter_increase);
        take(s, "shimmer_increase", sh.shimmer_increase);
        take(s, "pause_lengthening", sh.pause_lengthening);
        take(s, "rate_slowing", sh.rate_slowing);
        take(s, "vowel_centralization", sh.vowel_centralization);
        take(s, "breathiness", sh.breathiness);
      }
    }
    if (j.contains("segmentation")) {
      const auto& k = j.at("segmentation");
      take(k, "enter_speech_posterior", c.segmentation.enter_speech_posterior);
      take(k, "exit_speech_posterior", c.segmentation.exit_speech_posterior);
      take(k, "min_speech_ms", c.segmentation.min_speech_ms);
      take(k, "min_pause_ms", c.segmentation.min_pause_ms);
    }
    if (j.contains("speaker_id")) {
      const auto& k = j.at("speaker_id");
      take(k, "components", c.speaker_id.components);
      take(k, "relevance", c.speaker_id.map.relevance_factor);
      if (k.contains("threshold") && !k.at("threshold").is_null()) c.threshold = k.at("threshold").get<double>();
    }
    if (j.contains("model")) c.model = global_config_from_json(j.at("model"), c.model);
    take(j, "search", c.search);
    if (j.contains("paths")) {
      const auto& k = j.at("paths");
      std::string s;
      if (k.contains("corpus")) c.corpus_dir = k.at("corpus").get<std::string>();
      if (k.contains("work")) c.work_dir = k.at("work").get<std::string>();
      if (k.contains("out")) c.out_dir = k.at("out").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "config " + path.string() + ": " + e.what());
  }
  return merge_config(j, std::move(base));
}

inline void validate(const RunConfig& c) {
  require(c.jobs >= 1, ErrorKind::kInvalidArgument, "--jobs must be >= 1");
  require(c.corpus.speakers >= 1, ErrorKind::kInvalidArgument, "speakers must be >= 1");
  require(c.corpus.effect.delta >= 0 && c.corpus.effect.delta <= 1, ErrorKind::kInvalidArgument, "delta must be in [0, 1]");
  const int k = c.speaker_id.components;
  require(k >= 1 && (k & (k - 1)) == 0, ErrorKind::kInvalidArgument, "UBM components must be a power of two");
  require(c.speaker_id.map.relevance_factor > 0, ErrorKind::kInvalidArgument, "relevance factor must be positive");
  const auto& s = c.segmentation;
  require(s.exit_speech_posterior <= s.enter_speech_posterior, ErrorKind::kInvalidArgument,
          "segmentation: exit posterior above enter posterior");
  c.model.validate();
}

inline void echo_config(const std::filesystem::path& dir, const RunConfig& c) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) fail(ErrorKind::kIo, "cannot write " + (dir / "config.json").string());
  out << to_json(c).dump(2) << "\n";
}

}  // namespace medstate
