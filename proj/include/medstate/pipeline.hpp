#pragma once

// Recording-level preprocessing shared by the CLI stages: energy segmentation,
// therapist removal with a GMM-UBM trained on control recordings, and
// extraction of per-file normalized classifier features over the remaining
// patient speech.

#include "medstate/egemaps.hpp"
#include "medstate/features.hpp"
#include "medstate/manifest.hpp"
#include "medstate/parallel.hpp"
#include "medstate/segmentation.hpp"
#include "medstate/speakerid.hpp"

#include <map>

namespace medstate {

struct SpeakerIdConfig {
  int components = 64;
  UbmOptions ubm;
  MapConfig map;
  MfccConfig mfcc;
};

struct SpeakerIdModels {
  GmmModel ubm;
  GmmModel therapist;
  Calibration calibration;
};

inline std::vector<std::uint8_t> speech_mask(const SegmentList& sl, std::int64_t frames) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(frames), 0);
  for (const auto& s : sl.segments)
    if (s.sns == SnsLabel::kSpeech)
      for (std::int64_t t = s.start; t < std::min(s.end, frames); ++t) m[static_cast<std::size_t>(t)] = 1;
  return m;
}

inline Matrix select_rows(const Matrix& x, std::span<const std::uint8_t> keep) {
  std::size_t n = 0;
  for (std::size_t t = 0; t < keep.size() && t < static_cast<std::size_t>(x.rows()); ++t) n += keep[t] != 0;
  Matrix out(static_cast<Eigen::Index>(n), x.cols());
  Eigen::Index r = 0;
  for (std::size_t t = 0; t < keep.size() && t < static_cast<std::size_t>(x.rows()); ++t)
    if (keep[t]) out.row(r++) = x.row(static_cast<Eigen::Index>(t));
  return out;
}

// MFCC13 + deltas for the whole recording, z-normalized with statistics of
// the SPEECH frames of `sns`.
inline FeatureMatrix speaker_id_features(const AudioClip& clip, const SegmentList& sns, const MfccConfig& cfg = {}) {
  FeatureMatrix f = delta(mfcc(clip, cfg));
  const auto keep = speech_mask(sns, f.num_frames());
  Matrix speech = select_rows(f.values, keep);
  if (speech.rows() < 2) speech = f.values;
  const RowVector mean = speech.colwise().mean();
  RowVector sd = ((speech.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(speech.rows())).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (sd(j) < 1e-12) sd(j) = 1.0;
  f.values = (f.values.rowwise() - mean).array().rowwise() / sd.array();
  f.history.push_back("znorm(speech)");
  return f;
}

struct LabeledSegmentFrames {
  FeatureMatrix frames;
  SpeakerLabel speaker = SpeakerLabel::kUnassigned;
};

// Ground-truth speech segments of one control recording with their frames.
inline std::vector<LabeledSegmentFrames> control_segments(const AudioClip& clip, const SegmentList& truth,
                                                          const MfccConfig& cfg = {}) {
  const FeatureMatrix f = speaker_id_features(clip, truth, cfg);
  std::vector<LabeledSegmentFrames> out;
  for (const auto& s : truth.segments) {
    if (s.sns != SnsLabel::kSpeech || s.speaker == SpeakerLabel::kUnassigned) continue;
    const std::int64_t end = std::min<std::int64_t>(s.end, f.num_frames());
    if (end <= s.start) continue;
    LabeledSegmentFrames l;
    l.frames.kind = f.kind;
    l.frames.values = f.values.middleRows(s.start, end - s.start);
    l.speaker = s.speaker;
    out.push_back(std::move(l));
  }
  return out;
}

inline SegmentList load_truth(const CorpusManifest& m, const ManifestEntry& e) {
  if (!e.truth) fail(ErrorKind::kMissingData, "no ground-truth segments for " + e.path.string());
  return read_segments(m.resolve(*e.truth));
}

// Loads every control recording's ground-truth segments in manifest order.
inline std::vector<std::vector<LabeledSegmentFrames>> load_control_segments(const CorpusManifest& control,
                                                                            const MfccConfig& cfg, int jobs) {
  require(!control.entries.empty(), ErrorKind::kMissingData, "control manifest is empty");
  std::vector<std::vector<LabeledSegmentFrames>> per(control.entries.size());
  parallel_for(control.entries.size(), jobs, [&](std::size_t i) {
    const auto& e = control.entries[i];
    const AudioClip clip = read_wav(control.resolve(e.path));
    per[i] = control_segments(clip, load_truth(control, e), cfg);
  });
  return per;
}

inline FeatureMatrix pool_frames(const std::vector<std::vector<LabeledSegmentFrames>>& per,
                                 std::optional<SpeakerLabel> only) {
  Eigen::Index rows = 0, dim = 0;
  for (const auto& rec : per)
    for (const auto& s : rec)
      if (!only || s.speaker == *only) {
        rows += s.frames.num_frames();
        dim = s.frames.dim();
      }
  FeatureMatrix out;
  out.kind = FeatureKind::kMfcc26;
  out.values.resize(rows, dim);
  Eigen::Index r = 0;
  for (const auto& rec : per)
    for (const auto& s : rec)
      if (!only || s.speaker == *only) {
        out.values.middleRows(r, s.frames.num_frames()) = s.frames.values;
        r += s.frames.num_frames();
      }
  return out;
}

inline std::vector<std::pair<FeatureMatrix, SpeakerLabel>> flatten_segments(
    const std::vector<std::vector<LabeledSegmentFrames>>& per) {
  std::vector<std::pair<FeatureMatrix, SpeakerLabel>> out;
  for (const auto& rec : per)
    for (const auto& s : rec) out.emplace_back(s.frames, s.speaker);
  return out;
}

// UBM on all control speech, therapist model by MAP from the control
// recordings' therapist turns, threshold calibrated on the same segments.
inline SpeakerIdModels train_speaker_models(const CorpusManifest& control, const SpeakerIdConfig& cfg,
                                            std::uint64_t seed, int jobs) {
  const auto per = load_control_segments(control, cfg.mfcc, jobs);
  SpeakerIdModels m;
  UbmOptions opt = cfg.ubm;
  opt.jobs = jobs;
  m.ubm = train_ubm(pool_frames(per, std::nullopt), cfg.components, derive_seed(seed, "ubm"), opt);
  const FeatureMatrix th = pool_frames(per, SpeakerLabel::kTherapist);
  require(th.num_frames() > 0, ErrorKind::kMissingData, "control recordings contain no therapist speech");
  m.therapist = map_adapt(m.ubm, th, cfg.map);
  const auto segs = flatten_segments(per);
  m.calibration = calibrate_threshold(std::span<const std::pair<FeatureMatrix, SpeakerLabel>>(segs), m.ubm, m.therapist);
  return m;
}

struct FilteredRecording {
  SegmentList sns;       // energy segmentation
  SegmentList filtered;  // with PATIENT / THERAPIST verdicts
};

inline FilteredRecording segment_and_filter(const AudioClip& clip, const SnsFsmParams& fsm, std::uint64_t seed,
                                            const SpeakerIdModels& models, double threshold,
                                            const MfccConfig& mfcc_cfg = {}) {
  FilteredRecording r;
  r.sns = segment_recording(clip, fsm, seed);
  const FeatureMatrix f = speaker_id_features(clip, r.sns, mfcc_cfg);
  r.filtered = filter_therapist(r.sns, f.values, models.ubm, models.therapist, threshold);
  return r;
}

// Frame-level filtering error rates against ground truth, over frames that
// are speech in the ground truth. Insertion: therapist frames kept as patient
// speech; deletion: patient frames lost (non-speech or therapist).
struct FilterRates {
  double insertion_rate = 0;
  double deletion_rate = 0;
  std::int64_t therapist_frames = 0;
  std::int64_t patient_frames = 0;
};

inline void accumulate_filter_rates(FilterRates& acc, const SegmentList& predicted, const SegmentList& truth) {
  const std::int64_t n = std::min(predicted.num_frames(), truth.num_frames());
  double ins = acc.insertion_rate * static_cast<double>(acc.therapist_frames);
  double del = acc.deletion_rate * static_cast<double>(acc.patient_frames);
  for (std::int64_t t = 0; t < n; ++t) {
    const auto& g = truth.at(t);
    if (g.sns != SnsLabel::kSpeech) continue;
    const auto& p = predicted.at(t);
    const bool kept_patient = p.sns == SnsLabel::kSpeech && p.speaker == SpeakerLabel::kPatient;
    if (g.speaker == SpeakerLabel::kTherapist) {
      ++acc.therapist_frames;
      ins += kept_patient;
    } else if (g.speaker == SpeakerLabel::kPatient) {
      ++acc.patient_frames;
      del += !kept_patient;
    }
  }
  acc.insertion_rate = acc.therapist_frames ? ins / static_cast<double>(acc.therapist_frames) : 0.0;
  acc.deletion_rate = acc.patient_frames ? del / static_cast<double>(acc.patient_frames) : 0.0;
}

// eGeMAPS frames use a longer window; map each 25 ms / 10 ms frame to the
// analysis frame whose centre is nearest.
inline Matrix align_to_canonical(const Matrix& x, double window_ms, std::int64_t canonical_frames,
                                 int rate = kCanonicalRate) {
  const int shift = ms_to_samples(10.0, rate);
  const int offset = (ms_to_samples(window_ms, rate) - ms_to_samples(25.0, rate)) / 2;
  Matrix out(canonical_frames, x.cols());
  for (std::int64_t t = 0; t < canonical_frames; ++t) {
    const auto src = static_cast<Eigen::Index>(
        std::lround(static_cast<double>(t * shift - offset) / static_cast<double>(shift)));
    out.row(t) = x.row(std::clamp<Eigen::Index>(src, 0, x.rows() - 1));
  }
  return out;
}

inline FeatureMatrix classifier_features(const AudioClip& clip, FeatureKind kind, const MfccConfig& mcfg = {},
                                         const EgemapsConfig& ecfg = {}) {
  switch (kind) {
    case FeatureKind::kMfcc13: return mfcc(clip, mcfg);
    case FeatureKind::kMfcc26: return delta(mfcc(clip, mcfg));
    case FeatureKind::kEgemaps: {
      FeatureMatrix f = egemaps_lld(clip, ecfg);
      const auto frames = static_cast<std::int64_t>(frame_count(clip.size(), static_cast<std::size_t>(ms_to_samples(25.0, clip.sample_rate)),
                                                                static_cast<std::size_t>(ms_to_samples(10.0, clip.sample_rate))));
      f.values = align_to_canonical(f.values, ecfg.pitch_window_ms, frames, clip.sample_rate);
      f.history.push_back("align(25ms/10ms)");
      return f;
    }
    default: fail(ErrorKind::kInvalidArgument, "not an extractable feature kind: " + std::string(feature_kind_name(kind)));
  }
}

// Patient-speech frames of one recording, z-normalized over themselves.
inline FeatureMatrix patient_features(const AudioClip& clip, const SegmentList& filtered, FeatureKind kind,
                                      const MfccConfig& mcfg = {}, const EgemapsConfig& ecfg = {}) {
  const FeatureMatrix all = classifier_features(clip, kind, mcfg, ecfg);
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(all.num_frames()), 0);
  for (const auto& s : filtered.segments)
    if (s.sns == SnsLabel::kSpeech && s.speaker == SpeakerLabel::kPatient)
      for (std::int64_t t = s.start; t < std::min<std::int64_t>(s.end, all.num_frames()); ++t)
        keep[static_cast<std::size_t>(t)] = 1;
  FeatureMatrix sel;
  sel.kind = all.kind;
  sel.frame_period_ms = all.frame_period_ms;
  sel.history = all.history;
  sel.history.push_back("patient-speech");
  sel.values = select_rows(all.values, keep);
  require(sel.num_frames() >= 2, ErrorKind::kTooShort, "fewer than two patient speech frames");
  return znorm_per_file(sel);
}

}  // namespace medstate
