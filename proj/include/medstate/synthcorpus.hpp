#pragma once

// Parametric source-filter generator for corpora shaped like a clinical
// ON/OFF recording protocol: speakers x 9 tasks x {ON, OFF}, with injected
// therapist turns, background noise, and sample-exact ground truth.
//
// The synthesis is crude on purpose: a jittered/shimmered impulse train
// through a spectral-tilt filter and three time-varying formant resonators,
// with noise-burst consonants. Every OFF-state deviation is scaled by a
// single effect size delta in [0, 1]; delta = 0 makes ON and OFF generation
// identical.

#include "medstate/manifest.hpp"
#include "medstate/parallel.hpp"
#include "medstate/segmentation.hpp"
#include "medstate/signalio.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <numbers>
#include <optional>
#include <random>

namespace medstate {

struct SpeakerProfile {
  std::string speaker_id;
  double base_f0 = 120.0;                       // Hz, in [70, 300]
  std::array<double, 3> formants{500, 1500, 2500};  // neutral-vowel formant centres, Hz
  double base_intensity_db = -20.0;             // speech RMS, dBFS
  double base_jitter = 0.005;                   // fractional, in [0, 0.1]
  double base_shimmer = 0.03;                   // fractional, in [0, 0.1]
  std::uint64_t seed = 0;
};

inline void validate_profile(const SpeakerProfile& p) {
  require(p.base_f0 >= 70 && p.base_f0 <= 300, ErrorKind::kInvalidArgument, "base_f0 outside [70, 300] Hz");
  require(p.base_jitter >= 0 && p.base_jitter <= 0.1 && p.base_shimmer >= 0 && p.base_shimmer <= 0.1,
          ErrorKind::kInvalidArgument, "jitter/shimmer outside [0, 0.1]");
  for (double f : p.formants) require(f > 100 && f < 7000, ErrorKind::kInvalidArgument, "formant out of range");
}

// Magnitudes of the OFF-state deviations at delta = 1.
struct OffStateShape {
  double f0_range_compression = 0.6;      // pitch excursions scaled by (1 - 0.6 delta)
  double intensity_drop_db = 6.0;
  double loudness_range_compression = 0.5;
  double jitter_increase = 0.015;
  double shimmer_increase = 0.06;
  double pause_lengthening = 0.8;          // pauses scaled by (1 + 0.8 delta)
  double rate_slowing = 0.2;               // syllable rate scaled by (1 - 0.2 delta)
  double vowel_centralization = 0.5;       // vowel space shrunk by (1 - 0.5 delta)
  double breathiness = 0.25;               // aspiration noise relative to pulse amplitude
};

struct StateEffect {
  double delta = 1.0;
  OffStateShape shape;
};

// Sample-level labels: 0 non-speech, 1 patient speech, 2 therapist speech.
struct GroundTruth {
  MedState state = MedState::kUnknown;
  std::vector<std::uint8_t> sample_labels;
  double noise_rms = 0;

  static constexpr std::uint8_t kSilence = 0;
  static constexpr std::uint8_t kPatient = 1;
  static constexpr std::uint8_t kTherapist = 2;

  double speech_fraction() const {
    if (sample_labels.empty()) return 0;
    std::size_t s = 0;
    for (auto l : sample_labels) s += l != kSilence;
    return static_cast<double>(s) / static_cast<double>(sample_labels.size());
  }
};

// Frame-level masks on the 25 ms / 10 ms grid, labelled by each frame's centre sample.
inline SegmentList truth_segments(const GroundTruth& g, int rate = kCanonicalRate) {
  const int len = ms_to_samples(25.0, rate), shift = ms_to_samples(10.0, rate);
  const std::size_t n = frame_count(g.sample_labels.size(), static_cast<std::size_t>(len), static_cast<std::size_t>(shift));
  std::vector<SnsLabel> sns(n);
  std::vector<SpeakerLabel> spk(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto l = g.sample_labels[t * static_cast<std::size_t>(shift) + static_cast<std::size_t>(len / 2)];
    sns[t] = l == GroundTruth::kSilence ? SnsLabel::kNonSpeech : SnsLabel::kSpeech;
    spk[t] = l == GroundTruth::kPatient ? SpeakerLabel::kPatient
             : l == GroundTruth::kTherapist ? SpeakerLabel::kTherapist
                                            : SpeakerLabel::kUnassigned;
  }
  return segments_from_mask(sns, spk);
}

enum class TaskStyle { kSustained, kDiadochokinesis, kIsolatedWords, kRead, kSpontaneous };

struct TaskSpec {
  TaskStyle style = TaskStyle::kRead;
  int units = 1;                // phrases / repetitions / words
  int syllables_per_unit = 1;
  double sustained_s = 0;       // vowel length for sustained tasks
  double speech_ratio = 0.75;   // speech share of the recording at delta = 0
  double accent_st = 3.0;       // pitch excursion per accented syllable, semitones
  double syllable_rate = 5.0;   // syllables per second
};

inline TaskSpec task_spec(TaskKind t) {
  switch (t) {
    case TaskKind::kSustainedA: return {TaskStyle::kSustained, 3, 1, 1.8, 0.75, 0.4, 0};
    case TaskKind::kMpt: return {TaskStyle::kSustained, 3, 1, 4.0, 0.80, 0.4, 0};
    case TaskKind::kDdk: return {TaskStyle::kDiadochokinesis, 3, 15, 0, 0.85, 1.0, 6.0};
    case TaskKind::kReadWords: return {TaskStyle::kIsolatedWords, 15, 2, 0, 0.55, 2.0, 4.5};
    case TaskKind::kReadSentences: return {TaskStyle::kRead, 5, 7, 0, 0.70, 3.0, 5.0};
    case TaskKind::kReadText: return {TaskStyle::kRead, 4, 9, 0, 0.80, 3.0, 5.0};
    case TaskKind::kProsodicSentences: return {TaskStyle::kRead, 8, 6, 0, 0.70, 6.0, 4.5};
    case TaskKind::kStorytelling: return {TaskStyle::kSpontaneous, 6, 8, 0, 0.75, 6.0, 4.5};
    case TaskKind::kConversation: return {TaskStyle::kSpontaneous, 14, 8, 0, 0.75, 5.0, 5.0};
  }
  return {};
}

// Expected speech share once OFF pause lengthening is applied.
inline double expected_speech_ratio(TaskKind task, MedState state, const StateEffect& effect) {
  const double r = task_spec(task).speech_ratio;
  const double scale = state == MedState::kOff ? 1.0 + effect.delta * effect.shape.pause_lengthening : 1.0;
  return r / (r + (1.0 - r) * scale);
}

namespace synth {

inline constexpr int kRate = kCanonicalRate;

// Reference vowel formants (adult male) for /a i u e o/.
inline constexpr std::array<std::array<double, 3>, 5> kVowels = {{
    {730, 1090, 2440}, {270, 2290, 3010}, {300, 870, 2240}, {530, 1840, 2480}, {570, 840, 2410}}};
inline constexpr std::array<double, 3> kNeutral = {500, 1500, 2500};

enum class Consonant { kNone, kP, kT, kK, kS };

struct Syllable {
  Consonant onset = Consonant::kNone;
  int vowel = 0;
  double duration = 0.2;  // s, including onset
  double f0_st = 0;       // pitch offset at syllable peak, semitones
  double gain_db = 0;
};

struct VoiceParams {
  double f0 = 120;
  double range = 1;         // pitch-excursion scale
  double loudness_range = 1;
  double jitter = 0;
  double shimmer = 0;
  double breath = 0;
  double rate_scale = 1;
  double articulation = 1;  // vowel-space scale
  double pause_scale = 1;
  double level_db = -20;
  std::array<double, 3> formant_scale{1, 1, 1};
};

inline VoiceParams voice_params(const SpeakerProfile& p, MedState state, const StateEffect& e) {
  VoiceParams v;
  const double d = state == MedState::kOff ? e.delta : 0.0;
  const auto& s = e.shape;
  v.f0 = p.base_f0;
  v.range = 1.0 - d * s.f0_range_compression;
  v.loudness_range = 1.0 - d * s.loudness_range_compression;
  v.jitter = p.base_jitter + d * s.jitter_increase;
  v.shimmer = p.base_shimmer + d * s.shimmer_increase;
  v.breath = 0.02 + d * s.breathiness;
  v.rate_scale = 1.0 - d * s.rate_slowing;
  v.articulation = 1.0 - d * s.vowel_centralization;
  v.pause_scale = 1.0 + d * s.pause_lengthening;
  v.level_db = p.base_intensity_db - d * s.intensity_drop_db;
  for (int i = 0; i < 3; ++i) v.formant_scale[static_cast<std::size_t>(i)] = p.formants[static_cast<std::size_t>(i)] / kNeutral[static_cast<std::size_t>(i)];
  return v;
}

// Klatt-style two-pole resonator with unit DC gain.
struct Resonator {
  double a = 1, b = 0, c = 0, y1 = 0, y2 = 0;
  void set(double freq, double bw) {
    const double T = 1.0 / kRate;
    c = -std::exp(-2.0 * std::numbers::pi * bw * T);
    b = 2.0 * std::exp(-std::numbers::pi * bw * T) * std::cos(2.0 * std::numbers::pi * freq * T);
    a = 1.0 - b - c;
  }
  double step(double x) {
    const double y = a * x + b * y1 + c * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// One contiguous voiced stretch (phrase, word or sustained vowel) rendered to samples.
class PhraseRenderer {
 public:
  PhraseRenderer(const VoiceParams& v, std::mt19937_64& rng) : v_(v), rng_(rng) {}

  std::vector<double> render(const std::vector<Syllable>& syl, double decl_st) {
    std::size_t total = 0;
    for (const auto& s : syl) total += static_cast<std::size_t>(s.duration * kRate);
    std::vector<double> out(total, 0.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::size_t pos = 0;
    std::array<double, 3> prev_f = formants_of(syl.empty() ? 0 : syl.front().vowel);
    double tilt1 = 0, tilt2 = 0, rad = 0;
    double phase = 1.0;
    double cycle_amp = 0, cycle_f0 = v_.f0;
    std::array<Resonator, 3> res;
    Resonator burst;
    for (std::size_t si = 0; si < syl.size(); ++si) {
      const auto& s = syl[si];
      const std::size_t len = static_cast<std::size_t>(s.duration * kRate);
      const std::size_t onset = onset_samples(s.onset, len);
      const auto target = formants_of(s.vowel);
      const double amp_peak = std::pow(10.0, s.gain_db * v_.loudness_range / 20.0);
      const double next_st = si + 1 < syl.size() ? syl[si + 1].f0_st : 0.0;
      burst.set(burst_freq(s.onset), 600.0);
      for (std::size_t i = 0; i < len; ++i, ++pos) {
        const double frac = static_cast<double>(i) / static_cast<double>(len);
        const double global = static_cast<double>(pos) / static_cast<double>(std::max<std::size_t>(total, 1));
        if (i < onset) {
          // Closure then a noise burst / frication.
          const bool noisy = s.onset == Consonant::kS || i + onset / 3 >= onset;
          const double n = noisy ? 0.35 * amp_peak * nd(rng_) : 0.0;
          out[pos] = burst.step(n) * 1.5;
          continue;
        }
        if ((i & 63) == 0) {
          // Coarticulated formant glide over the first 40% of the vowel.
          const double g = std::min(1.0, (static_cast<double>(i - onset) / static_cast<double>(len - onset)) / 0.4);
          for (int k = 0; k < 3; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const double f = prev_f[ku] + g * (target[ku] - prev_f[ku]);
            res[ku].set(f, 60.0 + 40.0 * k + 0.04 * f);
          }
        }
        // Syllable envelope: 30 ms attack, 40 ms release.
        const double t_in = static_cast<double>(i - onset) / kRate;
        const double t_out = static_cast<double>(len - i) / kRate;
        double env = std::min({1.0, t_in / 0.03, t_out / 0.04});
        env = env * env * (3 - 2 * env);
        const double pitch_st = decl_st * (0.5 - global) + s.f0_st * std::sin(std::numbers::pi * frac) +
                                (frac > 0.7 ? (next_st - s.f0_st) * (frac - 0.7) / 0.3 * 0.3 : 0.0);
        const double f0_now = v_.f0 * std::pow(2.0, v_.range * pitch_st / 12.0);
        phase += cycle_f0 / kRate;
        double src = 0;
        if (phase >= 1.0) {
          phase -= 1.0;
          cycle_f0 = f0_now * std::max(0.5, 1.0 + v_.jitter * nd(rng_));
          cycle_amp = std::max(0.0, 1.0 + v_.shimmer * nd(rng_));
          src = cycle_amp * std::sqrt(f0_now / 100.0);
        }
        src += v_.breath * 0.15 * nd(rng_);
        // Glottal spectral tilt (two one-pole low-passes), vocal tract, lip radiation.
        tilt1 = 0.94 * tilt1 + src;
        tilt2 = 0.90 * tilt2 + tilt1;
        double y = res[0].step(tilt2);
        y = res[1].step(y);
        y = res[2].step(y);
        const double r = y - rad;
        rad = y;
        out[pos] = r * env * amp_peak;
      }
      prev_f = target;
    }
    return out;
  }

 private:
  std::array<double, 3> formants_of(int vowel) const {
    std::array<double, 3> f{};
    for (std::size_t k = 0; k < 3; ++k) {
      const double centred = kNeutral[k] + v_.articulation * (kVowels[static_cast<std::size_t>(vowel)][k] - kNeutral[k]);
      f[k] = centred * v_.formant_scale[k];
    }
    return f;
  }
  static std::size_t onset_samples(Consonant c, std::size_t len) {
    const double ms = c == Consonant::kNone ? 0 : c == Consonant::kS ? 70 : 45;
    return std::min(len / 3, static_cast<std::size_t>(ms * kRate / 1000.0));
  }
  static double burst_freq(Consonant c) {
    switch (c) {
      case Consonant::kP: return 900;
      case Consonant::kT: return 3800;
      case Consonant::kK: return 1900;
      case Consonant::kS: return 5500;
      default: return 1000;
    }
  }

  VoiceParams v_;
  std::mt19937_64& rng_;
};

struct Unit {
  std::vector<Syllable> syllables;
  double declination_st = 2.0;
};

inline std::vector<Unit> plan_units(TaskKind task, const VoiceParams& v, std::mt19937_64& rng) {
  const TaskSpec spec = task_spec(task);
  std::uniform_int_distribution<int> vowel(0, 4), cons(1, 4);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Unit> units;
  for (int k = 0; k < spec.units; ++k) {
    Unit unit;
    if (spec.style == TaskStyle::kSustained) {
      // One long /a/ with a slow random pitch drift.
      Syllable s;
      s.vowel = 0;
      s.duration = spec.sustained_s * (0.9 + 0.2 * u(rng));
      s.f0_st = spec.accent_st * nd(rng);
      unit.syllables.push_back(s);
      unit.declination_st = spec.accent_st * nd(rng);
    } else {
      const int n = spec.syllables_per_unit + (spec.style == TaskStyle::kSpontaneous ? static_cast<int>(std::lround(2 * nd(rng))) : 0);
      for (int i = 0; i < std::max(2, n); ++i) {
        Syllable s;
        if (spec.style == TaskStyle::kDiadochokinesis) {
          s.onset = std::array{Consonant::kP, Consonant::kT, Consonant::kK}[static_cast<std::size_t>(i % 3)];
          s.vowel = 0;
        } else {
          s.onset = u(rng) < 0.8 ? static_cast<Consonant>(cons(rng)) : Consonant::kNone;
          s.vowel = vowel(rng);
        }
        const double base = 1.0 / (spec.syllable_rate * v.rate_scale);
        s.duration = base * std::clamp(1.0 + 0.25 * nd(rng), 0.6, 1.6);
        const bool accented = u(rng) < 0.35;
        s.f0_st = (accented ? spec.accent_st : 0.3 * spec.accent_st) * nd(rng);
        s.gain_db = (accented ? 3.0 : 0.0) + 2.5 * nd(rng);
        unit.syllables.push_back(s);
      }
      unit.declination_st = 2.0 + u(rng);
    }
    units.push_back(std::move(unit));
  }
  return units;
}

inline double db_to_amp(double db) { return std::pow(10.0, db / 20.0); }

inline double rms_where(const std::vector<double>& x, const std::vector<std::uint8_t>& mask, std::uint8_t label) {
  double e = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i] == label) {
      e += x[i] * x[i];
      ++n;
    }
  return n ? std::sqrt(e / static_cast<double>(n)) : 0.0;
}

// Continuous speech of a fixed length from `profile`, at its ON-state level.
inline std::vector<double> render_speech_fill(const SpeakerProfile& profile, double seconds, std::mt19937_64& rng) {
  const VoiceParams v = voice_params(profile, MedState::kOn, StateEffect{0.0, {}});
  std::vector<double> out;
  while (static_cast<double>(out.size()) < seconds * kRate) {
    auto units = plan_units(TaskKind::kConversation, v, rng);
    PhraseRenderer r(v, rng);
    for (const auto& unit : units) {
      auto a = r.render(unit.syllables, unit.declination_st);
      out.insert(out.end(), a.begin(), a.end());
    }
  }
  out.resize(static_cast<std::size_t>(seconds * kRate));
  // Fade the cut edges.
  const std::size_t fade = std::min<std::size_t>(out.size() / 2, 320);
  for (std::size_t i = 0; i < fade; ++i) {
    const double g = static_cast<double>(i) / static_cast<double>(fade);
    out[i] *= g;
    out[out.size() - 1 - i] *= g;
  }
  std::vector<std::uint8_t> all(out.size(), 1);
  const double scale = db_to_amp(profile.base_intensity_db) / std::max(rms_where(out, all, 1), 1e-12);
  for (double& s : out) s *= scale;
  return out;
}

}  // namespace synth

struct SynthOptions {
  double snr_db = 20.0;  // relative to the speaker's ON-state speech level
  double min_pause_s = 0.3;
};

struct SynthResult {
  AudioClip clip;
  GroundTruth truth;
};

inline SynthResult synth_utterance(const SpeakerProfile& profile, MedState state, TaskKind task,
                                   const StateEffect& effect, std::uint64_t seed, const SynthOptions& opt = {}) {
  validate_profile(profile);
  require(effect.delta >= 0 && effect.delta <= 1, ErrorKind::kInvalidArgument, "effect delta outside [0, 1]");
  std::mt19937_64 rng(seed);
  const synth::VoiceParams v = synth::voice_params(profile, state, effect);
  const auto units = synth::plan_units(task, v, rng);

  std::vector<std::vector<double>> rendered;
  std::size_t speech = 0;
  for (const auto& unit : units) {
    synth::PhraseRenderer r(v, rng);
    rendered.push_back(r.render(unit.syllables, unit.declination_st));
    speech += rendered.back().size();
  }

  // Pause slots: leading, between units, trailing. Total pause length hits the
  // target speech ratio; the split across slots is random.
  const double ratio = expected_speech_ratio(task, state == MedState::kOff ? MedState::kOff : MedState::kOn, effect);
  const double pause_total = static_cast<double>(speech) * (1.0 - ratio) / ratio;
  const std::size_t slots = units.size() + 1;
  const double min_pause = opt.min_pause_s * synth::kRate;
  std::gamma_distribution<double> gam(4.0, 1.0);
  std::vector<double> share(slots);
  double share_sum = 0;
  for (auto& s : share) share_sum += (s = gam(rng));
  const double spare = std::max(0.0, pause_total - min_pause * static_cast<double>(slots));

  SynthResult out;
  out.clip.sample_rate = synth::kRate;
  out.clip.meta.task = task;
  out.clip.meta.state = state;
  out.clip.meta.speaker_id = profile.speaker_id;
  out.truth.state = state;
  auto& x = out.clip.samples;
  auto& lab = out.truth.sample_labels;
  for (std::size_t k = 0; k < slots; ++k) {
    const auto pause = static_cast<std::size_t>(std::lround(min_pause + spare * share[k] / share_sum));
    x.insert(x.end(), pause, 0.0);
    lab.insert(lab.end(), pause, GroundTruth::kSilence);
    if (k < rendered.size()) {
      x.insert(x.end(), rendered[k].begin(), rendered[k].end());
      lab.insert(lab.end(), rendered[k].size(), GroundTruth::kPatient);
    }
  }

  std::normal_distribution<double> nd(0.0, 1.0);
  const double session_db = 0.5 * nd(rng);
  const double gain = synth::db_to_amp(v.level_db + session_db) / std::max(synth::rms_where(x, lab, GroundTruth::kPatient), 1e-12);
  out.truth.noise_rms = synth::db_to_amp(profile.base_intensity_db - opt.snr_db);
  for (double& s : x) s = std::clamp(s * gain + out.truth.noise_rms * nd(rng), -1.0, 1.0);
  return out;
}

struct TherapistTurn {
  double start_s = 0;
  double duration_s = 0;
};

inline void inject_therapist(AudioClip& clip, GroundTruth& truth, const SpeakerProfile& therapist,
                             std::span<const TherapistTurn> turns, std::uint64_t seed) {
  require(truth.sample_labels.size() == clip.samples.size(), ErrorKind::kInvalidArgument, "truth does not match clip");
  std::vector<TherapistTurn> sorted(turns.begin(), turns.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    require(sorted[i].duration_s > 0 && sorted[i].start_s >= 0, ErrorKind::kInvalidArgument, "bad therapist turn");
    require(sorted[i].start_s + sorted[i].duration_s <= clip.duration_s(), ErrorKind::kInvalidArgument,
            "therapist turn extends past the clip");
    if (i > 0)
      require(sorted[i].start_s >= sorted[i - 1].start_s + sorted[i - 1].duration_s, ErrorKind::kInvalidArgument,
              "overlapping therapist turns");
  }
  std::mt19937_64 rng(seed);
  for (const auto& t : sorted) {
    const auto begin = static_cast<std::size_t>(std::lround(t.start_s * clip.sample_rate));
    const auto len = static_cast<std::size_t>(std::lround(t.duration_s * clip.sample_rate));
    const auto end = std::min(begin + len, clip.samples.size());
    for (std::size_t i = begin; i < end; ++i)
      require(truth.sample_labels[i] == GroundTruth::kSilence, ErrorKind::kInvalidArgument,
              "therapist turn overlaps speech");
    const auto speech = synth::render_speech_fill(therapist, static_cast<double>(end - begin) / clip.sample_rate, rng);
    for (std::size_t i = begin; i < end; ++i) {
      clip.samples[i] = std::clamp(clip.samples[i] + speech[i - begin], -1.0, 1.0);
      truth.sample_labels[i] = GroundTruth::kTherapist;
    }
  }
}

// Insert `seconds` of background noise at sample `at` (must be non-speech or an edge).
inline void insert_gap(AudioClip& clip, GroundTruth& truth, std::size_t at, double seconds, std::mt19937_64& rng) {
  require(at <= clip.samples.size(), ErrorKind::kInvalidArgument, "gap position outside clip");
  const auto n = static_cast<std::size_t>(std::lround(seconds * clip.sample_rate));
  std::normal_distribution<double> nd(0.0, truth.noise_rms);
  std::vector<double> noise(n);
  for (auto& s : noise) s = std::clamp(nd(rng), -1.0, 1.0);
  clip.samples.insert(clip.samples.begin() + static_cast<std::ptrdiff_t>(at), noise.begin(), noise.end());
  truth.sample_labels.insert(truth.sample_labels.begin() + static_cast<std::ptrdiff_t>(at), n, GroundTruth::kSilence);
}

struct CorpusSpec {
  int speakers = 20;
  int control_speakers = 6;
  StateEffect effect;
  double snr_db = 20.0;
  std::uint64_t seed = 1;
  bool hard_therapist = false;  // therapist voice closer to the patients'
  bool therapist_turns = true;
};

inline SpeakerProfile make_patient_profile(const std::string& id, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SpeakerProfile p;
  p.speaker_id = id;
  p.seed = seed;
  const bool female = u(rng) < 0.5;
  p.base_f0 = female ? 165 + 40 * u(rng) : 95 + 40 * u(rng);
  const double scale = (female ? 1.08 : 0.94) + 0.06 * (u(rng) - 0.5);
  for (std::size_t k = 0; k < 3; ++k) p.formants[k] = synth::kNeutral[k] * scale * (1.0 + 0.04 * (u(rng) - 0.5));
  p.base_intensity_db = -28 + 4 * u(rng);
  p.base_jitter = 0.004 + 0.006 * u(rng);
  p.base_shimmer = 0.02 + 0.03 * u(rng);
  return p;
}

inline SpeakerProfile make_therapist_profile(bool hard) {
  SpeakerProfile p;
  p.speaker_id = "THERAPIST";
  p.base_f0 = hard ? 190 : 260;
  const double scale = hard ? 1.12 : 1.30;
  for (std::size_t k = 0; k < 3; ++k) p.formants[k] = synth::kNeutral[k] * scale;
  p.base_intensity_db = -30;
  p.base_jitter = 0.003;
  p.base_shimmer = 0.02;
  return p;
}

inline std::string recording_stem(const std::string& speaker, TaskKind task, MedState state) {
  std::string s = speaker + "_" + std::string(task_name(task));
  if (state != MedState::kUnknown) s += "_" + std::string(state_name(state));
  return s;
}

// One recording with its therapist turns: an instruction turn in front, plus
// interjections between phrases for conversation.
inline SynthResult synth_session_recording(const SpeakerProfile& speaker, const SpeakerProfile& therapist, MedState state,
                                           TaskKind task, const CorpusSpec& spec, std::uint64_t seed) {
  const StateEffect effect = state == MedState::kUnknown ? StateEffect{0.0, spec.effect.shape} : spec.effect;
  SynthOptions opt;
  opt.snr_db = spec.snr_db;
  auto r = synth_utterance(speaker, state == MedState::kUnknown ? MedState::kOn : state, task, effect, seed, opt);
  r.clip.meta.state = state;
  r.truth.state = state;
  if (!spec.therapist_turns) return r;

  std::mt19937_64 rng(mix64(seed ^ 0x7e57ULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TherapistTurn> turns;
  if (task == TaskKind::kConversation) {
    // Interjections in the three longest interior pauses.
    std::vector<std::pair<std::size_t, std::size_t>> pauses;  // (length, start)
    const auto& lab = r.truth.sample_labels;
    std::size_t i = 0;
    while (i < lab.size()) {
      std::size_t j = i;
      while (j < lab.size() && lab[j] == lab[i]) ++j;
      if (lab[i] == GroundTruth::kSilence && i > 0 && j < lab.size()) pauses.emplace_back(j - i, i);
      i = j;
    }
    std::sort(pauses.begin(), pauses.end(), std::greater<>());
    pauses.resize(std::min<std::size_t>(pauses.size(), 3));
    std::sort(pauses.begin(), pauses.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [len, start] : pauses) {
      const double dur = 1.0 + u(rng);
      const std::size_t at = start + len / 2;
      insert_gap(r.clip, r.truth, at, dur + 0.8, rng);
      turns.push_back({static_cast<double>(at) / r.clip.sample_rate + 0.4, dur});
    }
    // Later insertions shift nothing before them, but earlier ones shift later turns.
    std::sort(turns.begin(), turns.end(), [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
    double shift = 0;
    for (auto& t : turns) {
      t.start_s += shift;
      shift += t.duration_s + 0.8;
    }
  }
  const double lead = 1.5 + u(rng);
  insert_gap(r.clip, r.truth, 0, lead + 0.8, rng);
  for (auto& t : turns) t.start_s += lead + 0.8;
  turns.insert(turns.begin(), TherapistTurn{0.3, lead});
  inject_therapist(r.clip, r.truth, therapist, turns, mix64(seed ^ 0x7a1cULL));
  return r;
}

struct GeneratedCorpus {
  CorpusManifest patients;
  CorpusManifest control;
};

inline std::vector<std::string> patient_ids(int n) {
  std::vector<std::string> ids;
  char buf[16];
  for (int i = 1; i <= n; ++i) {
    std::snprintf(buf, sizeof buf, "P%03d", i);
    ids.emplace_back(buf);
  }
  return ids;
}

inline nlohmann::json corpus_spec_json(const CorpusSpec& s) {
  const auto& sh = s.effect.shape;
  return {{"speakers", s.speakers},
          {"control_speakers", s.control_speakers},
          {"delta", s.effect.delta},
          {"snr_db", s.snr_db},
          {"seed", s.seed},
          {"hard_therapist", s.hard_therapist},
          {"therapist_turns", s.therapist_turns},
          {"off_shape",
           {{"f0_range_compression", sh.f0_range_compression},
            {"intensity_drop_db", sh.intensity_drop_db},
            {"loudness_range_compression", sh.loudness_range_compression},
            {"jitter_increase", sh.jitter_increase},
            {"shimmer_increase", sh.shimmer_increase},
            {"pause_lengthening", sh.pause_lengthening},
            {"rate_slowing", sh.rate_slowing},
            {"vowel_centralization", sh.vowel_centralization},
            {"breathiness", sh.breathiness}}}};
}

inline GeneratedCorpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir, int jobs = 1) {
  namespace fs = std::filesystem;
  require(spec.speakers >= 1 && spec.control_speakers >= 0, ErrorKind::kInvalidArgument, "bad corpus size");
  std::error_code ec;
  fs::create_directories(out_dir / "audio", ec);
  fs::create_directories(out_dir / "truth", ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + out_dir.string() + ": " + ec.message());

  const SpeakerProfile therapist = make_therapist_profile(spec.hard_therapist);
  struct Job {
    SpeakerProfile speaker;
    TaskKind task;
    MedState state;
    bool control;
  };
  std::vector<Job> work;
  for (const auto& id : patient_ids(spec.speakers)) {
    const auto prof = make_patient_profile(id, derive_seed(spec.seed, "speaker", id));
    for (TaskKind t : kAllTasks)
      for (MedState s : {MedState::kOn, MedState::kOff}) work.push_back({prof, t, s, false});
  }
  for (int i = 1; i <= spec.control_speakers; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "C%03d", i);
    const auto prof = make_patient_profile(buf, derive_seed(spec.seed, "control", buf));
    for (TaskKind t : kAllTasks) work.push_back({prof, t, MedState::kUnknown, true});
  }

  std::vector<ManifestEntry> entries(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    const Job& j = work[i];
    const std::string stem = recording_stem(j.speaker.speaker_id, j.task, j.state);
    const auto r = synth_session_recording(j.speaker, therapist, j.state, j.task, spec, derive_seed(spec.seed, "recording", stem));
    write_wav(out_dir / "audio" / (stem + ".wav"), r.clip);
    write_segments(out_dir / "truth" / (stem + ".seg"), truth_segments(r.truth));
    entries[i] = {fs::path("audio") / (stem + ".wav"), j.speaker.speaker_id, j.task, j.state, fs::path("truth") / (stem + ".seg")};
  });

  GeneratedCorpus g;
  g.patients.root = g.control.root = out_dir;
  for (std::size_t i = 0; i < work.size(); ++i) (work[i].control ? g.control : g.patients).entries.push_back(entries[i]);
  write_manifest(out_dir / "manifest.csv", g.patients);
  write_manifest(out_dir / "control.csv", g.control);
  std::ofstream(out_dir / "generation.json") << corpus_spec_json(spec).dump(2) << "\n";
  return g;
}

}  // namespace medstate
