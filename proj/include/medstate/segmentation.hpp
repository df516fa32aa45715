#pragma once

// Speech/non-speech segmentation: a per-recording two-component Gaussian
// model of frame log-energy drives a hysteresis state machine with minimum
// segment durations.

#include "medstate/signalio.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

namespace medstate {

inline constexpr double kBiGaussianVarianceFloor = 1e-4;

// Component 1 is speech (higher mean), component 0 non-speech.
struct BiGaussian {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<double, 2> means{0.0, 1.0};
  std::array<double, 2> variances{1.0, 1.0};

  static constexpr int kNonSpeech = 0;
  static constexpr int kSpeech = 1;
};

struct BiGaussianFit {
  BiGaussian model;
  std::vector<double> loglik_trace;  // average log-likelihood after each E-step
  int iterations = 0;
};

namespace detail {

inline double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

inline double log_add(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

struct BiGaussianOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;
  double variance_floor = kBiGaussianVarianceFloor;
  bool swap_initialization = false;  // start with the component order reversed
};

inline BiGaussianFit fit_bigaussian_traced(std::span<const double> x, std::uint64_t seed,
                                           const BiGaussianOptions& opt = {}) {
  require(x.size() >= 20, ErrorKind::kTooShort, "bi-Gaussian fit needs at least 20 frames");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  require(*mx > *mn, ErrorKind::kDegenerate, "unsegmentable: all log-energies are identical");

  std::vector<double> v(x.begin(), x.end());
  double lo = detail::percentile(v, 0.25), hi = detail::percentile(v, 0.75);
  if (hi <= lo) {
    // Heavily tied data: spread the starting means with a seeded nudge.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    lo = *mn + 0.25 * u(rng) * (*mx - *mn);
    hi = *mx - 0.25 * u(rng) * (*mx - *mn);
  }
  double mean = 0, var = 0;
  for (double d : v) mean += d;
  mean /= static_cast<double>(v.size());
  for (double d : v) var += (d - mean) * (d - mean);
  var = std::max(var / static_cast<double>(v.size()) / 2.0, opt.variance_floor);

  BiGaussianFit fit;
  BiGaussian& g = fit.model;
  g.means = opt.swap_initialization ? std::array<double, 2>{hi, lo} : std::array<double, 2>{lo, hi};
  g.variances = {var, var};
  g.weights = {0.5, 0.5};

  const double n = static_cast<double>(x.size());
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iterations; ++it) {
    std::array<double, 2> s0{0, 0}, s1{0, 0}, s2{0, 0};
    double ll = 0;
    for (double d : x) {
      const double a = std::log(g.weights[0]) + detail::log_normal(d, g.means[0], g.variances[0]);
      const double b = std::log(g.weights[1]) + detail::log_normal(d, g.means[1], g.variances[1]);
      const double tot = detail::log_add(a, b);
      ll += tot;
      const double p1 = std::exp(b - tot), p0 = 1.0 - p1;
      s0[0] += p0; s1[0] += p0 * d; s2[0] += p0 * d * d;
      s0[1] += p1; s1[1] += p1 * d; s2[1] += p1 * d * d;
    }
    ll /= n;
    fit.loglik_trace.push_back(ll);
    fit.iterations = it + 1;
    for (int k = 0; k < 2; ++k) {
      const double cnt = std::max(s0[k], 1e-10);
      g.weights[k] = std::clamp(s0[k] / n, 1e-10, 1.0 - 1e-10);
      g.means[k] = s1[k] / cnt;
      g.variances[k] = std::max(s2[k] / cnt - g.means[k] * g.means[k], opt.variance_floor);
    }
    const double wsum = g.weights[0] + g.weights[1];
    g.weights[0] /= wsum;
    g.weights[1] = 1.0 - g.weights[0];
    if (std::abs(ll - prev) < opt.tolerance) break;
    prev = ll;
  }
  if (g.means[0] > g.means[1]) {
    std::swap(g.means[0], g.means[1]);
    std::swap(g.variances[0], g.variances[1]);
    std::swap(g.weights[0], g.weights[1]);
  }
  return fit;
}

inline BiGaussian fit_bigaussian(std::span<const double> x, std::uint64_t seed) {
  return fit_bigaussian_traced(x, seed).model;
}

inline double frame_speech_posterior(const BiGaussian& g, double log_energy) {
  const double a = std::log(g.weights[0]) + detail::log_normal(log_energy, g.means[0], g.variances[0]);
  const double b = std::log(g.weights[1]) + detail::log_normal(log_energy, g.means[1], g.variances[1]);
  return std::exp(b - detail::log_add(a, b));
}

struct SnsFsmParams {
  double enter_speech_posterior = 0.7;
  double exit_speech_posterior = 0.3;
  double min_speech_ms = 100.0;
  double min_pause_ms = 200.0;
};

enum class SnsLabel { kSpeech, kNonSpeech };
enum class SpeakerLabel { kPatient, kTherapist, kUnassigned };

inline constexpr std::string_view sns_name(SnsLabel l) { return l == SnsLabel::kSpeech ? "SPEECH" : "NON_SPEECH"; }
inline constexpr std::string_view speaker_name(SpeakerLabel l) {
  switch (l) {
    case SpeakerLabel::kPatient: return "PATIENT";
    case SpeakerLabel::kTherapist: return "THERAPIST";
    case SpeakerLabel::kUnassigned: return "UNASSIGNED";
  }
  return "?";
}

// Frames [start, end), end exclusive.
struct Segment {
  std::int64_t start = 0;
  std::int64_t end = 0;
  SnsLabel sns = SnsLabel::kNonSpeech;
  SpeakerLabel speaker = SpeakerLabel::kUnassigned;

  std::int64_t length() const { return end - start; }
  bool same_label(const Segment& o) const { return sns == o.sns && speaker == o.speaker; }
  bool operator==(const Segment&) const = default;
};

struct SegmentList {
  std::vector<Segment> segments;
  double frame_period_ms = 10.0;

  std::int64_t num_frames() const { return segments.empty() ? 0 : segments.back().end; }

  // Label of the frame; the list must cover t.
  const Segment& at(std::int64_t t) const {
    auto it = std::upper_bound(segments.begin(), segments.end(), t,
                               [](std::int64_t v, const Segment& s) { return v < s.end; });
    require(it != segments.end(), ErrorKind::kInvalidArgument, "frame outside segment list");
    return *it;
  }
};

// Contiguous, non-overlapping, starting at 0, adjacent segments with different labels.
inline bool is_partition(const SegmentList& sl, std::int64_t num_frames) {
  if (sl.segments.empty()) return num_frames == 0;
  if (sl.segments.front().start != 0 || sl.segments.back().end != num_frames) return false;
  for (std::size_t i = 0; i < sl.segments.size(); ++i) {
    if (sl.segments[i].length() <= 0) return false;
    if (i > 0 && (sl.segments[i].start != sl.segments[i - 1].end || sl.segments[i].same_label(sl.segments[i - 1])))
      return false;
  }
  return true;
}

// Collapse neighbours that share a label.
inline void coalesce(std::vector<Segment>& segs) {
  std::vector<Segment> out;
  for (const auto& s : segs) {
    if (!out.empty() && out.back().same_label(s))
      out.back().end = s.end;
    else
      out.push_back(s);
  }
  segs = std::move(out);
}

inline SegmentList segments_from_mask(std::span<const SnsLabel> sns, std::span<const SpeakerLabel> spk,
                                      double frame_period_ms = 10.0) {
  SegmentList sl;
  sl.frame_period_ms = frame_period_ms;
  for (std::size_t t = 0; t < sns.size(); ++t) {
    Segment s{static_cast<std::int64_t>(t), static_cast<std::int64_t>(t) + 1, sns[t],
              spk.empty() ? SpeakerLabel::kUnassigned : spk[t]};
    sl.segments.push_back(s);
  }
  coalesce(sl.segments);
  return sl;
}

inline SegmentList sns_fsm(std::span<const double> posteriors, const SnsFsmParams& p, double frame_period_ms = 10.0) {
  require(!posteriors.empty(), ErrorKind::kInvalidArgument, "empty posterior sequence");
  require(p.enter_speech_posterior >= p.exit_speech_posterior, ErrorKind::kInvalidArgument,
          "enter threshold must not be below exit threshold");
  std::vector<SnsLabel> state(posteriors.size());
  SnsLabel cur = SnsLabel::kNonSpeech;
  for (std::size_t t = 0; t < posteriors.size(); ++t) {
    if (cur == SnsLabel::kNonSpeech && posteriors[t] >= p.enter_speech_posterior)
      cur = SnsLabel::kSpeech;
    else if (cur == SnsLabel::kSpeech && posteriors[t] <= p.exit_speech_posterior)
      cur = SnsLabel::kNonSpeech;
    state[t] = cur;
  }
  SegmentList sl = segments_from_mask(state, {}, frame_period_ms);

  const auto min_frames = [&](SnsLabel l) {
    const double ms = l == SnsLabel::kSpeech ? p.min_speech_ms : p.min_pause_ms;
    return static_cast<std::int64_t>(std::ceil(ms / frame_period_ms - 1e-9));
  };
  // Repeatedly absorb the shortest too-short segment (earliest on ties) into
  // its longer neighbour (the preceding one on ties).
  auto& segs = sl.segments;
  while (segs.size() > 1) {
    std::size_t victim = segs.size();
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (segs[i].length() >= min_frames(segs[i].sns)) continue;
      if (victim == segs.size() || segs[i].length() < segs[victim].length()) victim = i;
    }
    if (victim == segs.size()) break;
    std::size_t target;
    if (victim == 0)
      target = 1;
    else if (victim + 1 == segs.size())
      target = victim - 1;
    else
      target = segs[victim + 1].length() > segs[victim - 1].length() ? victim + 1 : victim - 1;
    segs[victim].sns = segs[target].sns;
    segs[victim].speaker = segs[target].speaker;
    coalesce(segs);
  }
  return sl;
}

struct SegmentationResult {
  SegmentList segments;
  BiGaussian model;
  std::vector<double> log_energies;
};

inline SegmentationResult segment_recording_detailed(const AudioClip& clip, const SnsFsmParams& params,
                                                     std::uint64_t seed, double frame_ms = 25.0,
                                                     double shift_ms = 10.0) {
  require(clip.duration_s() >= 1.0, ErrorKind::kTooShort, "segmentation needs at least 1 s of audio");
  const FrameSet fs = frame_signal(clip, frame_ms, shift_ms);
  SegmentationResult r;
  r.log_energies = frame_log_energies(fs);
  try {
    r.model = fit_bigaussian(r.log_energies, seed);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kDegenerate) fail(ErrorKind::kDegenerate, std::string("unsegmentable recording: ") + e.what());
    throw;
  }
  std::vector<double> post(r.log_energies.size());
  for (std::size_t t = 0; t < post.size(); ++t) post[t] = frame_speech_posterior(r.model, r.log_energies[t]);
  r.segments = sns_fsm(post, params, shift_ms);
  return r;
}

inline SegmentList segment_recording(const AudioClip& clip, const SnsFsmParams& params, std::uint64_t seed) {
  return segment_recording_detailed(clip, params, seed).segments;
}

// Text format: start_s \t end_s \t SNS_label \t speaker_label, seconds with 3 decimals.
inline std::string format_segments(const SegmentList& sl) {
  std::string out;
  char line[128];
  const double p = sl.frame_period_ms / 1000.0;
  for (const auto& s : sl.segments) {
    std::snprintf(line, sizeof line, "%.3f\t%.3f\t%s\t%s\n", static_cast<double>(s.start) * p, static_cast<double>(s.end) * p,
                  std::string(sns_name(s.sns)).c_str(), std::string(speaker_name(s.speaker)).c_str());
    out += line;
  }
  return out;
}

inline SegmentList parse_segments(std::istream& in, double frame_period_ms = 10.0) {
  SegmentList sl;
  sl.frame_period_ms = frame_period_ms;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double a = 0, b = 0;
    std::string sns, spk;
    if (!(ls >> a >> b >> sns >> spk)) fail(ErrorKind::kFormat, "bad segment line " + std::to_string(lineno));
    Segment s;
    s.start = std::llround(a * 1000.0 / frame_period_ms);
    s.end = std::llround(b * 1000.0 / frame_period_ms);
    if (sns == "SPEECH") s.sns = SnsLabel::kSpeech;
    else if (sns == "NON_SPEECH") s.sns = SnsLabel::kNonSpeech;
    else fail(ErrorKind::kFormat, "bad SNS label '" + sns + "'");
    if (spk == "PATIENT") s.speaker = SpeakerLabel::kPatient;
    else if (spk == "THERAPIST") s.speaker = SpeakerLabel::kTherapist;
    else if (spk == "UNASSIGNED") s.speaker = SpeakerLabel::kUnassigned;
    else fail(ErrorKind::kFormat, "bad speaker label '" + spk + "'");
    sl.segments.push_back(s);
  }
  require(is_partition(sl, sl.num_frames()), ErrorKind::kFormat, "segment file does not partition the frame axis");
  return sl;
}

inline void write_segments(const std::filesystem::path& path, const SegmentList& sl) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << format_segments(sl);
}

inline SegmentList read_segments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return parse_segments(in);
}

}  // namespace medstate
