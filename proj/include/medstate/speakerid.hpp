#pragma once

// GMM-UBM speaker modelling: diagonal-covariance EM with binary splitting,
// means-only MAP adaptation, and length-normalized log-likelihood-ratio
// scoring used to separate therapist turns from patient speech.

#include "medstate/features.hpp"
#include "medstate/parallel.hpp"
#include "medstate/segmentation.hpp"

#include <iomanip>
#include <limits>

namespace medstate {

inline constexpr double kGmmVarianceFloor = 1e-4;

struct GmmModel {
  Vector weights;    // K
  Matrix means;      // K x D
  Matrix variances;  // K x D
  FeatureKind feature_kind = FeatureKind::kMfcc26;

  Eigen::Index num_components() const { return weights.size(); }
  Eigen::Index dim() const { return means.cols(); }
};

namespace detail {

// Per-frame, per-component log(w_k N(x | m_k, diag v_k)); frames x K.
inline Matrix component_loglik(const GmmModel& g, const Matrix& x) {
  const Eigen::Index k = g.num_components();
  const Matrix inv = g.variances.cwiseInverse();
  Vector constant(k);
  for (Eigen::Index c = 0; c < k; ++c)
    constant(c) = std::log(g.weights(c)) -
                  0.5 * (g.variances.row(c).array().log().sum() + static_cast<double>(g.dim()) * std::log(2.0 * std::numbers::pi)) -
                  0.5 * (g.means.row(c).array().square() * inv.row(c).array()).sum();
  const Matrix sq = x.array().square();
  Matrix out = -0.5 * sq * inv.transpose() + x * (g.means.cwiseProduct(inv)).transpose();
  out.rowwise() += constant.transpose();
  return out;
}

inline Vector row_logsumexp(const Matrix& m) {
  Vector out(m.rows());
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    const double mx = m.row(t).maxCoeff();
    out(t) = mx + std::log((m.row(t).array() - mx).exp().sum());
  }
  return out;
}

inline void check_frames(const GmmModel& g, const Matrix& x) {
  require(x.rows() > 0, ErrorKind::kTooShort, "no frames to score");
  require(x.cols() == g.dim(), ErrorKind::kDimensionMismatch,
          "GMM dim " + std::to_string(g.dim()) + " vs features " + std::to_string(x.cols()));
}

struct EmStats {
  Vector n;   // K
  Matrix f;   // K x D, first order
  Matrix s;   // K x D, second order
  double loglik = 0;

  void add(const EmStats& o) {
    n += o.n;
    f += o.f;
    s += o.s;
    loglik += o.loglik;
  }
};

inline constexpr Eigen::Index kEmChunk = 2048;

// Sufficient statistics accumulated in fixed-size chunks and reduced in chunk
// order, so the result does not depend on the worker count.
inline EmStats accumulate(const GmmModel& g, const Matrix& x, int jobs) {
  const Eigen::Index k = g.num_components(), d = g.dim();
  const std::size_t chunks = static_cast<std::size_t>((x.rows() + kEmChunk - 1) / kEmChunk);
  std::vector<EmStats> partial(chunks);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kEmChunk;
    const Eigen::Index len = std::min(kEmChunk, x.rows() - begin);
    const Matrix block = x.middleRows(begin, len);
    Matrix ll = component_loglik(g, block);
    const Vector tot = row_logsumexp(ll);
    Matrix post = (ll.colwise() - tot).array().exp();
    EmStats st;
    st.n = post.colwise().sum().transpose();
    st.f = post.transpose() * block;
    st.s = post.transpose() * block.array().square().matrix();
    st.loglik = tot.sum();
    partial[c] = std::move(st);
  });
  EmStats total{Vector::Zero(k), Matrix::Zero(k, d), Matrix::Zero(k, d), 0.0};
  for (const auto& p : partial) total.add(p);
  return total;
}

inline void maximize(GmmModel& g, const EmStats& st, double frames, double floor) {
  for (Eigen::Index c = 0; c < g.num_components(); ++c) {
    if (st.n(c) < 1e-8) continue;  // starved component keeps its parameters
    g.means.row(c) = st.f.row(c) / st.n(c);
    g.variances.row(c) = (st.s.row(c) / st.n(c) - g.means.row(c).cwiseProduct(g.means.row(c))).cwiseMax(floor);
    g.weights(c) = st.n(c) / frames;
  }
  g.weights = g.weights.cwiseMax(1e-10);
  g.weights /= g.weights.sum();
}

}  // namespace detail

inline Vector gmm_frame_loglik(const GmmModel& g, const Matrix& x) {
  detail::check_frames(g, x);
  return detail::row_logsumexp(detail::component_loglik(g, x));
}

inline double gmm_avg_loglik(const GmmModel& g, const Matrix& x) {
  return gmm_frame_loglik(g, x).mean();
}

inline double gmm_avg_loglik(const GmmModel& g, const FeatureMatrix& f) { return gmm_avg_loglik(g, f.values); }

struct UbmOptions {
  int split_iterations = 10;
  int final_iterations = 100;
  double tolerance = 1e-5;
  double variance_floor = kGmmVarianceFloor;
  double split_offset = 0.2;  // in standard deviations
  int jobs = 1;
};

struct UbmFit {
  GmmModel model;
  std::vector<double> final_trace;  // avg log-lik per final-stage E-step
};

inline UbmFit train_ubm_traced(const FeatureMatrix& frames, int num_components, std::uint64_t seed,
                               const UbmOptions& opt = {}) {
  const Matrix& x = frames.values;
  require(num_components >= 1 && (num_components & (num_components - 1)) == 0, ErrorKind::kInvalidArgument,
          "UBM component count must be a power of two");
  require(x.rows() >= 2 * num_components, ErrorKind::kTooShort, "insufficient data for UBM training");
  require(x.allFinite(), ErrorKind::kInvalidArgument, "non-finite features");
  const double n = static_cast<double>(x.rows());

  UbmFit fit;
  GmmModel& g = fit.model;
  g.feature_kind = frames.kind;
  g.weights = Vector::Ones(1);
  g.means = x.colwise().mean();
  g.variances = ((x.array().square().colwise().sum() / n).matrix() - g.means.cwiseProduct(g.means))
                    .cwiseMax(opt.variance_floor);

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  while (g.num_components() < num_components) {
    const Eigen::Index k = g.num_components(), d = g.dim();
    GmmModel next;
    next.feature_kind = g.feature_kind;
    next.weights.resize(2 * k);
    next.means.resize(2 * k, d);
    next.variances.resize(2 * k, d);
    for (Eigen::Index c = 0; c < k; ++c) {
      // Split along a seeded +/-1 direction scaled by the component spread.
      RowVector dir(d);
      for (Eigen::Index j = 0; j < d; ++j) dir(j) = coin(rng) ? 1.0 : -1.0;
      const RowVector off = opt.split_offset * dir.cwiseProduct(g.variances.row(c).cwiseSqrt());
      next.means.row(2 * c) = g.means.row(c) + off;
      next.means.row(2 * c + 1) = g.means.row(c) - off;
      next.variances.row(2 * c) = g.variances.row(c);
      next.variances.row(2 * c + 1) = g.variances.row(c);
      next.weights(2 * c) = next.weights(2 * c + 1) = g.weights(c) / 2.0;
    }
    g = std::move(next);
    const bool last = g.num_components() == num_components;
    const int iters = last ? opt.final_iterations : opt.split_iterations;
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < iters; ++it) {
      const auto st = detail::accumulate(g, x, opt.jobs);
      const double ll = st.loglik / n;
      if (last) fit.final_trace.push_back(ll);
      if (last && std::abs(ll - prev) < opt.tolerance) break;
      prev = ll;
      detail::maximize(g, st, n, opt.variance_floor);
    }
  }
  if (num_components == 1) {
    fit.final_trace.push_back(gmm_avg_loglik(g, x));
  }
  return fit;
}

inline GmmModel train_ubm(const FeatureMatrix& frames, int num_components, std::uint64_t seed, const UbmOptions& opt = {}) {
  return train_ubm_traced(frames, num_components, seed, opt).model;
}

struct MapConfig {
  double relevance_factor = 16.0;
};

inline GmmModel map_adapt(const GmmModel& ubm, const FeatureMatrix& enrolment, const MapConfig& cfg = {}) {
  require(cfg.relevance_factor > 0, ErrorKind::kInvalidArgument, "relevance factor must be positive");
  detail::check_frames(ubm, enrolment.values);
  const auto st = detail::accumulate(ubm, enrolment.values, 1);
  GmmModel out = ubm;
  for (Eigen::Index c = 0; c < ubm.num_components(); ++c)
    out.means.row(c) = (st.f.row(c) + cfg.relevance_factor * ubm.means.row(c)) / (st.n(c) + cfg.relevance_factor);
  return out;
}

enum class SpeakerVerdict { kPatient, kTherapist };

struct LlrDecision {
  double llr = 0;
  double threshold = 0;
  SpeakerVerdict verdict = SpeakerVerdict::kPatient;
};

inline LlrDecision score_segment(const GmmModel& ubm, const GmmModel& therapist, const Matrix& frames, double threshold) {
  require(ubm.dim() == therapist.dim() && ubm.feature_kind == therapist.feature_kind, ErrorKind::kDimensionMismatch,
          "UBM and therapist model are incompatible");
  require(frames.rows() > 0, ErrorKind::kTooShort, "empty segment");
  LlrDecision d;
  d.llr = gmm_avg_loglik(therapist, frames) - gmm_avg_loglik(ubm, frames);
  d.threshold = threshold;
  d.verdict = d.llr > threshold ? SpeakerVerdict::kTherapist : SpeakerVerdict::kPatient;
  return d;
}

inline LlrDecision score_segment(const GmmModel& ubm, const GmmModel& therapist, const FeatureMatrix& frames,
                                 double threshold) {
  return score_segment(ubm, therapist, frames.values, threshold);
}

struct ScoredSegment {
  double llr = 0;
  bool therapist = false;
  double weight = 1.0;  // e.g. frame count; rates are weight-based
};

struct Calibration {
  double threshold = 0;
  double insertion_rate = 0;  // therapist mass kept as patient
  double deletion_rate = 0;   // patient mass removed as therapist
};

inline constexpr double kCalibrationMargin = 1e-6;

inline Calibration evaluate_threshold(std::span<const ScoredSegment> scores, double threshold) {
  double th = 0, th_miss = 0, pt = 0, pt_del = 0;
  for (const auto& s : scores) {
    const bool flagged = s.llr > threshold;
    if (s.therapist) {
      th += s.weight;
      if (!flagged) th_miss += s.weight;
    } else {
      pt += s.weight;
      if (flagged) pt_del += s.weight;
    }
  }
  return {threshold, th > 0 ? th_miss / th : 0.0, pt > 0 ? pt_del / pt : 0.0};
}

// Threshold sweep over observed scores (plus one candidate below all of them):
// minimize insertions, then deletions, then prefer the lower threshold.
inline Calibration calibrate_threshold(std::span<const ScoredSegment> scores) {
  require(!scores.empty(), ErrorKind::kInvalidArgument, "no calibration segments");
  require(std::any_of(scores.begin(), scores.end(), [](const auto& s) { return s.therapist; }),
          ErrorKind::kInvalidArgument, "calibration needs therapist segments");
  std::vector<double> candidates;
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& s : scores) {
    candidates.push_back(s.llr);
    lowest = std::min(lowest, s.llr);
  }
  candidates.push_back(lowest - kCalibrationMargin);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  Calibration best = evaluate_threshold(scores, candidates.front());
  for (double c : candidates) {
    const auto e = evaluate_threshold(scores, c);
    if (e.insertion_rate < best.insertion_rate ||
        (e.insertion_rate == best.insertion_rate && e.deletion_rate < best.deletion_rate))
      best = e;
  }
  return best;
}

inline Calibration calibrate_threshold(std::span<const std::pair<FeatureMatrix, SpeakerLabel>> control,
                                       const GmmModel& ubm, const GmmModel& therapist) {
  std::vector<ScoredSegment> scores;
  for (const auto& [feat, label] : control) {
    require(label != SpeakerLabel::kUnassigned, ErrorKind::kInvalidArgument, "control segment without speaker label");
    scores.push_back({score_segment(ubm, therapist, feat, 0.0).llr, label == SpeakerLabel::kTherapist,
                      static_cast<double>(feat.num_frames())});
  }
  return calibrate_threshold(scores);
}

// Assign PATIENT/THERAPIST to every SPEECH segment. `frames` holds the whole
// recording's features on the segment frame grid.
inline SegmentList filter_therapist(const SegmentList& segments, const Matrix& frames, const GmmModel& ubm,
                                    const GmmModel& therapist, double threshold) {
  SegmentList out = segments;
  for (auto& s : out.segments) {
    if (s.sns != SnsLabel::kSpeech) {
      s.speaker = SpeakerLabel::kUnassigned;
      continue;
    }
    const std::int64_t end = std::min<std::int64_t>(s.end, frames.rows());
    if (end <= s.start) {
      s.speaker = SpeakerLabel::kPatient;
      continue;
    }
    const auto d = score_segment(ubm, therapist, frames.middleRows(s.start, end - s.start), threshold);
    s.speaker = d.verdict == SpeakerVerdict::kTherapist ? SpeakerLabel::kTherapist : SpeakerLabel::kPatient;
  }
  coalesce(out.segments);
  return out;
}

inline std::string serialize_gmm(const GmmModel& g) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "medstate-gmm 1\n";
  os << "kind " << feature_kind_name(g.feature_kind) << "\n";
  os << "components " << g.num_components() << "\n";
  os << "dim " << g.dim() << "\n";
  os << "weights";
  for (Eigen::Index c = 0; c < g.num_components(); ++c) os << ' ' << g.weights(c);
  os << "\n";
  for (Eigen::Index c = 0; c < g.num_components(); ++c) {
    os << "mean";
    for (Eigen::Index j = 0; j < g.dim(); ++j) os << ' ' << g.means(c, j);
    os << "\nvar";
    for (Eigen::Index j = 0; j < g.dim(); ++j) os << ' ' << g.variances(c, j);
    os << "\n";
  }
  return os.str();
}

inline GmmModel parse_gmm(std::istream& in) {
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(in >> k) || k != key) fail(ErrorKind::kFormat, "GMM file: expected '" + key + "'");
  };
  std::string magic;
  int version = 0;
  in >> magic >> version;
  require(magic == "medstate-gmm" && version == 1, ErrorKind::kFormat, "not a version-1 GMM file");
  std::string kind;
  Eigen::Index k = 0, d = 0;
  expect("kind");
  in >> kind;
  expect("components");
  in >> k;
  expect("dim");
  in >> d;
  require(in && k > 0 && d > 0, ErrorKind::kFormat, "GMM file: bad header");
  GmmModel g;
  g.feature_kind = parse_feature_kind(kind);
  g.weights.resize(k);
  g.means.resize(k, d);
  g.variances.resize(k, d);
  expect("weights");
  for (Eigen::Index c = 0; c < k; ++c) in >> g.weights(c);
  for (Eigen::Index c = 0; c < k; ++c) {
    expect("mean");
    for (Eigen::Index j = 0; j < d; ++j) in >> g.means(c, j);
    expect("var");
    for (Eigen::Index j = 0; j < d; ++j) in >> g.variances(c, j);
  }
  require(static_cast<bool>(in), ErrorKind::kFormat, "GMM file truncated");
  return g;
}

inline void save_gmm(const std::filesystem::path& path, const GmmModel& g) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << serialize_gmm(g);
}

inline GmmModel load_gmm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return parse_gmm(in);
}

}  // namespace medstate
