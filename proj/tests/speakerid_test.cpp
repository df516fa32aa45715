#include "medstate/speakerid.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <numbers>
#include <random>
#include <sstream>

namespace medstate {
namespace {

using testing::error_kind_of;
using testing::gaussian_matrix;

FeatureMatrix frames_of(Matrix m) {
  FeatureMatrix f;
  f.kind = FeatureKind::kMfcc26;
  f.values = std::move(m);
  return f;
}

// Clusters at +/- `sep` along every axis.
Matrix two_clusters(Eigen::Index n, Eigen::Index d, double sep, std::uint64_t seed) {
  Matrix x = gaussian_matrix(n, d, seed);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i).array() += (i % 2 ? sep : -sep);
  return x;
}

GmmModel random_gmm(Eigen::Index k, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  GmmModel g;
  g.weights = Vector(k);
  g.means = gaussian_matrix(k, d, seed + 1);
  g.variances = Matrix(k, d);
  for (Eigen::Index c = 0; c < k; ++c) {
    g.weights(c) = u(rng);
    for (Eigen::Index j = 0; j < d; ++j) g.variances(c, j) = u(rng);
  }
  g.weights /= g.weights.sum();
  return g;
}

TEST(Gmm, FrameLogLikelihoodMatchesDirectFormula) {
  const GmmModel g = random_gmm(4, 3, 2);
  const Matrix x = gaussian_matrix(20, 3, 5);
  const Vector ll = gmm_frame_loglik(g, x);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    double p = 0;
    for (Eigen::Index c = 0; c < 4; ++c) {
      double dens = g.weights(c);
      for (Eigen::Index j = 0; j < 3; ++j) {
        const double v = g.variances(c, j), z = x(t, j) - g.means(c, j);
        dens *= std::exp(-0.5 * z * z / v) / std::sqrt(2 * std::numbers::pi * v);
      }
      p += dens;
    }
    EXPECT_NEAR(ll(t), std::log(p), 1e-10);
  }
}

TEST(Gmm, DimensionAndEmptyChecks) {
  const GmmModel g = random_gmm(2, 3, 1);
  EXPECT_EQ(error_kind_of([&] { gmm_frame_loglik(g, Matrix::Zero(4, 2)); }), ErrorKind::kDimensionMismatch);
  EXPECT_EQ(error_kind_of([&] { gmm_frame_loglik(g, Matrix::Zero(0, 3)); }), ErrorKind::kTooShort);
}

TEST(Ubm, SingleComponentIsTheSampleMoments) {
  const Matrix x = gaussian_matrix(500, 4, 9, 2.0);
  const GmmModel g = train_ubm(frames_of(x), 1, 0);
  const RowVector mean = x.colwise().mean();
  const RowVector var = (x.rowwise() - mean).array().square().colwise().mean();
  EXPECT_TRUE(g.means.row(0).isApprox(mean, 1e-12));
  EXPECT_TRUE(g.variances.row(0).isApprox(var, 1e-10));
  EXPECT_DOUBLE_EQ(g.weights(0), 1.0);
}

TEST(Ubm, FinalStageLikelihoodIsMonotone) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fit = train_ubm_traced(frames_of(two_clusters(3000, 5, 2.0, seed)), 8, seed);
    ASSERT_GE(fit.final_trace.size(), 2u);
    for (std::size_t i = 1; i < fit.final_trace.size(); ++i) EXPECT_GE(fit.final_trace[i], fit.final_trace[i - 1] - 1e-9);
    EXPECT_NEAR(fit.model.weights.sum(), 1.0, 1e-12);
    EXPECT_GE(fit.model.variances.minCoeff(), UbmOptions{}.variance_floor);
  }
}

TEST(Ubm, ResultDoesNotDependOnThreadCount) {
  const auto x = frames_of(two_clusters(9000, 6, 1.5, 3));
  UbmOptions one, four;
  four.jobs = 4;
  const GmmModel a = train_ubm(x, 8, 11, one), b = train_ubm(x, 8, 11, four);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.variances, b.variances);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Ubm, SeparatesTwoClusters) {
  const GmmModel g = train_ubm(frames_of(two_clusters(4000, 3, 3.0, 4)), 2, 1);
  const double m0 = g.means.row(0).mean(), m1 = g.means.row(1).mean();
  EXPECT_NEAR(std::min(m0, m1), -3.0, 0.1);
  EXPECT_NEAR(std::max(m0, m1), 3.0, 0.1);
}

TEST(Ubm, RejectsBadComponentCountsAndTooLittleData) {
  const auto x = frames_of(gaussian_matrix(100, 2, 1));
  EXPECT_EQ(error_kind_of([&] { train_ubm(x, 3, 0); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(error_kind_of([&] { train_ubm(x, 64, 0); }), ErrorKind::kTooShort);
}

TEST(Map, RelevanceLimitsAndMidpoint) {
  const GmmModel ubm = random_gmm(1, 3, 7);
  const Matrix x = gaussian_matrix(50, 3, 8);
  const RowVector ml = x.colwise().mean();

  MapConfig huge{1e12};
  EXPECT_LT((map_adapt(ubm, frames_of(x), huge).means - ubm.means).cwiseAbs().maxCoeff(), 1e-6);
  MapConfig tiny{1e-12};
  EXPECT_LT((map_adapt(ubm, frames_of(x), tiny).means.row(0) - ml).cwiseAbs().maxCoeff(), 1e-6);
  // With one component every frame has posterior 1, so n = 50 and r = 50 is the midpoint.
  MapConfig mid{50.0};
  const GmmModel m = map_adapt(ubm, frames_of(x), mid);
  EXPECT_LT((m.means.row(0) - 0.5 * (ml + ubm.means.row(0))).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(m.variances, ubm.variances);
  EXPECT_EQ(m.weights, ubm.weights);
}

TEST(Map, OnlyMeansMoveAndDataPullsThem) {
  const Matrix x = two_clusters(2000, 4, 2.0, 1);
  const GmmModel ubm = train_ubm(frames_of(x), 4, 2);
  Matrix shifted = gaussian_matrix(300, 4, 5);
  shifted.array() += 2.0;
  const GmmModel adapted = map_adapt(ubm, frames_of(shifted));
  EXPECT_EQ(adapted.variances, ubm.variances);
  EXPECT_EQ(adapted.weights, ubm.weights);
  EXPECT_GT(gmm_avg_loglik(adapted, shifted), gmm_avg_loglik(ubm, shifted));
}

TEST(Llr, TargetFramesScoreAboveThreshold) {
  const Matrix world = two_clusters(4000, 4, 2.0, 2);
  const GmmModel ubm = train_ubm(frames_of(world), 4, 3);
  Matrix target = gaussian_matrix(400, 4, 9, 0.5);
  target.array() += 2.0;
  const GmmModel th = map_adapt(ubm, frames_of(target));
  Matrix other = gaussian_matrix(100, 4, 10, 0.5);
  other.array() -= 2.0;
  Matrix same = gaussian_matrix(100, 4, 11, 0.5);
  same.array() += 2.0;
  EXPECT_EQ(score_segment(ubm, th, same, 0.0).verdict, SpeakerVerdict::kTherapist);
  EXPECT_EQ(score_segment(ubm, th, other, 0.0).verdict, SpeakerVerdict::kPatient);
  const auto d = score_segment(ubm, th, same, 0.0);
  EXPECT_NEAR(d.llr, gmm_avg_loglik(th, same) - gmm_avg_loglik(ubm, same), 1e-12);
}

// Brute-force oracle: one threshold inside every gap between sorted scores.
TEST(Calibration, MatchesBruteForceSweep) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> th(1.0, 0.8), pt(-1.0, 0.8);
  std::uniform_real_distribution<double> w(10, 200);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ScoredSegment> s;
    for (int i = 0; i < 15; ++i) s.push_back({th(rng), true, std::round(w(rng))});
    for (int i = 0; i < 30; ++i) s.push_back({pt(rng), false, std::round(w(rng))});
    const Calibration c = calibrate_threshold(s);
    double best_ins = 2, best_del = 2;
    std::vector<double> sorted;
    for (const auto& x : s) sorted.push_back(x.llr);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> grid{sorted.front() - 1.0, sorted.back() + 1.0};
    for (std::size_t i = 1; i < sorted.size(); ++i) grid.push_back(0.5 * (sorted[i - 1] + sorted[i]));
    for (double t : grid) {
      const auto e = evaluate_threshold(s, t);
      if (e.insertion_rate < best_ins || (e.insertion_rate == best_ins && e.deletion_rate < best_del)) {
        best_ins = e.insertion_rate;
        best_del = e.deletion_rate;
      }
    }
    EXPECT_DOUBLE_EQ(c.insertion_rate, best_ins) << trial;
    EXPECT_DOUBLE_EQ(c.deletion_rate, best_del) << trial;
    EXPECT_EQ(c.insertion_rate, 0.0);
  }
}

TEST(Calibration, WeightsAreFrameCounts) {
  const std::vector<ScoredSegment> s{{2.0, true, 10}, {-1.0, false, 30}, {0.5, false, 10}};
  const auto e = evaluate_threshold(s, 0.0);
  EXPECT_DOUBLE_EQ(e.insertion_rate, 0.0);
  EXPECT_DOUBLE_EQ(e.deletion_rate, 10.0 / 40.0);
  EXPECT_EQ(error_kind_of([] { calibrate_threshold(std::vector<ScoredSegment>{{1.0, false, 1}}); }),
            ErrorKind::kInvalidArgument);
}

TEST(Filter, LabelsSpeechSegmentsOnly) {
  const Matrix world = two_clusters(4000, 3, 2.0, 6);
  const GmmModel ubm = train_ubm(frames_of(world), 4, 3);
  Matrix t = gaussian_matrix(300, 3, 7, 0.5);
  t.array() += 2.0;
  const GmmModel th = map_adapt(ubm, frames_of(t));
  Matrix rec(100, 3);
  rec.topRows(40) = gaussian_matrix(40, 3, 8, 0.5).array() - 2.0;
  rec.middleRows(40, 20) = gaussian_matrix(20, 3, 9);
  rec.bottomRows(40) = gaussian_matrix(40, 3, 10, 0.5).array() + 2.0;
  SegmentList sl;
  sl.segments = {{0, 40, SnsLabel::kSpeech, SpeakerLabel::kUnassigned},
                 {40, 60, SnsLabel::kNonSpeech, SpeakerLabel::kUnassigned},
                 {60, 100, SnsLabel::kSpeech, SpeakerLabel::kUnassigned}};
  const double llr_a = score_segment(ubm, th, rec.topRows(40), 0.0).llr;
  const double llr_b = score_segment(ubm, th, rec.bottomRows(40), 0.0).llr;
  ASSERT_GT(llr_b, llr_a);
  const auto out = filter_therapist(sl, rec, ubm, th, 0.5 * (llr_a + llr_b));
  ASSERT_EQ(out.segments.size(), 3u);
  EXPECT_EQ(out.segments[0].speaker, SpeakerLabel::kPatient);
  EXPECT_EQ(out.segments[1].speaker, SpeakerLabel::kUnassigned);
  EXPECT_EQ(out.segments[2].speaker, SpeakerLabel::kTherapist);
  EXPECT_TRUE(is_partition(out, 100));
}

TEST(GmmFile, RoundTripIsExact) {
  const GmmModel g = random_gmm(3, 5, 4);
  std::istringstream in(serialize_gmm(g));
  const GmmModel h = parse_gmm(in);
  EXPECT_EQ(h.means, g.means);
  EXPECT_EQ(h.variances, g.variances);
  EXPECT_EQ(h.weights, g.weights);
  EXPECT_EQ(h.feature_kind, g.feature_kind);
  std::istringstream bad("medstate-gmm 1\nkind mfcc26\ncomponents x\n");
  EXPECT_EQ(error_kind_of([&] { parse_gmm(bad); }), ErrorKind::kFormat);
}

}  // namespace
}  // namespace medstate
