#include "medstate/egemaps.hpp"
#include "test_util.hpp"

#include <numbers>
#include <random>

namespace medstate {
namespace {

// One 40-sample bump at the start of each cycle, made zero-mean within the
// cycle so the peak height scales exactly with the cycle amplitude.
std::vector<double> pulse_train(const std::vector<int>& periods, const std::vector<double>& amps, std::size_t length) {
  std::vector<double> x;
  std::size_t c = 0;
  while (x.size() < length) {
    const int p = periods[c % periods.size()];
    const double a = amps[c % amps.size()];
    std::vector<double> cyc(static_cast<std::size_t>(p), 0.0);
    double sum = 0;
    for (int i = 0; i < 40; ++i) sum += cyc[static_cast<std::size_t>(i)] = a * std::pow(std::sin(std::numbers::pi * i / 40), 4);
    for (double& v : cyc) v -= sum / p;
    x.insert(x.end(), cyc.begin(), cyc.end());
    ++c;
  }
  x.resize(length);
  return x;
}

TEST(Pitch, SineFrequencyRecovered) {
  for (double f0 : {90.0, 125.0, 180.0, 240.0}) {
    std::vector<double> x(960);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.3 * std::sin(2 * std::numbers::pi * f0 * static_cast<double>(i) / 16000);
    const auto pa = analyze_pitch(x, 16000);
    EXPECT_NEAR(pa.f0, f0, 0.01 * f0) << f0;
    EXPECT_GT(pa.periodicity, 0.95);
  }
}

TEST(Pitch, PeriodicPulsesHaveNoJitterOrShimmer) {
  const auto x = pulse_train({128}, {0.5}, 960);
  const auto pa = analyze_pitch(x, 16000);
  EXPECT_NEAR(pa.f0, 125.0, 0.5);
  EXPECT_NEAR(pa.jitter, 0.0, 1e-3);
  EXPECT_NEAR(pa.shimmer, 0.0, 1e-9);
}

TEST(Pitch, AlternatingCyclesGiveKnownShimmer) {
  // Amplitudes alternate 0.5 / 0.4: mean 0.45, consecutive difference 0.1.
  const auto x = pulse_train({128}, {0.5, 0.4}, 960);
  const auto pa = analyze_pitch(x, 16000);
  EXPECT_NEAR(pa.shimmer, 0.1 / 0.45, 0.02);
}

TEST(Pitch, AlternatingPeriodsGiveKnownJitter) {
  // Periods alternate 124 / 128 samples: mean 126, consecutive difference 4.
  const auto x = pulse_train({124, 128}, {0.5}, 960);
  const auto pa = analyze_pitch(x, 16000);
  ASSERT_GT(pa.f0, 0.0);
  EXPECT_NEAR(pa.jitter, 4.0 / 126.0, 0.005);
}

TEST(Pitch, NoiseAndSilenceAreUnvoiced) {
  std::vector<double> silence(960, 0.0);
  EXPECT_EQ(analyze_pitch(silence, 16000).f0, 0.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 0.2);
  std::vector<double> noise(960);
  for (auto& v : noise) v = nd(rng);
  EXPECT_EQ(analyze_pitch(noise, 16000).f0, 0.0);
}

TEST(Lpc, RecoversAllPoleCoefficients) {
  // Drive a known 2-pole filter with white noise; LPC of order 2 recovers it.
  const double r = 0.95, theta = 2 * std::numbers::pi * 700.0 / 16000.0;
  const double a1 = -2 * r * std::cos(theta), a2 = r * r;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> y(200000, 0.0);
  for (std::size_t n = 2; n < y.size(); ++n) y[n] = nd(rng) - a1 * y[n - 1] - a2 * y[n - 2];
  const auto a = detail::lpc(y, 2);
  EXPECT_NEAR(a[1], a1, 0.01);
  EXPECT_NEAR(a[2], a2, 0.01);
}

TEST(Formants, RootsOfKnownPolynomial) {
  // a(z) = prod_k (1 - 2 r_k cos t_k z^-1 + r_k^2 z^-2) with two resonances.
  const std::vector<std::pair<double, double>> want{{650.0, 80.0}, {1700.0, 120.0}};
  std::vector<double> a{1.0};
  for (const auto& [f, bw] : want) {
    const double r = std::exp(-std::numbers::pi * bw / 16000.0), t = 2 * std::numbers::pi * f / 16000.0;
    const std::vector<double> q{1.0, -2 * r * std::cos(t), r * r};
    std::vector<double> next(a.size() + 2, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < 3; ++j) next[i + j] += a[i] * q[j];
    a = next;
  }
  const auto fm = detail::formants(a, 16000);
  ASSERT_EQ(fm.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(fm[i].first, want[i].first, 1e-6);
    EXPECT_NEAR(fm[i].second, want[i].second, 1e-6);
  }
}

TEST(SpectralHelpers, SlopeOfExponentialSpectrum) {
  // Power falling 3 dB per 100 Hz.
  std::vector<double> pw(200);
  for (std::size_t k = 0; k < pw.size(); ++k) pw[k] = std::pow(10.0, -0.03 * static_cast<double>(k) * 10.0 / 10.0);
  EXPECT_NEAR(detail::spectral_slope(pw, 10.0, 0, 1500), -0.03, 1e-9);
}

TEST(Lld, ShapeAndColumnSelection) {
  AudioClip c;
  c.samples = pulse_train({128}, {0.3}, 16000);
  const auto f = egemaps_lld(c);
  EXPECT_EQ(f.dim(), 23);
  EXPECT_EQ(f.num_frames(), static_cast<Eigen::Index>(frame_count(16000, 960, 160)));
  EXPECT_EQ(f.kind, FeatureKind::kEgemaps);
  EXPECT_TRUE(f.values.allFinite());
  // Column 0 is log F0 in semitones re 27.5 Hz.
  EXPECT_NEAR(f.values(10, 0), 12.0 * std::log2(125.0 / 27.5), 0.1);

  EgemapsConfig all;
  all.columns = all_lld_columns();
  EXPECT_EQ(egemaps_lld(c, all).dim(), kNumLlds);
}

TEST(Lld, SilentFramesHaveZeroVoicingFeatures) {
  AudioClip c;
  c.samples.assign(8000, 0.0);
  const auto f = egemaps_lld(c);
  EXPECT_TRUE(f.values.col(0).isZero());
  EXPECT_EQ(testing::error_kind_of([] {
              AudioClip s;
              s.samples.assign(100, 0.0);
              egemaps_lld(s);
            }),
            ErrorKind::kTooShort);
}

}  // namespace
}  // namespace medstate
