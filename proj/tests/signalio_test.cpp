#include "medstate/signalio.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>

namespace medstate {
namespace {

using testing::TempDir;
using testing::error_kind_of;

AudioClip tone(double hz, double seconds, double amp = 0.5) {
  AudioClip c;
  c.samples.resize(static_cast<std::size_t>(seconds * kCanonicalRate));
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    c.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / kCanonicalRate);
  return c;
}

TEST(Wav, RoundTripWithinQuantization) {
  TempDir dir("wav");
  const AudioClip c = tone(440, 0.3);
  write_wav(dir / "t.wav", c);
  const AudioClip r = read_wav(dir / "t.wav");
  ASSERT_EQ(r.samples.size(), c.samples.size());
  EXPECT_EQ(r.sample_rate, kCanonicalRate);
  for (std::size_t i = 0; i < c.samples.size(); ++i) EXPECT_NEAR(r.samples[i], c.samples[i], 0.5 / 32768.0 + 1e-15);
}

TEST(Wav, EncodedHeaderFields) {
  AudioClip c;
  c.samples = {0.0, 0.5, -0.5, 1.0};
  const auto b = encode_wav(c);
  ASSERT_EQ(b.size(), 44u + 8u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "RIFF");
  EXPECT_EQ(std::string(b.begin() + 8, b.begin() + 12), "WAVE");
  EXPECT_EQ(detail::read_u32(b.data() + 24), 16000u);
  EXPECT_EQ(detail::read_u16(b.data() + 22), 1u);
  EXPECT_EQ(detail::read_u16(b.data() + 34), 16u);
  EXPECT_EQ(detail::read_u32(b.data() + 40), 8u);
}

TEST(Wav, FullScaleClipsToInt16Range) {
  EXPECT_EQ(to_pcm16(1.0), 32767);
  EXPECT_EQ(to_pcm16(-1.0), -32768);
  EXPECT_EQ(to_pcm16(2.0), 32767);
  EXPECT_EQ(to_pcm16(0.0), 0);
}

TEST(Wav, RejectsMalformedInput) {
  std::vector<unsigned char> junk{'R', 'I', 'F', 'F', 0, 0, 0, 0, 'J', 'U', 'N', 'K'};
  EXPECT_EQ(error_kind_of([&] { decode_wav(junk); }), ErrorKind::kFormat);
  auto b = encode_wav(tone(100, 0.01));
  b.resize(b.size() - 10);  // truncated data chunk
  EXPECT_EQ(error_kind_of([&] { decode_wav(b); }), ErrorKind::kFormat);
  EXPECT_EQ(error_kind_of([] { read_wav("/nonexistent/x.wav"); }), ErrorKind::kIo);
}

TEST(Wav, RejectsStereo) {
  auto b = encode_wav(tone(100, 0.01));
  b[22] = 2;
  EXPECT_EQ(error_kind_of([&] { decode_wav(b); }), ErrorKind::kFormat);
}

TEST(Clip, ValidateChecksRateAndRange) {
  AudioClip c = tone(200, 0.1);
  EXPECT_NO_THROW(validate_clip(c));
  c.sample_rate = 8000;
  EXPECT_EQ(error_kind_of([&] { validate_clip(c); }), ErrorKind::kFormat);
  c.sample_rate = kCanonicalRate;
  c.samples[3] = 1.5;
  EXPECT_EQ(error_kind_of([&] { validate_clip(c); }), ErrorKind::kFormat);
  c.samples.clear();
  EXPECT_EQ(error_kind_of([&] { validate_clip(c); }), ErrorKind::kTooShort);
}

TEST(Framing, CountMatchesClosedForm) {
  for (std::size_t n : {400u, 401u, 559u, 560u, 16000u, 16003u})
    EXPECT_EQ(frame_count(n, 400, 160), (n - 400) / 160 + 1) << n;
  EXPECT_EQ(frame_count(399, 400, 160), 0u);
  EXPECT_EQ(ms_to_samples(25.0, 16000), 400);
  EXPECT_EQ(ms_to_samples(10.0, 16000), 160);
}

TEST(Framing, FramesCopySamples) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const FrameSet fs = frame_samples(x, kCanonicalRate, 400, 160);
  ASSERT_EQ(fs.num_frames(), 4);
  for (Eigen::Index t = 0; t < fs.num_frames(); ++t)
    for (int j = 0; j < 400; j += 37) EXPECT_EQ(fs.frames(t, j), static_cast<double>(t * 160 + j));
  EXPECT_EQ(error_kind_of([&] { frame_samples(std::span(x).first(100), kCanonicalRate, 400, 160); }),
            ErrorKind::kTooShort);
}

TEST(Window, HammingAndHannCoefficients) {
  const auto h = window_coefficients(5, WindowKind::kHamming);
  const double expected_h[] = {0.08, 0.54, 1.0, 0.54, 0.08};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(h[i], expected_h[i], 1e-12);
  const auto n = window_coefficients(5, WindowKind::kHann);
  const double expected_n[] = {0.0, 0.5, 1.0, 0.5, 0.0};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(n[i], expected_n[i], 1e-12);
}

TEST(Energy, LogEnergyOfKnownFrame) {
  const std::vector<double> f{0.1, -0.2, 0.3};
  EXPECT_NEAR(log_energy(f), std::log(0.14 + kEnergyFloor), 1e-12);
  const std::vector<double> zero(10, 0.0);
  EXPECT_NEAR(log_energy(zero), std::log(kEnergyFloor), 1e-12);
}

TEST(Energy, ScalingShiftsLogEnergyByTwiceLogGain) {
  const AudioClip a = tone(300, 0.2, 0.1), b = tone(300, 0.2, 0.4);
  const auto ea = frame_log_energies(frame_signal(a, 25, 10));
  const auto eb = frame_log_energies(frame_signal(b, 25, 10));
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t t = 0; t < ea.size(); ++t) EXPECT_NEAR(eb[t] - ea[t], 2.0 * std::log(4.0), 1e-6);
}

}  // namespace
}  // namespace medstate
