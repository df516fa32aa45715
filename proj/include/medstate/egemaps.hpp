#pragma once

// Frame-level acoustic-prosodic descriptors modelled on the eGeMAPS LLD set.
// Pitch-family descriptors use 60 ms windows, spectral ones 20 ms, all on a
// 10 ms grid. Unvoiced frames carry 0 in every pitch-dependent column; a zero
// log-F0 doubles as the voicing flag.

#include "medstate/features.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <optional>

namespace medstate {

enum class Lld : int {
  kLogF0 = 0,
  kJitter,
  kShimmer,
  kHnr,
  kLoudness,
  kAlphaRatio,
  kHammarberg,
  kSlope0To500,
  kSlope500To1500,
  kSpectralFlux,
  kF1Freq,
  kF2Freq,
  kF3Freq,
  kF1Bandwidth,
  kF2Bandwidth,
  kF3Bandwidth,
  kF1Amplitude,
  kF2Amplitude,
  kF3Amplitude,
  kMfcc1,
  kMfcc2,
  kMfcc3,
  kMfcc4,
  kH1MinusH2,
  kH1MinusA3,
};

inline constexpr int kNumLlds = 25;

inline constexpr std::array<std::string_view, kNumLlds> kLldNames = {
    "logF0_st", "jitter", "shimmer", "HNR_dB", "loudness", "alpha_ratio", "hammarberg",
    "slope0-500", "slope500-1500", "spectral_flux", "F1", "F2", "F3", "F1_bw", "F2_bw",
    "F3_bw", "F1_amp", "F2_amp", "F3_amp", "mfcc1", "mfcc2", "mfcc3", "mfcc4", "H1-H2", "H1-A3",
};

// The 23-column default omits the F2/F3 bandwidths.
inline std::vector<Lld> default_lld_columns() {
  std::vector<Lld> cols;
  for (int i = 0; i < kNumLlds; ++i) {
    const auto l = static_cast<Lld>(i);
    if (l == Lld::kF2Bandwidth || l == Lld::kF3Bandwidth) continue;
    cols.push_back(l);
  }
  return cols;
}

inline std::vector<Lld> all_lld_columns() {
  std::vector<Lld> cols;
  for (int i = 0; i < kNumLlds; ++i) cols.push_back(static_cast<Lld>(i));
  return cols;
}

struct EgemapsConfig {
  double pitch_window_ms = 60.0;
  double spectral_window_ms = 20.0;
  double shift_ms = 10.0;
  double f0_min_hz = 55.0;
  double f0_max_hz = 400.0;
  double voicing_threshold = 0.5;  // normalized autocorrelation peak
  double silence_energy = 1e-7;    // mean-square below this is never voiced
  int lpc_order = 14;
  std::vector<Lld> columns = default_lld_columns();
};

struct PitchAnalysis {
  double f0 = 0.0;          // Hz, 0 when unvoiced
  double periodicity = 0.0; // normalized autocorrelation at the chosen lag
  double jitter = 0.0;
  double shimmer = 0.0;
};

namespace detail {

// Normalized cross-correlation of x[0..n-lag) with x[lag..n).
inline double norm_autocorr(std::span<const double> x, int lag) {
  const std::size_t n = x.size() - static_cast<std::size_t>(lag);
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = x[i], b = x[i + static_cast<std::size_t>(lag)];
    xy += a * b;
    xx += a * a;
    yy += b * b;
  }
  if (xx <= 0 || yy <= 0) return 0.0;
  return xy / std::sqrt(xx * yy);
}

inline double parabolic_offset(double ym, double y0, double yp) {
  const double den = ym - 2 * y0 + yp;
  if (den == 0) return 0.0;
  return std::clamp(0.5 * (ym - yp) / den, -0.5, 0.5);
}

// Cycle peaks spaced roughly one period apart; returns (position, amplitude).
inline std::vector<std::pair<double, double>> cycle_peaks(std::span<const double> x, double period) {
  std::vector<std::pair<double, double>> peaks;
  const int p = static_cast<int>(std::lround(period));
  const int n = static_cast<int>(x.size());
  if (p < 2 || n < 2 * p) return peaks;
  int start = 0;
  for (int i = 1; i < p; ++i)
    if (x[static_cast<std::size_t>(i)] > x[static_cast<std::size_t>(start)]) start = i;
  int pos = start;
  const int slack = std::max(1, p / 5);
  while (true) {
    const double refined = (pos > 0 && pos + 1 < n)
                               ? pos + parabolic_offset(x[static_cast<std::size_t>(pos - 1)], x[static_cast<std::size_t>(pos)],
                                                        x[static_cast<std::size_t>(pos + 1)])
                               : pos;
    peaks.emplace_back(refined, x[static_cast<std::size_t>(pos)]);
    const int lo = pos + p - slack, hi = pos + p + slack;
    if (hi >= n) break;
    int best = lo;
    for (int i = lo; i <= hi; ++i)
      if (x[static_cast<std::size_t>(i)] > x[static_cast<std::size_t>(best)]) best = i;
    pos = best;
  }
  return peaks;
}

inline double db(double power) { return 10.0 * std::log10(std::max(power, 1e-20)); }

inline double band_energy(const std::vector<double>& pw, double bin_hz, double lo, double hi) {
  double e = 0;
  for (std::size_t k = 0; k < pw.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f >= lo && f < hi) e += pw[k];
  }
  return e;
}

inline double band_peak(const std::vector<double>& pw, double bin_hz, double lo, double hi) {
  double e = 0;
  for (std::size_t k = 0; k < pw.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f >= lo && f < hi) e = std::max(e, pw[k]);
  }
  return e;
}

// Least-squares slope of the dB spectrum against frequency (dB/Hz).
inline double spectral_slope(const std::vector<double>& pw, double bin_hz, double lo, double hi) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t k = 0; k < pw.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f < lo || f > hi) continue;
    const double y = db(pw[k]);
    sx += f;
    sy += y;
    sxx += f * f;
    sxy += f * y;
    ++n;
  }
  const double den = n * sxx - sx * sx;
  if (n < 2 || den == 0) return 0.0;
  return (n * sxy - sx * sy) / den;
}

// Autocorrelation-method LPC via Levinson-Durbin; returns a[0..order] with a[0] = 1.
inline std::vector<double> lpc(std::span<const double> x, int order) {
  std::vector<double> r(static_cast<std::size_t>(order + 1), 0.0);
  for (int k = 0; k <= order; ++k)
    for (std::size_t i = static_cast<std::size_t>(k); i < x.size(); ++i)
      r[static_cast<std::size_t>(k)] += x[i] * x[i - static_cast<std::size_t>(k)];
  std::vector<double> a(static_cast<std::size_t>(order + 1), 0.0);
  a[0] = 1.0;
  if (r[0] <= 0) return a;
  r[0] *= 1.0 + 1e-9;
  double err = r[0];
  std::vector<double> tmp(a.size());
  for (int i = 1; i <= order; ++i) {
    double acc = r[static_cast<std::size_t>(i)];
    for (int j = 1; j < i; ++j) acc += a[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(i - j)];
    const double k = -acc / err;
    tmp = a;
    for (int j = 1; j < i; ++j) a[static_cast<std::size_t>(j)] = tmp[static_cast<std::size_t>(j)] + k * tmp[static_cast<std::size_t>(i - j)];
    a[static_cast<std::size_t>(i)] = k;
    err *= 1.0 - k * k;
    if (err <= 0) break;
  }
  return a;
}

// Formant candidates (frequency, bandwidth) from LPC polynomial roots, ascending in frequency.
inline std::vector<std::pair<double, double>> formants(const std::vector<double>& a, int rate) {
  const int order = static_cast<int>(a.size()) - 1;
  std::vector<std::pair<double, double>> out;
  if (order < 2) return out;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(order, order);
  for (int j = 0; j < order; ++j) companion(0, j) = -a[static_cast<std::size_t>(j + 1)];
  for (int i = 1; i < order; ++i) companion(i, i - 1) = 1.0;
  const Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
  if (es.info() != Eigen::Success) return out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const std::complex<double> z = es.eigenvalues()(i);
    if (z.imag() <= 0) continue;
    const double freq = std::arg(z) * rate / (2 * std::numbers::pi);
    const double bw = -std::log(std::abs(z)) * rate / std::numbers::pi;
    if (freq > 90.0 && freq < rate / 2.0 - 50.0 && bw > 0 && bw < 700.0) out.emplace_back(freq, bw);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline double level_near(const std::vector<double>& pw, double bin_hz, double f, double half_width) {
  return db(band_peak(pw, bin_hz, std::max(0.0, f - half_width), f + half_width));
}

}  // namespace detail

// Autocorrelation pitch estimate with cycle-level jitter/shimmer on one window.
inline PitchAnalysis analyze_pitch(std::span<const double> x, int rate, const EgemapsConfig& cfg = {}) {
  PitchAnalysis out;
  double ms = 0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  if (ms < cfg.silence_energy) return out;

  std::vector<double> centered(x.begin(), x.end());
  const double mean = std::accumulate(centered.begin(), centered.end(), 0.0) / static_cast<double>(centered.size());
  for (double& v : centered) v -= mean;

  const int min_lag = static_cast<int>(std::floor(rate / cfg.f0_max_hz));
  const int max_lag = std::min(static_cast<int>(std::ceil(rate / cfg.f0_min_hz)), static_cast<int>(x.size()) / 2);
  if (max_lag <= min_lag + 2) return out;
  std::vector<double> r(static_cast<std::size_t>(max_lag + 2), 0.0);
  for (int lag = min_lag - 1; lag <= max_lag + 1; ++lag) r[static_cast<std::size_t>(lag)] = detail::norm_autocorr(centered, lag);

  double global = -1;
  for (int lag = min_lag; lag <= max_lag; ++lag) global = std::max(global, r[static_cast<std::size_t>(lag)]);
  if (global < cfg.voicing_threshold) return out;
  // Smallest-lag local maximum close to the global peak avoids octave-down errors.
  int best = -1;
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    const double v = r[static_cast<std::size_t>(lag)];
    if (v >= 0.9 * global && v >= r[static_cast<std::size_t>(lag - 1)] && v >= r[static_cast<std::size_t>(lag + 1)]) {
      best = lag;
      break;
    }
  }
  if (best < 0) return out;
  const double period = best + detail::parabolic_offset(r[static_cast<std::size_t>(best - 1)], r[static_cast<std::size_t>(best)],
                                                        r[static_cast<std::size_t>(best + 1)]);
  out.f0 = rate / period;
  out.periodicity = r[static_cast<std::size_t>(best)];

  const auto peaks = detail::cycle_peaks(centered, period);
  if (peaks.size() >= 3) {
    double dp = 0, sp = 0, da = 0, sa = 0;
    std::vector<double> periods;
    for (std::size_t i = 1; i < peaks.size(); ++i) periods.push_back(peaks[i].first - peaks[i - 1].first);
    for (std::size_t i = 0; i < periods.size(); ++i) {
      sp += periods[i];
      if (i > 0) dp += std::abs(periods[i] - periods[i - 1]);
    }
    for (std::size_t i = 0; i < peaks.size(); ++i) {
      sa += std::abs(peaks[i].second);
      if (i > 0) da += std::abs(peaks[i].second - peaks[i - 1].second);
    }
    const double mean_p = sp / static_cast<double>(periods.size());
    const double mean_a = sa / static_cast<double>(peaks.size());
    if (periods.size() >= 2 && mean_p > 0) out.jitter = dp / static_cast<double>(periods.size() - 1) / mean_p;
    if (mean_a > 0) out.shimmer = da / static_cast<double>(peaks.size() - 1) / mean_a;
  }
  return out;
}

inline FeatureMatrix egemaps_lld(const AudioClip& clip, const EgemapsConfig& cfg = {}) {
  const int rate = clip.sample_rate;
  const int long_len = ms_to_samples(cfg.pitch_window_ms, rate);
  const int short_len = ms_to_samples(cfg.spectral_window_ms, rate);
  const int shift = ms_to_samples(cfg.shift_ms, rate);
  const std::size_t n = frame_count(clip.size(), static_cast<std::size_t>(long_len), static_cast<std::size_t>(shift));
  require(n >= 1, ErrorKind::kTooShort, "clip shorter than the 60 ms analysis window");

  const int long_fft = next_pow2(long_len) * 2;
  const int short_fft = next_pow2(short_len);
  const double long_bin = static_cast<double>(rate) / long_fft;
  const double short_bin = static_cast<double>(rate) / short_fft;
  const auto long_win = window_coefficients(static_cast<std::size_t>(long_len), WindowKind::kHann);
  const auto short_win = window_coefficients(static_cast<std::size_t>(short_len), WindowKind::kHamming);
  const Matrix fb = mel_filterbank(26, short_fft, rate, 0.0, rate / 2.0);
  const Matrix dct = dct_matrix(4, 26, 1);
  const int short_offset = (long_len - short_len) / 2;

  Matrix all = Matrix::Zero(static_cast<Eigen::Index>(n), kNumLlds);
  std::vector<double> prev_mag;
  std::vector<double> lbuf(static_cast<std::size_t>(long_len)), sbuf(static_cast<std::size_t>(short_len)),
      pre(static_cast<std::size_t>(short_len));
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const std::span<const double> lwin(clip.samples.data() + t * static_cast<std::size_t>(shift), static_cast<std::size_t>(long_len));
    const std::span<const double> swin = lwin.subspan(static_cast<std::size_t>(short_offset), static_cast<std::size_t>(short_len));

    // Spectral family (20 ms).
    for (int j = 0; j < short_len; ++j) sbuf[static_cast<std::size_t>(j)] = swin[static_cast<std::size_t>(j)] * short_win[static_cast<std::size_t>(j)];
    const auto spw = power_spectrum(sbuf, short_fft);
    const double total = std::accumulate(spw.begin(), spw.end(), 0.0);
    all(row, static_cast<int>(Lld::kLoudness)) = std::pow(total, 0.3);
    const double lo_band = detail::band_energy(spw, short_bin, 50, 1000);
    const double hi_band = detail::band_energy(spw, short_bin, 1000, 5000);
    if (total > 0) {
      all(row, static_cast<int>(Lld::kAlphaRatio)) = detail::db(lo_band) - detail::db(hi_band);
      all(row, static_cast<int>(Lld::kHammarberg)) =
          detail::db(detail::band_peak(spw, short_bin, 0, 2000)) - detail::db(detail::band_peak(spw, short_bin, 2000, 5000));
      all(row, static_cast<int>(Lld::kSlope0To500)) = detail::spectral_slope(spw, short_bin, 0, 500);
      all(row, static_cast<int>(Lld::kSlope500To1500)) = detail::spectral_slope(spw, short_bin, 500, 1500);
    }
    std::vector<double> mag(spw.size());
    const double norm = std::sqrt(total);
    for (std::size_t k = 0; k < spw.size(); ++k) mag[k] = norm > 0 ? std::sqrt(spw[k]) / norm : 0.0;
    if (!prev_mag.empty()) {
      double flux = 0;
      for (std::size_t k = 0; k < mag.size(); ++k) flux += (mag[k] - prev_mag[k]) * (mag[k] - prev_mag[k]);
      all(row, static_cast<int>(Lld::kSpectralFlux)) = flux;
    }
    prev_mag = std::move(mag);
    {
      const Eigen::Map<const Vector> pv(spw.data(), static_cast<Eigen::Index>(spw.size()));
      Vector logmel = (fb * pv).array().max(kEnergyFloor).log().matrix();
      const Vector c = dct * logmel;
      for (int i = 0; i < 4; ++i) all(row, static_cast<int>(Lld::kMfcc1) + i) = c(i);
    }

    // Pitch family (60 ms).
    const PitchAnalysis pa = analyze_pitch(lwin, rate, cfg);
    if (pa.f0 <= 0) continue;
    all(row, static_cast<int>(Lld::kLogF0)) = 12.0 * std::log2(pa.f0 / 27.5);
    all(row, static_cast<int>(Lld::kJitter)) = pa.jitter;
    all(row, static_cast<int>(Lld::kShimmer)) = pa.shimmer;
    const double rr = std::clamp(pa.periodicity, 1e-6, 1.0 - 1e-6);
    all(row, static_cast<int>(Lld::kHnr)) = 10.0 * std::log10(rr / (1.0 - rr));

    for (int j = 0; j < long_len; ++j) lbuf[static_cast<std::size_t>(j)] = lwin[static_cast<std::size_t>(j)] * long_win[static_cast<std::size_t>(j)];
    const auto lpw = power_spectrum(lbuf, long_fft);
    const double h1 = detail::level_near(lpw, long_bin, pa.f0, 0.2 * pa.f0);
    const double h2 = detail::level_near(lpw, long_bin, 2 * pa.f0, 0.2 * pa.f0);
    all(row, static_cast<int>(Lld::kH1MinusH2)) = h1 - h2;

    pre[0] = swin[0];
    for (int j = 1; j < short_len; ++j)
      pre[static_cast<std::size_t>(j)] = (swin[static_cast<std::size_t>(j)] - 0.97 * swin[static_cast<std::size_t>(j - 1)]) * short_win[static_cast<std::size_t>(j)];
    const auto fm = detail::formants(detail::lpc(pre, cfg.lpc_order), rate);
    for (std::size_t i = 0; i < 3 && i < fm.size(); ++i) {
      const int k = static_cast<int>(i);
      all(row, static_cast<int>(Lld::kF1Freq) + k) = fm[i].first;
      all(row, static_cast<int>(Lld::kF1Bandwidth) + k) = fm[i].second;
      all(row, static_cast<int>(Lld::kF1Amplitude) + k) = detail::level_near(lpw, long_bin, fm[i].first, 0.5 * pa.f0) - h1;
    }
    if (fm.size() >= 3) all(row, static_cast<int>(Lld::kH1MinusA3)) = h1 - detail::level_near(lpw, long_bin, fm[2].first, 0.5 * pa.f0);
  }

  FeatureMatrix out;
  out.kind = FeatureKind::kEgemaps;
  out.frame_period_ms = cfg.shift_ms;
  out.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.columns.size()));
  for (std::size_t j = 0; j < cfg.columns.size(); ++j)
    out.values.col(static_cast<Eigen::Index>(j)) = all.col(static_cast<int>(cfg.columns[j]));
  out.history.push_back("egemaps(" + std::to_string(cfg.columns.size()) + ")");
  return out;
}

}  // namespace medstate
