#pragma once

// Frame-level feature pipelines: MFCC, regression deltas, per-file
// z-normalization, context stacking and PCA.

#include "medstate/signalio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cctype>
#include <complex>
#include <numeric>
#include <string>
#include <vector>

namespace medstate {

enum class FeatureKind { kMfcc13, kMfcc26, kEgemaps, kStacked, kPcaProjected };

inline constexpr std::string_view feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::kMfcc13: return "MFCC13";
    case FeatureKind::kMfcc26: return "MFCC26";
    case FeatureKind::kEgemaps: return "EGEMAPS";
    case FeatureKind::kStacked: return "STACKED";
    case FeatureKind::kPcaProjected: return "PCA_PROJECTED";
  }
  return "?";
}

// Case-insensitive: "mfcc13" and "MFCC13" both parse.
inline FeatureKind parse_feature_kind(std::string_view s) {
  std::string upper(s);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto k : {FeatureKind::kMfcc13, FeatureKind::kMfcc26, FeatureKind::kEgemaps,
                 FeatureKind::kStacked, FeatureKind::kPcaProjected})
    if (feature_kind_name(k) == upper) return k;
  fail(ErrorKind::kFormat, "unknown feature kind '" + std::string(s) + "'");
}

struct FeatureMatrix {
  Matrix values;
  FeatureKind kind = FeatureKind::kMfcc13;
  double frame_period_ms = 10.0;
  std::vector<std::string> history;

  Eigen::Index num_frames() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

struct MfccConfig {
  int num_ceps = 13;
  int num_filters = 26;
  double frame_ms = 25.0;
  double shift_ms = 10.0;
  double pre_emphasis = 0.97;
  bool use_c0 = true;
  double lifter = 0.0;  // 0 disables cepstral liftering
  double low_hz = 0.0;
  double high_hz = 8000.0;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Power spectrum |X_k|^2 for k = 0..nfft/2 of a zero-padded real frame.
inline std::vector<double> power_spectrum(std::span<const double> frame, int nfft) {
  static thread_local Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(nfft), 0.0);
  std::copy_n(frame.begin(), std::min<std::size_t>(frame.size(), buf.size()), buf.begin());
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, buf);
  std::vector<double> p(static_cast<std::size_t>(nfft / 2 + 1));
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::norm(spec[k]);
  return p;
}

// Triangular filters on the HTK mel scale; rows are filters over FFT bins 0..nfft/2.
inline Matrix mel_filterbank(int num_filters, int nfft, int rate, double low_hz, double high_hz) {
  const int bins = nfft / 2 + 1;
  Matrix fb = Matrix::Zero(num_filters, bins);
  const double mlo = hz_to_mel(low_hz), mhi = hz_to_mel(high_hz);
  std::vector<double> centers(static_cast<std::size_t>(num_filters + 2));
  for (int i = 0; i < num_filters + 2; ++i)
    centers[static_cast<std::size_t>(i)] = mlo + (mhi - mlo) * i / (num_filters + 1);
  for (int k = 0; k < bins; ++k) {
    const double mel = hz_to_mel(static_cast<double>(k) * rate / nfft);
    for (int m = 0; m < num_filters; ++m) {
      const double l = centers[static_cast<std::size_t>(m)], c = centers[static_cast<std::size_t>(m + 1)],
                   r = centers[static_cast<std::size_t>(m + 2)];
      if (mel > l && mel < r) fb(m, k) = mel <= c ? (mel - l) / (c - l) : (r - mel) / (r - c);
    }
  }
  return fb;
}

// Orthonormal DCT-II basis, num_ceps x num_filters, starting at coefficient `first`.
inline Matrix dct_matrix(int num_ceps, int num_filters, int first) {
  Matrix d(num_ceps, num_filters);
  const double scale = std::sqrt(2.0 / num_filters);
  for (int i = 0; i < num_ceps; ++i)
    for (int j = 0; j < num_filters; ++j)
      d(i, j) = scale * std::cos(std::numbers::pi * (i + first) * (j + 0.5) / num_filters);
  return d;
}

inline FeatureMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg = {}) {
  require(cfg.num_ceps >= 1 && cfg.num_ceps <= cfg.num_filters, ErrorKind::kInvalidArgument,
          "num_ceps must be in [1, num_filters]");
  const FrameSet fs = frame_signal(clip, cfg.frame_ms, cfg.shift_ms);
  const int nfft = next_pow2(fs.frame_length);
  const Matrix fb = mel_filterbank(cfg.num_filters, nfft, clip.sample_rate, cfg.low_hz,
                                   std::min(cfg.high_hz, clip.sample_rate / 2.0));
  const Matrix dct = dct_matrix(cfg.num_ceps, cfg.num_filters, cfg.use_c0 ? 0 : 1);
  const auto window = window_coefficients(static_cast<std::size_t>(fs.frame_length), WindowKind::kHamming);

  FeatureMatrix out;
  out.kind = FeatureKind::kMfcc13;
  out.frame_period_ms = cfg.shift_ms;
  out.values.resize(fs.num_frames(), cfg.num_ceps);
  std::vector<double> frame(static_cast<std::size_t>(fs.frame_length));
  Vector logmel(cfg.num_filters);
  for (Eigen::Index t = 0; t < fs.num_frames(); ++t) {
    // Pre-emphasis within the frame; the first sample uses itself as predecessor.
    for (int j = fs.frame_length - 1; j >= 0; --j) {
      const double prev = j > 0 ? fs.frames(t, j - 1) : fs.frames(t, 0);
      frame[static_cast<std::size_t>(j)] = (fs.frames(t, j) - cfg.pre_emphasis * prev) * window[static_cast<std::size_t>(j)];
    }
    const auto pw = power_spectrum(frame, nfft);
    const Eigen::Map<const Vector> pv(pw.data(), static_cast<Eigen::Index>(pw.size()));
    const Vector mel = fb * pv;
    for (int m = 0; m < cfg.num_filters; ++m) logmel(m) = std::log(std::max(mel(m), kEnergyFloor));
    out.values.row(t) = (dct * logmel).transpose();
  }
  if (cfg.lifter > 0.0) {
    for (int i = 0; i < cfg.num_ceps; ++i) {
      const int n = i + (cfg.use_c0 ? 0 : 1);
      out.values.col(i) *= 1.0 + cfg.lifter / 2.0 * std::sin(std::numbers::pi * n / cfg.lifter);
    }
  }
  out.history.push_back("mfcc(" + std::to_string(cfg.num_ceps) + ")");
  return out;
}

// Regression deltas with edge replication; output is [static | delta].
inline FeatureMatrix delta(const FeatureMatrix& feat, int half_window = 2) {
  require(feat.num_frames() >= 1, ErrorKind::kTooShort, "delta needs at least one frame");
  require(half_window >= 1, ErrorKind::kInvalidArgument, "half_window must be >= 1");
  const Eigen::Index n = feat.num_frames(), d = feat.dim();
  double denom = 0.0;
  for (int th = 1; th <= half_window; ++th) denom += th * th;
  denom *= 2.0;

  FeatureMatrix out;
  out.kind = feat.kind == FeatureKind::kMfcc13 ? FeatureKind::kMfcc26 : feat.kind;
  out.frame_period_ms = feat.frame_period_ms;
  out.history = feat.history;
  out.history.push_back("delta(" + std::to_string(half_window) + ")");
  out.values.resize(n, 2 * d);
  out.values.leftCols(d) = feat.values;
  auto clamp = [n](Eigen::Index t) { return std::clamp<Eigen::Index>(t, 0, n - 1); };
  for (Eigen::Index t = 0; t < n; ++t) {
    RowVector acc = RowVector::Zero(d);
    for (int th = 1; th <= half_window; ++th)
      acc += th * (feat.values.row(clamp(t + th)) - feat.values.row(clamp(t - th)));
    out.values.row(t).rightCols(d) = acc / denom;
  }
  return out;
}

// Column-wise standardization with population statistics; zero-variance columns become zero.
inline FeatureMatrix znorm_per_file(const FeatureMatrix& feat) {
  require(feat.num_frames() >= 2, ErrorKind::kTooShort, "z-normalization needs at least two frames");
  FeatureMatrix out = feat;
  const double n = static_cast<double>(feat.num_frames());
  for (Eigen::Index j = 0; j < feat.dim(); ++j) {
    auto col = out.values.col(j);
    const double mean = col.sum() / n;
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / n);
    // Relative threshold: columns that are constant up to rounding are treated as constant.
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean)))
      col.setZero();
    else
      col /= sd;
  }
  out.history.push_back("znorm");
  return out;
}

// Row t becomes rows t-(C-1)/2 .. t+(C-1)/2 concatenated, with edge replication.
inline FeatureMatrix stack_context(const FeatureMatrix& feat, int context) {
  require(context >= 1 && context % 2 == 1, ErrorKind::kInvalidArgument, "context must be odd and >= 1");
  const Eigen::Index n = feat.num_frames(), d = feat.dim();
  const int half = (context - 1) / 2;
  FeatureMatrix out;
  out.kind = context == 1 ? feat.kind : FeatureKind::kStacked;
  out.frame_period_ms = feat.frame_period_ms;
  out.history = feat.history;
  out.history.push_back("stack(" + std::to_string(context) + ")");
  out.values.resize(n, d * context);
  for (Eigen::Index t = 0; t < n; ++t)
    for (int c = -half; c <= half; ++c) {
      const Eigen::Index src = std::clamp<Eigen::Index>(t + c, 0, n - 1);
      out.values.block(t, (c + half) * d, 1, d) = feat.values.row(src);
    }
  return out;
}

struct PcaModel {
  Vector mean;
  Matrix components;  // kept x dim, orthonormal rows
  Vector eigenvalues; // kept, descending
  double variance_fraction = 0.95;
  double kept_fraction = 1.0;  // share of total variance actually retained

  Eigen::Index input_dim() const { return mean.size(); }
  Eigen::Index kept() const { return components.rows(); }
};

inline PcaModel fit_pca(const Matrix& train, double variance_fraction) {
  require(train.rows() >= 2, ErrorKind::kTooShort, "PCA needs at least two frames");
  require(variance_fraction > 0.0 && variance_fraction <= 1.0, ErrorKind::kInvalidArgument,
          "variance_fraction must be in (0, 1]");
  const double n = static_cast<double>(train.rows());
  PcaModel model;
  model.variance_fraction = variance_fraction;
  model.mean = train.colwise().mean().transpose();
  const Matrix centered = train.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / n;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  require(eig.info() == Eigen::Success, ErrorKind::kDegenerate, "covariance eigendecomposition failed");

  // Eigen returns ascending order.
  const Eigen::Index dim = cov.rows();
  Vector values(dim);
  Eigen::MatrixXd vectors(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    values(i) = std::max(0.0, eig.eigenvalues()(dim - 1 - i));
    vectors.col(i) = eig.eigenvectors().col(dim - 1 - i);
  }
  const double total = values.sum();
  require(total > 0.0, ErrorKind::kDegenerate, "PCA input has zero variance");

  Eigen::Index k = 0;
  double cum = 0.0;
  while (k < dim) {
    cum += values(k);
    ++k;
    if (cum / total >= variance_fraction * (1.0 - 1e-12)) break;
  }
  model.kept_fraction = cum / total;
  model.eigenvalues = values.head(k);
  model.components.resize(k, dim);
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector v = vectors.col(i);
    // Sign convention: the largest-magnitude entry is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    model.components.row(i) = v.transpose();
  }
  return model;
}

inline PcaModel fit_pca(const FeatureMatrix& train, double variance_fraction) {
  return fit_pca(train.values, variance_fraction);
}

inline Matrix apply_pca(const PcaModel& model, const Matrix& x) {
  require(x.cols() == model.input_dim(), ErrorKind::kDimensionMismatch,
          "PCA expects dim " + std::to_string(model.input_dim()) + ", got " + std::to_string(x.cols()));
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline FeatureMatrix apply_pca(const PcaModel& model, const FeatureMatrix& feat) {
  FeatureMatrix out;
  out.values = apply_pca(model, feat.values);
  out.kind = FeatureKind::kPcaProjected;
  out.frame_period_ms = feat.frame_period_ms;
  out.history = feat.history;
  out.history.push_back("pca(" + std::to_string(model.kept()) + ")");
  return out;
}

inline Matrix pca_reconstruct(const PcaModel& model, const Matrix& projected) {
  return (projected * model.components).rowwise() + model.mean.transpose();
}

}  // namespace medstate
