#pragma once

// On-disk formats for feature matrices and PCA models.
//
// Feature cache (little-endian):
//   bytes 0-3   magic "MSFC"
//   u32         format version (1)
//   u32         feature kind (FeatureKind enumerator value)
//   u32         dim
//   u32         frame count
//   f32         frame period in ms
//   u32         history length in bytes, then that many bytes of
//               ';'-joined transform names
//   f32 x (frames * dim), row-major
//
// PCA model: versioned text, one keyword-led line per field, values with 17
// significant digits.

#include "medstate/features.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace medstate {

namespace detail {

inline void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace detail

inline std::vector<unsigned char> encode_features(const FeatureMatrix& f) {
  std::vector<unsigned char> out;
  out.insert(out.end(), {'M', 'S', 'F', 'C'});
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(f.kind));
  detail::put_u32(out, static_cast<std::uint32_t>(f.dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.num_frames()));
  detail::put_f32(out, static_cast<float>(f.frame_period_ms));
  std::string hist;
  for (std::size_t i = 0; i < f.history.size(); ++i) hist += (i ? ";" : "") + f.history[i];
  detail::put_u32(out, static_cast<std::uint32_t>(hist.size()));
  out.insert(out.end(), hist.begin(), hist.end());
  for (Eigen::Index t = 0; t < f.num_frames(); ++t)
    for (Eigen::Index j = 0; j < f.dim(); ++j) detail::put_f32(out, static_cast<float>(f.values(t, j)));
  return out;
}

inline FeatureMatrix decode_features(std::span<const unsigned char> b) {
  auto need = [&](std::size_t n) { require(b.size() >= n, ErrorKind::kFormat, "feature file truncated"); };
  need(28);
  require(std::memcmp(b.data(), "MSFC", 4) == 0, ErrorKind::kFormat, "not a feature cache file");
  require(detail::read_u32(b.data() + 4) == 1, ErrorKind::kFormat, "unsupported feature cache version");
  FeatureMatrix f;
  const auto kind = detail::read_u32(b.data() + 8);
  require(kind <= static_cast<std::uint32_t>(FeatureKind::kPcaProjected), ErrorKind::kFormat, "bad feature kind");
  f.kind = static_cast<FeatureKind>(kind);
  const auto dim = detail::read_u32(b.data() + 12);
  const auto frames = detail::read_u32(b.data() + 16);
  f.frame_period_ms = std::bit_cast<float>(detail::read_u32(b.data() + 20));
  const auto hlen = detail::read_u32(b.data() + 24);
  need(28 + static_cast<std::size_t>(hlen) + 4ULL * dim * frames);
  std::string hist(reinterpret_cast<const char*>(b.data() + 28), hlen);
  std::istringstream hs(hist);
  for (std::string item; std::getline(hs, item, ';');)
    if (!item.empty()) f.history.push_back(item);
  f.values.resize(frames, dim);
  const unsigned char* p = b.data() + 28 + hlen;
  for (std::uint32_t t = 0; t < frames; ++t)
    for (std::uint32_t j = 0; j < dim; ++j, p += 4) f.values(t, j) = std::bit_cast<float>(detail::read_u32(p));
  return f;
}

inline void save_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  const auto bytes = encode_features(f);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_features(bytes);
}

inline std::string serialize_pca(const PcaModel& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "medstate-pca 1\n";
  os << "dim " << m.input_dim() << "\nkept " << m.kept() << "\n";
  os << "variance_fraction " << m.variance_fraction << "\nkept_fraction " << m.kept_fraction << "\n";
  os << "mean";
  for (Eigen::Index j = 0; j < m.input_dim(); ++j) os << ' ' << m.mean(j);
  os << "\neigenvalues";
  for (Eigen::Index i = 0; i < m.kept(); ++i) os << ' ' << m.eigenvalues(i);
  os << "\n";
  for (Eigen::Index i = 0; i < m.kept(); ++i) {
    os << "component";
    for (Eigen::Index j = 0; j < m.input_dim(); ++j) os << ' ' << m.components(i, j);
    os << "\n";
  }
  return os.str();
}

inline PcaModel parse_pca(std::istream& in) {
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(in >> k) || k != key) fail(ErrorKind::kFormat, "PCA file: expected '" + key + "'");
  };
  std::string magic;
  int version = 0;
  in >> magic >> version;
  require(magic == "medstate-pca" && version == 1, ErrorKind::kFormat, "not a version-1 PCA file");
  Eigen::Index dim = 0, kept = 0;
  PcaModel m;
  expect("dim");
  in >> dim;
  expect("kept");
  in >> kept;
  require(in && dim > 0 && kept > 0 && kept <= dim, ErrorKind::kFormat, "PCA file: bad header");
  expect("variance_fraction");
  in >> m.variance_fraction;
  expect("kept_fraction");
  in >> m.kept_fraction;
  m.mean.resize(dim);
  m.eigenvalues.resize(kept);
  m.components.resize(kept, dim);
  expect("mean");
  for (Eigen::Index j = 0; j < dim; ++j) in >> m.mean(j);
  expect("eigenvalues");
  for (Eigen::Index i = 0; i < kept; ++i) in >> m.eigenvalues(i);
  for (Eigen::Index i = 0; i < kept; ++i) {
    expect("component");
    for (Eigen::Index j = 0; j < dim; ++j) in >> m.components(i, j);
  }
  require(static_cast<bool>(in), ErrorKind::kFormat, "PCA file truncated");
  return m;
}

inline void save_pca(const std::filesystem::path& path, const PcaModel& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << serialize_pca(m);
}

inline PcaModel load_pca(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return parse_pca(in);
}

}  // namespace medstate
