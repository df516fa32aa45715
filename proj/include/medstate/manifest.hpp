#pragma once

// Corpus manifests: CSV with header `path,speaker_id,task,state`, one
// recording per row. Paths are relative to the manifest's directory. A
// ground-truth segment file is picked up by convention from
// truth/<wav stem>.seg next to the manifest when it exists.

#include "medstate/core.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace medstate {

struct ManifestEntry {
  std::filesystem::path path;
  std::string speaker_id;
  TaskKind task = TaskKind::kSustainedA;
  MedState state = MedState::kUnknown;
  std::optional<std::filesystem::path> truth;

  std::string stem() const { return path.stem().string(); }
  bool operator==(const ManifestEntry&) const = default;
};

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : root / p; }
};

inline std::string format_manifest(const CorpusManifest& m) {
  std::string out = "path,speaker_id,task,state\n";
  for (const auto& e : m.entries)
    out += e.path.generic_string() + "," + e.speaker_id + "," + std::string(task_name(e.task)) + "," +
           std::string(state_name(e.state)) + "\n";
  return out;
}

inline CorpusManifest parse_manifest(std::istream& in, const std::filesystem::path& root) {
  CorpusManifest m;
  m.root = root;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    const std::string where = "manifest line " + std::to_string(lineno);
    if (!header) {
      require(f.size() == 4 && f[0] == "path" && f[1] == "speaker_id" && f[2] == "task" && f[3] == "state",
              ErrorKind::kFormat, where + ": expected header path,speaker_id,task,state");
      header = true;
      continue;
    }
    require(f.size() == 4, ErrorKind::kFormat, where + ": expected 4 fields");
    require(!f[0].empty() && !f[1].empty(), ErrorKind::kFormat, where + ": empty path or speaker");
    ManifestEntry e;
    e.path = f[0];
    e.speaker_id = f[1];
    try {
      e.task = parse_task(f[2]);
      e.state = parse_state(f[3]);
    } catch (const Error& err) {
      fail(ErrorKind::kFormat, where + ": " + err.what());
    }
    const auto truth = std::filesystem::path("truth") / (e.path.stem().string() + ".seg");
    if (std::filesystem::exists(m.resolve(truth))) e.truth = truth;
    m.entries.push_back(std::move(e));
  }
  require(header, ErrorKind::kFormat, "manifest is empty");
  return m;
}

inline CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(const std::filesystem::path& path, const CorpusManifest& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << format_manifest(m);
}

}  // namespace medstate
