#pragma once

// Shared vocabulary: error types, recording metadata enums, matrix aliases and
// stable seed derivation.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace medstate {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class ErrorKind {
  kInvalidArgument,
  kFormat,
  kTooShort,
  kDegenerate,
  kDimensionMismatch,
  kIo,
  kMissingModel,
  kMissingData,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

// The nine elicitation tasks, in recording order.
enum class TaskKind : int {
  kSustainedA = 0,
  kMpt,
  kDdk,
  kReadWords,
  kReadSentences,
  kReadText,
  kProsodicSentences,
  kStorytelling,
  kConversation,
};

inline constexpr std::array<TaskKind, 9> kAllTasks = {
    TaskKind::kSustainedA,    TaskKind::kMpt,      TaskKind::kDdk,
    TaskKind::kReadWords,     TaskKind::kReadSentences, TaskKind::kReadText,
    TaskKind::kProsodicSentences, TaskKind::kStorytelling, TaskKind::kConversation,
};

inline constexpr std::string_view task_name(TaskKind t) {
  switch (t) {
    case TaskKind::kSustainedA: return "a";
    case TaskKind::kMpt: return "mpt";
    case TaskKind::kDdk: return "ddk";
    case TaskKind::kReadWords: return "words";
    case TaskKind::kReadSentences: return "sentences";
    case TaskKind::kReadText: return "text";
    case TaskKind::kProsodicSentences: return "prosodic";
    case TaskKind::kStorytelling: return "story";
    case TaskKind::kConversation: return "conversation";
  }
  return "?";
}

inline TaskKind parse_task(std::string_view s) {
  for (TaskKind t : kAllTasks)
    if (task_name(t) == s) return t;
  fail(ErrorKind::kFormat, "unknown task '" + std::string(s) + "'");
}

enum class MedState { kOn, kOff, kUnknown };

inline constexpr std::string_view state_name(MedState s) {
  switch (s) {
    case MedState::kOn: return "ON";
    case MedState::kOff: return "OFF";
    case MedState::kUnknown: return "UNKNOWN";
  }
  return "?";
}

inline MedState parse_state(std::string_view s) {
  if (s == "ON") return MedState::kOn;
  if (s == "OFF") return MedState::kOff;
  if (s == "UNKNOWN") return MedState::kUnknown;
  fail(ErrorKind::kFormat, "unknown state '" + std::string(s) + "'");
}

struct RecordingMeta {
  std::string speaker_id;
  TaskKind task = TaskKind::kSustainedA;
  MedState state = MedState::kUnknown;
  std::optional<std::string> split_hint;
};

// Stable 64-bit mixing (splitmix64 finalizer) and FNV-1a string hashing. Used
// to derive per-stage and per-item seeds from one master seed; the values must
// not depend on platform or standard-library hash implementations.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
  return mix64(master ^ mix64(fnv1a(stage)));
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                           std::string_view item) {
  return mix64(derive_seed(master, stage) ^ fnv1a(item));
}

}  // namespace medstate
