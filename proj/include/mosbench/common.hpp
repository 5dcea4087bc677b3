#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mosbench {

inline constexpr int kSchemaVersion = 1;

enum class ErrorCode {
  kIo,
  kValidation,
  kEmptySplit,
  kAudioTooShort,
  kShapeMismatch,
  kMappingDegenerate,
  kCorrDegenerate,
  kDegenerateStats,
  kProviderUnavailable,
  kCheckpointMismatch,
  kTrainingDiverged,
  kConfig,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::kIo: return "IO";
    case ErrorCode::kValidation: return "VALIDATION";
    case ErrorCode::kEmptySplit: return "EMPTY_SPLIT";
    case ErrorCode::kAudioTooShort: return "AUDIO_TOO_SHORT";
    case ErrorCode::kShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::kMappingDegenerate: return "MAPPING_DEGENERATE";
    case ErrorCode::kCorrDegenerate: return "CORR_DEGENERATE";
    case ErrorCode::kDegenerateStats: return "DEGENERATE_STATS";
    case ErrorCode::kProviderUnavailable: return "PROVIDER_UNAVAILABLE";
    case ErrorCode::kCheckpointMismatch: return "CHECKPOINT_MISMATCH";
    case ErrorCode::kTrainingDiverged: return "TRAINING_DIVERGED";
    case ErrorCode::kConfig: return "CONFIG";
  }
  return "UNKNOWN";
}

// Base error type. Carries a machine-readable code next to the message so
// callers (and the CLI) can map failures to exit codes and error documents.
class MosError : public std::runtime_error {
 public:
  MosError(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Validation failure pointing at a specific row/field of an input table.
// row is the 1-based line number in the source file, -1 when not row-bound.
class ValidationError : public MosError {
 public:
  explicit ValidationError(const std::string& message, long row = -1,
                           std::string field = {})
      : MosError(ErrorCode::kValidation, decorate(message, row, field)),
        row_(row),
        field_(std::move(field)) {}
  long row() const { return row_; }
  const std::string& field() const { return field_; }

 private:
  static std::string decorate(const std::string& msg, long row,
                              const std::string& field) {
    std::string out = msg;
    if (row >= 0) out += " (line " + std::to_string(row) + ")";
    if (!field.empty()) out += " [field: " + field + "]";
    return out;
  }
  long row_;
  std::string field_;
};

// FNV-1a, used for content/config hashing of cache keys and checkpoints.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Deterministic double formatting for CSV emission.
inline std::string format_double(double v, int precision = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

}  // namespace mosbench
