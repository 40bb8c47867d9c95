#pragma once

// Append-only audit trail, one JSON record per line.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace avguard::guard {

struct AuditRecord {
  std::uint64_t seq = 0;     // assigned by the log
  std::int64_t ts_ms = 0;    // unix epoch milliseconds, assigned by the log if 0
  std::string timestamp;     // ISO-8601 UTC, assigned with ts_ms
  std::string session_id;
  std::string direction;     // "outbound" | "inbound"
  std::string text_sha256;   // hash of the original text; the text itself is never stored
  std::string redacted_text;
  nlohmann::json decision;   // GuardDecision::to_json()
  nlohmann::json exposure;   // report summary, or null
  std::optional<double> behavior_score;
  nlohmann::json command_validation;  // null when no command was seen
  std::string backend;
  nlohmann::json usage;      // null when no backend call happened
};

nlohmann::json record_to_json(const AuditRecord& r);
AuditRecord record_from_json(const nlohmann::json& j);

struct TimeRange {
  std::int64_t from_ms = std::numeric_limits<std::int64_t>::min();
  std::int64_t to_ms = std::numeric_limits<std::int64_t>::max();  // inclusive
};

/// Thread-safe. File-backed logs write each record with a single write(2)
/// followed by fsync, so a record is durable once append() returns.
class AuditLog {
 public:
  /// Throws Error(kStoreUnavailable) if the file cannot be opened for append.
  static AuditLog open(const std::filesystem::path& path);
  static AuditLog in_memory();

  AuditLog(AuditLog&& other) noexcept;
  AuditLog& operator=(AuditLog&&) = delete;
  AuditLog(const AuditLog&) = delete;
  ~AuditLog();

  /// Returns the stored record (seq and timestamp filled in).
  AuditRecord append(AuditRecord record);
  /// Records of one session within the range, in append order.
  std::vector<AuditRecord> query(const std::string& session_id, TimeRange range = {}) const;
  std::vector<AuditRecord> all() const;
  std::uint64_t size() const;
  const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

 private:
  AuditLog() = default;
  std::optional<std::filesystem::path> path_;
  int fd_ = -1;
  mutable std::mutex mutex_;
  std::uint64_t next_seq_ = 1;
  std::vector<AuditRecord> memory_;
};

}  // namespace avguard::guard
