#include "avguard/audit_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>

#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::guard {

using nlohmann::json;

json record_to_json(const AuditRecord& r) {
  json j;
  j["seq"] = r.seq;
  j["ts_ms"] = r.ts_ms;
  j["timestamp"] = r.timestamp;
  j["session_id"] = r.session_id;
  j["direction"] = r.direction;
  j["text_sha256"] = r.text_sha256;
  j["redacted_text"] = r.redacted_text;
  j["decision"] = r.decision;
  j["exposure"] = r.exposure;
  j["behavior_score"] = r.behavior_score ? json(*r.behavior_score) : json(nullptr);
  j["command_validation"] = r.command_validation;
  j["backend"] = r.backend;
  j["usage"] = r.usage;
  return j;
}

AuditRecord record_from_json(const json& j) {
  AuditRecord r;
  r.seq = j.at("seq").get<std::uint64_t>();
  r.ts_ms = j.at("ts_ms").get<std::int64_t>();
  r.timestamp = j.value("timestamp", "");
  r.session_id = j.at("session_id").get<std::string>();
  r.direction = j.value("direction", "");
  r.text_sha256 = j.value("text_sha256", "");
  r.redacted_text = j.value("redacted_text", "");
  r.decision = j.value("decision", json(nullptr));
  r.exposure = j.value("exposure", json(nullptr));
  if (j.contains("behavior_score") && j.at("behavior_score").is_number()) {
    r.behavior_score = j.at("behavior_score").get<double>();
  }
  r.command_validation = j.value("command_validation", json(nullptr));
  r.backend = j.value("backend", "");
  r.usage = j.value("usage", json(nullptr));
  return r;
}

namespace {

[[noreturn]] void unavailable(const std::string& what) {
  throw Error(ErrorCode::kStoreUnavailable, what + ": " + std::strerror(errno));
}

std::vector<AuditRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kStoreUnavailable, "cannot read audit log " + path.string());
  std::vector<AuditRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    // A torn final line from a crash is skipped rather than failing the query.
    if (j.is_discarded()) continue;
    out.push_back(record_from_json(j));
  }
  return out;
}

}  // namespace

AuditLog AuditLog::open(const std::filesystem::path& path) {
  AuditLog log;
  log.path_ = path;
  log.fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0640);
  if (log.fd_ < 0) unavailable("cannot open audit log " + path.string());
  for (const auto& r : read_records(path)) log.next_seq_ = std::max(log.next_seq_, r.seq + 1);
  return log;
}

AuditLog AuditLog::in_memory() { return AuditLog(); }

AuditLog::AuditLog(AuditLog&& other) noexcept
    : path_(std::move(other.path_)), fd_(other.fd_), next_seq_(other.next_seq_), memory_(std::move(other.memory_)) {
  other.fd_ = -1;
}

AuditLog::~AuditLog() {
  if (fd_ >= 0) {
    ::fsync(fd_);
    ::close(fd_);
  }
}

AuditRecord AuditLog::append(AuditRecord record) {
  std::lock_guard lock(mutex_);
  record.seq = next_seq_;
  if (record.ts_ms == 0) {
    using namespace std::chrono;
    record.ts_ms = duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    record.timestamp = text::utc_timestamp_now();
  }
  if (fd_ >= 0) {
    const std::string line = record_to_json(record).dump() + "\n";
    std::size_t done = 0;
    while (done < line.size()) {
      const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        unavailable("audit append failed");
      }
      done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) unavailable("audit fsync failed");
  } else {
    memory_.push_back(record);
  }
  ++next_seq_;
  return record;
}

std::vector<AuditRecord> AuditLog::all() const {
  std::lock_guard lock(mutex_);
  if (path_) return read_records(*path_);
  return memory_;
}

std::vector<AuditRecord> AuditLog::query(const std::string& session_id, TimeRange range) const {
  std::vector<AuditRecord> out;
  for (auto& r : all()) {
    if (r.session_id == session_id && r.ts_ms >= range.from_ms && r.ts_ms <= range.to_ms) out.push_back(std::move(r));
  }
  return out;
}

std::uint64_t AuditLog::size() const {
  std::lock_guard lock(mutex_);
  return next_seq_ - 1;
}

}  // namespace avguard::guard
