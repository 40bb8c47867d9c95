#pragma once

// The guard pipeline: outbound exposure check, backend call, inbound command
// and behavior checks, allow/redact/block decisions and the audit trail.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "avguard/audit_log.hpp"
#include "avguard/behavior.hpp"
#include "avguard/command_space.hpp"
#include "avguard/llm_client.hpp"
#include "avguard/sensitive_data.hpp"

namespace avguard::guard {

enum class Level { kLow, kMedium, kHigh, kNA };
std::string_view level_name(Level l) noexcept;
/// Accepts Low/Medium/High/NA in any case. Throws kConfigError.
Level level_from_name(std::string_view name);

struct TaskProfile {
  std::string task;
  Level sensitivity = Level::kNA;
  Level drive_relatedness = Level::kNA;
  Level value_alignment = Level::kNA;
};

/// {"version":1,"tasks":[{"task","sensitivity","drive_relatedness","value_alignment"}]}
std::vector<TaskProfile> task_profiles_from_json(const nlohmann::json& j);
std::vector<TaskProfile> load_task_profiles(const std::filesystem::path& path);
const std::vector<TaskProfile>& shipped_task_profiles();
/// Case-insensitive lookup by task name. Throws kConfigError when absent.
const TaskProfile& find_task_profile(const std::vector<TaskProfile>& profiles, std::string_view task);

enum class CommandAction { kBlock, kClamp };

/// Backend names per role; empty means the offline default.
struct RoleAssignment {
  std::string command;
  std::string data;
  std::string alignment;
};

enum class BackendRole { kCommand, kData, kAlignment };
std::string_view backend_role_name(BackendRole r) noexcept;
/// Throws kInvalidArgument.
BackendRole backend_role_from_name(std::string_view name);

struct GuardPolicy {
  double exposure_redact_threshold = 0.1;
  double exposure_block_threshold = 0.5;
  double behavior_min = -0.5;  // neutral (0) replies pass; clearly negative ones do not
  sensitive::Weights weights = sensitive::uniform_weights();
  command::VehicleProfile vehicle;
  sensitive::RedactionMode redaction_mode = sensitive::RedactionMode::kPlaceholder;
  CommandAction command_action = CommandAction::kBlock;
  RoleAssignment roles;
  std::optional<TaskProfile> task;

  /// Throws kConfigError on out-of-range or misordered thresholds.
  void check() const;
};

/// Step applied to block_threshold for High-sensitivity tasks.
inline constexpr double kSensitivityStep = 0.1;
/// Step applied to behavior_min for High value-alignment tasks.
inline constexpr double kAlignmentStep = 0.25;

/// Policy with the task's offsets applied: High sensitivity lowers the block
/// threshold one step (not below the redact threshold); High value alignment
/// raises behavior_min one step (capped at 1).
GuardPolicy apply_task_profile(GuardPolicy policy, const TaskProfile& task);

nlohmann::json policy_to_json(const GuardPolicy& policy);
/// Reads threshold/mode/weights keys over a default policy. Throws kConfigError.
GuardPolicy policy_from_json(const nlohmann::json& j, GuardPolicy base = {});

enum class Verdict { kAllow, kRedact, kBlock };
enum class Stage { kOutbound, kInbound };
std::string_view verdict_name(Verdict v) noexcept;
std::string_view stage_name(Stage s) noexcept;

struct Reason {
  std::string code;         // exposure_redacted, exposure_blocked, command_violation, ...
  nlohmann::json payload;   // scores, violations; never the detected text
};

struct GuardDecision {
  Verdict verdict = Verdict::kAllow;
  Stage stage = Stage::kOutbound;
  std::vector<Reason> reasons;
  std::optional<std::string> transformed;

  nlohmann::json to_json() const;
};

struct OutboundResult {
  GuardDecision decision;
  std::optional<std::string> forward;  // absent when blocked
  sensitive::ExposureReport exposure;
};

struct InboundResult {
  GuardDecision decision;
  std::optional<std::string> reply;  // absent when blocked
  std::vector<command::CommandEnvelope> commands;
  nlohmann::json validation;  // per-command violations, null when no command
  std::optional<behavior::BehaviorScore> behavior;
};

OutboundResult inspect_outbound(std::string_view prompt, const GuardPolicy& policy,
                                const sensitive::DetectionRuleSet& rules);

InboundResult inspect_inbound(std::string_view response, const GuardPolicy& policy,
                              const behavior::BehaviorScorer& scorer);

/// Conversation state of one session. Only guarded text enters the history.
class Session {
 public:
  Session(std::string id, std::string system_prompt) : id_(std::move(id)), system_prompt_(std::move(system_prompt)) {}
  const std::string& id() const noexcept { return id_; }
  const std::string& system_prompt() const noexcept { return system_prompt_; }
  std::vector<llm::ChatMessage> history() const;
  void append(std::vector<llm::ChatMessage> messages);

 private:
  std::string id_;
  std::string system_prompt_;
  mutable std::mutex mutex_;
  std::vector<llm::ChatMessage> history_;
};

struct TurnResult {
  bool refused = false;
  std::string reply;          // delivered reply, empty when refused
  nlohmann::json refusal;     // structured refusal, null when delivered
  std::vector<GuardDecision> decisions;
  std::optional<llm::UsageStats> usage;
  std::string backend;
  bool backend_failure = false;
  std::vector<command::CommandEnvelope> commands;  // as delivered
};

struct GuardMetrics {
  std::atomic<std::uint64_t> turns{0};
  std::atomic<std::uint64_t> outbound_allow{0}, outbound_redact{0}, outbound_block{0};
  std::atomic<std::uint64_t> inbound_allow{0}, inbound_redact{0}, inbound_block{0};
  std::atomic<std::uint64_t> backend_failures{0};
  nlohmann::json to_json() const;
};

/// Immutable policy plus shared rules, scorer and backends. Thread-safe.
class Guardrail {
 public:
  Guardrail(GuardPolicy policy, std::shared_ptr<const sensitive::DetectionRuleSet> rules,
            std::shared_ptr<const behavior::BehaviorScorer> scorer,
            std::map<std::string, std::shared_ptr<llm::Backend>> backends, std::shared_ptr<AuditLog> audit);

  const GuardPolicy& policy() const noexcept { return policy_; }
  const sensitive::DetectionRuleSet& rules() const noexcept { return *rules_; }
  const behavior::BehaviorScorer& scorer() const noexcept { return *scorer_; }
  AuditLog& audit() const noexcept { return *audit_; }
  const GuardMetrics& metrics() const noexcept { return metrics_; }

  /// Backend assigned to a role. Throws kConfigError when none is assigned.
  std::shared_ptr<llm::Backend> backend_for(BackendRole role) const;

  /// One turn: outbound check on the user content of `messages`, completion
  /// on the role's backend, inbound check on the reply. Appends one audit
  /// record per stage reached. Backend errors become a backend_failure
  /// refusal.
  TurnResult pipeline(Session& session, const std::vector<llm::ChatMessage>& messages,
                      BackendRole role = BackendRole::kData, const llm::CompletionParams& params = {});

 private:
  GuardPolicy policy_;
  std::shared_ptr<const sensitive::DetectionRuleSet> rules_;
  std::shared_ptr<const behavior::BehaviorScorer> scorer_;
  std::map<std::string, std::shared_ptr<llm::Backend>> backends_;
  std::shared_ptr<AuditLog> audit_;
  GuardMetrics metrics_;
};

/// Refusal body sent to clients: reason codes and a fixed message only.
nlohmann::json refusal_json(const GuardDecision& decision);

}  // namespace avguard::guard
