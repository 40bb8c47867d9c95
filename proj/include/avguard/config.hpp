#pragma once

// Service configuration file and the runtime objects built from it.
//
// Relative paths are resolved against the directory of the config file.
// Secrets are never read from the file; backends name an environment
// variable instead (auth_env).

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avguard/audit_log.hpp"
#include "avguard/behavior.hpp"
#include "avguard/bpe_tokenizer.hpp"
#include "avguard/guardrail.hpp"
#include "avguard/llm_client.hpp"
#include "avguard/sensitive_data.hpp"

namespace avguard::config {

struct BackendSpec {
  enum class Kind { kHttp, kScripted };
  Kind kind = Kind::kScripted;
  llm::BackendConfig http;               // kind == kHttp; http.name is the backend name
  std::optional<std::filesystem::path> fixtures;  // kind == kScripted
  std::map<std::string, std::string> replies;     // kind == kScripted, last user content -> reply
  std::optional<double> simulated_latency_s;      // kind == kScripted
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8088;
  /// Environment variable holding the shared client token; empty = no auth.
  std::string auth_token_env;
  int threads = 8;
};

struct AppConfig {
  guard::GuardPolicy policy;
  std::vector<BackendSpec> backends;
  std::optional<std::filesystem::path> ruleset;
  std::optional<std::filesystem::path> rule_table;
  std::optional<std::filesystem::path> judge_prompt;
  std::optional<std::filesystem::path> task_profiles;
  std::optional<std::string> task;
  std::optional<std::filesystem::path> audit_log;
  std::optional<std::filesystem::path> vocab;
  ServerConfig server;

  const BackendSpec* find_backend(const std::string& name) const;
};

/// Throws Error(kConfigError).
AppConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
AppConfig load_config(const std::filesystem::path& path);

/// "host:port", ":port" or "port".
void parse_listen(const std::string& spec, std::string& host, int& port);

std::shared_ptr<llm::Backend> make_backend(const BackendSpec& spec, std::shared_ptr<const llm::BpeTokenizer> tokenizer);

struct Runtime {
  AppConfig config;
  std::shared_ptr<const llm::BpeTokenizer> tokenizer;  // null without a vocab file
  std::shared_ptr<const sensitive::DetectionRuleSet> rules;
  std::shared_ptr<const behavior::BehaviorScorer> scorer;
  std::map<std::string, std::shared_ptr<llm::Backend>> backends;
  std::shared_ptr<guard::AuditLog> audit;

  std::shared_ptr<guard::Guardrail> make_guardrail() const;
};

/// Loads rules, scorer, tokenizer and backends, opens the audit log, and
/// applies the selected task profile to the policy.
Runtime build_runtime(AppConfig config);

}  // namespace avguard::config
