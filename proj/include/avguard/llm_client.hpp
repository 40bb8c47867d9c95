#pragma once

// Chat-completion backends: an HTTP client for the chat-completions wire
// protocol and a deterministic scripted backend for offline runs.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avguard/bpe_tokenizer.hpp"

namespace avguard::llm {

enum class Role { kSystem, kUser, kAssistant };

std::string_view role_name(Role r) noexcept;
/// Throws Error(kInvalidArgument) for anything but system/user/assistant.
Role role_from_name(std::string_view name);

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct CompletionParams {
  std::optional<double> temperature;
  std::optional<int> max_tokens;
};

struct UsageStats {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_s = 0.0;
  bool reported_by_backend = false;
  // Local counts kept alongside backend-reported ones for the audit trail.
  std::optional<std::int64_t> local_prompt_tokens;
  std::optional<std::int64_t> local_completion_tokens;
};

struct Completion {
  ChatMessage reply{Role::kAssistant, {}};
  UsageStats usage;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string_view name() const noexcept = 0;
  /// Thread-safe. Throws Error with kTimeout, kAuthFailure, kRateLimited,
  /// kProtocolError or kScriptMiss.
  virtual Completion complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) = 0;
};

struct BackendConfig {
  std::string name;
  std::string endpoint;  // e.g. https://api.openai.com/v1/chat/completions
  std::string model;
  std::string auth_env;  // environment variable holding the bearer token; empty = no auth
  double timeout_s = 30.0;
  int max_retries = 2;
  std::chrono::milliseconds backoff_base{200};

  void check() const;
};

// Wire format -------------------------------------------------------------

nlohmann::json messages_to_json(const std::vector<ChatMessage>& messages);
std::vector<ChatMessage> messages_from_json(const nlohmann::json& j);
nlohmann::json build_request(std::string_view model, const std::vector<ChatMessage>& messages,
                             const CompletionParams& params);
/// Reads choices[0].message and the optional usage object. Throws kProtocolError.
Completion parse_response(const nlohmann::json& body);

/// Token counts when the backend reports none: local BPE when a tokenizer
/// is given, else the whitespace approximation.
UsageStats local_usage(const std::vector<ChatMessage>& messages, std::string_view reply,
                       const BpeTokenizer* tokenizer);

// Backends ----------------------------------------------------------------

/// Chat-completions over HTTP(S). RateLimited and 5xx replies are retried
/// with exponential backoff up to max_retries.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config, std::shared_ptr<const BpeTokenizer> tokenizer = nullptr);
  std::string_view name() const noexcept override { return config_.name; }
  Completion complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;
  const BackendConfig& config() const noexcept { return config_; }

 private:
  BackendConfig config_;
  std::shared_ptr<const BpeTokenizer> tokenizer_;
  std::string scheme_host_port_;
  std::string path_;
};

/// Key of a request in a scripted fixture table: FNV-1a 64 over the
/// role/content sequence, as 16 hex digits.
std::string request_key(const std::vector<ChatMessage>& messages);

/// Deterministic offline backend. Replies are looked up by the full request
/// key first, then by the content of the last user message. Every request
/// is recorded. Holds no endpoint, so it cannot reach the network.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::string name = "scripted", std::shared_ptr<const BpeTokenizer> tokenizer = nullptr);

  void add_fixture(const std::vector<ChatMessage>& request, std::string reply);
  void add_reply_for_user(std::string user_content, std::string reply);
  /// Fixture file: one JSON object per line, either
  /// {"messages":[...],"reply":"..."} or {"user":"...","reply":"..."}.
  void load_fixtures(const std::filesystem::path& path);

  std::string_view name() const noexcept override { return name_; }
  Completion complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;

  std::vector<std::vector<ChatMessage>> requests() const;
  std::size_t call_count() const;

  /// Report this latency instead of the measured one, for runs whose
  /// outputs must not depend on wall-clock time.
  void set_simulated_latency(std::optional<double> seconds) { simulated_latency_s_ = seconds; }

 private:
  std::optional<double> simulated_latency_s_;
  std::string name_;
  std::shared_ptr<const BpeTokenizer> tokenizer_;
  std::map<std::string, std::string> by_key_;
  std::map<std::string, std::string> by_user_;
  mutable std::mutex mutex_;
  std::vector<std::vector<ChatMessage>> recorded_;
};

/// Adapts a plain function into a backend; handy for tests and stubs.
class FunctionBackend final : public Backend {
 public:
  using Fn = std::function<std::string(const std::vector<ChatMessage>&)>;
  FunctionBackend(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string_view name() const noexcept override { return name_; }
  Completion complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;

 private:
  std::string name_;
  Fn fn_;
};

}  // namespace avguard::llm
