#include "avguard/llm_client.hpp"

#include <httplib.h>

#include <cstdlib>
#include <regex>
#include <thread>

#include <nlohmann/json.hpp>

#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::llm {

using nlohmann::json;

std::string_view role_name(Role r) noexcept {
  switch (r) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

Role role_from_name(std::string_view name) {
  if (name == "system") return Role::kSystem;
  if (name == "user") return Role::kUser;
  if (name == "assistant") return Role::kAssistant;
  throw Error(ErrorCode::kInvalidArgument, "unknown message role '" + std::string(name) + "'");
}

void BackendConfig::check() const {
  if (name.empty()) throw Error(ErrorCode::kConfigError, "backend without a name");
  if (!(timeout_s > 0.0)) throw Error(ErrorCode::kConfigError, "backend '" + name + "': timeout must be > 0");
  if (max_retries < 0) throw Error(ErrorCode::kConfigError, "backend '" + name + "': retries must be >= 0");
}

json messages_to_json(const std::vector<ChatMessage>& messages) {
  json arr = json::array();
  for (const auto& m : messages) arr.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  return arr;
}

std::vector<ChatMessage> messages_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kProtocolError, "'messages' must be an array");
  std::vector<ChatMessage> out;
  for (const auto& m : j) {
    if (!m.is_object() || !m.contains("role") || !m.at("role").is_string()) {
      throw Error(ErrorCode::kProtocolError, "message without a role");
    }
    ChatMessage msg;
    try {
      msg.role = role_from_name(m.at("role").get<std::string>());
    } catch (const Error& e) {
      throw Error(ErrorCode::kProtocolError, e.what());
    }
    const auto content = m.value("content", json());
    if (content.is_string()) {
      msg.content = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) {
        if (part.is_object() && part.value("type", "") == "text") msg.content += part.value("text", "");
      }
    } else if (!content.is_null()) {
      throw Error(ErrorCode::kProtocolError, "message content must be a string");
    }
    out.push_back(std::move(msg));
  }
  return out;
}

json build_request(std::string_view model, const std::vector<ChatMessage>& messages, const CompletionParams& params) {
  json body{{"model", model}, {"messages", messages_to_json(messages)}};
  if (params.temperature) body["temperature"] = *params.temperature;
  if (params.max_tokens) body["max_tokens"] = *params.max_tokens;
  return body;
}

Completion parse_response(const json& body) {
  Completion out;
  try {
    const auto& message = body.at("choices").at(0).at("message");
    const auto& content = message.at("content");
    out.reply.content = content.is_null() ? std::string() : content.get<std::string>();
    if (body.contains("usage") && body.at("usage").is_object()) {
      const auto& u = body.at("usage");
      out.usage.prompt_tokens = u.value("prompt_tokens", std::int64_t{0});
      out.usage.completion_tokens = u.value("completion_tokens", std::int64_t{0});
      out.usage.reported_by_backend = true;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kProtocolError, std::string("unexpected response shape: ") + e.what());
  }
  return out;
}

UsageStats local_usage(const std::vector<ChatMessage>& messages, std::string_view reply,
                       const BpeTokenizer* tokenizer) {
  auto count = [&](std::string_view s) -> std::int64_t {
    return static_cast<std::int64_t>(tokenizer ? tokenizer->count_tokens(s) : approximate_token_count(s));
  };
  UsageStats u;
  for (const auto& m : messages) u.prompt_tokens += count(m.content);
  u.completion_tokens = count(reply);
  return u;
}

// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(BackendConfig config, std::shared_ptr<const BpeTokenizer> tokenizer)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer)) {
  config_.check();
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, kUrl)) {
    throw Error(ErrorCode::kConfigError, "backend '" + config_.name + "': bad endpoint '" + config_.endpoint + "'");
  }
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
}

Completion HttpBackend::complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) {
  if (messages.empty()) throw Error(ErrorCode::kInvalidArgument, "no messages");
  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    const char* token = std::getenv(config_.auth_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw Error(ErrorCode::kAuthFailure, "environment variable " + config_.auth_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const std::string body = build_request(config_.model, messages, params).dump();

  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  for (int attempt = 0;; ++attempt) {
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path_, headers, body, "application/json");
    const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    bool retryable = false;
    std::optional<Error> failure;
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Connection || err == httplib::Error::ConnectionTimeout ||
          err == httplib::Error::Read || err == httplib::Error::Write) {
        retryable = true;
        failure.emplace(ErrorCode::kTimeout, config_.name + ": " + httplib::to_string(err));
      } else {
        failure.emplace(ErrorCode::kProtocolError, config_.name + ": " + httplib::to_string(err));
      }
    } else if (res->status == 401 || res->status == 403) {
      throw Error(ErrorCode::kAuthFailure, config_.name + ": HTTP " + std::to_string(res->status));
    } else if (res->status == 429) {
      retryable = true;
      failure.emplace(ErrorCode::kRateLimited, config_.name + ": HTTP 429");
    } else if (res->status >= 500) {
      retryable = true;
      failure.emplace(ErrorCode::kProtocolError, config_.name + ": HTTP " + std::to_string(res->status));
    } else if (res->status < 200 || res->status >= 300) {
      failure.emplace(ErrorCode::kProtocolError, config_.name + ": HTTP " + std::to_string(res->status));
    }

    if (!failure) {
      const json parsed = json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) throw Error(ErrorCode::kProtocolError, config_.name + ": response is not JSON");
      Completion out = parse_response(parsed);
      const UsageStats local = local_usage(messages, out.reply.content, tokenizer_.get());
      if (out.usage.reported_by_backend) {
        out.usage.local_prompt_tokens = local.prompt_tokens;
        out.usage.local_completion_tokens = local.completion_tokens;
      } else {
        out.usage.prompt_tokens = local.prompt_tokens;
        out.usage.completion_tokens = local.completion_tokens;
      }
      out.usage.latency_s = latency;
      return out;
    }
    if (!retryable || attempt >= config_.max_retries) throw *failure;
    std::this_thread::sleep_for(config_.backoff_base * (1 << std::min(attempt, 10)));
  }
}

// ---------------------------------------------------------------------------

std::string request_key(const std::vector<ChatMessage>& messages) {
  std::string canonical;
  for (const auto& m : messages) {
    canonical += role_name(m.role);
    canonical += '\x1f';
    canonical += m.content;
    canonical += '\x1e';
  }
  return text::hex64(text::fnv1a64(canonical));
}

ScriptedBackend::ScriptedBackend(std::string name, std::shared_ptr<const BpeTokenizer> tokenizer)
    : name_(std::move(name)), tokenizer_(std::move(tokenizer)) {}

void ScriptedBackend::add_fixture(const std::vector<ChatMessage>& request, std::string reply) {
  std::lock_guard lock(mutex_);
  by_key_[request_key(request)] = std::move(reply);
}

void ScriptedBackend::add_reply_for_user(std::string user_content, std::string reply) {
  std::lock_guard lock(mutex_);
  by_user_[std::move(user_content)] = std::move(reply);
}

void ScriptedBackend::load_fixtures(const std::filesystem::path& path) {
  std::size_t line_no = 0;
  for (const auto& line : text::read_lines(path)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (j.is_discarded() || !j.is_object() || !j.contains("reply") || !j.at("reply").is_string()) {
      throw Error(ErrorCode::kConfigError, where + ": expected an object with a string 'reply'");
    }
    auto reply = j.at("reply").get<std::string>();
    if (j.contains("messages")) {
      add_fixture(messages_from_json(j.at("messages")), std::move(reply));
    } else if (j.contains("user") && j.at("user").is_string()) {
      add_reply_for_user(j.at("user").get<std::string>(), std::move(reply));
    } else {
      throw Error(ErrorCode::kConfigError, where + ": fixture needs 'messages' or 'user'");
    }
  }
}

Completion ScriptedBackend::complete(const std::vector<ChatMessage>& messages, const CompletionParams&) {
  const auto start = std::chrono::steady_clock::now();
  std::string reply;
  {
    std::lock_guard lock(mutex_);
    recorded_.push_back(messages);
    if (auto it = by_key_.find(request_key(messages)); it != by_key_.end()) {
      reply = it->second;
    } else {
      const ChatMessage* last_user = nullptr;
      for (const auto& m : messages) {
        if (m.role == Role::kUser) last_user = &m;
      }
      auto hit = last_user ? by_user_.find(last_user->content) : by_user_.end();
      if (hit == by_user_.end()) {
        throw Error(ErrorCode::kScriptMiss, name_ + ": no fixture for request " + request_key(messages));
      }
      reply = hit->second;
    }
  }
  Completion out;
  out.reply.content = std::move(reply);
  out.usage = local_usage(messages, out.reply.content, tokenizer_.get());
  out.usage.latency_s = simulated_latency_s_
                            ? *simulated_latency_s_
                            : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::vector<std::vector<ChatMessage>> ScriptedBackend::requests() const {
  std::lock_guard lock(mutex_);
  return recorded_;
}

std::size_t ScriptedBackend::call_count() const {
  std::lock_guard lock(mutex_);
  return recorded_.size();
}

Completion FunctionBackend::complete(const std::vector<ChatMessage>& messages, const CompletionParams&) {
  const auto start = std::chrono::steady_clock::now();
  Completion out;
  out.reply.content = fn_(messages);
  out.usage = local_usage(messages, out.reply.content, nullptr);
  out.usage.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace avguard::llm
