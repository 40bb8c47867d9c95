#include "avguard/proxy_server.hpp"

#include <chrono>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "avguard/error.hpp"

namespace avguard::proxy {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json client_error(std::string_view type, std::string_view message) {
  return json{{"error", {{"type", type}, {"message", message}}}};
}

}  // namespace

ProxyServer::ProxyServer(std::shared_ptr<guard::Guardrail> guard, ProxyOptions options)
    : guard_(std::move(guard)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  if (!guard_) throw Error(ErrorCode::kInvalidArgument, "proxy needs a guardrail");
  const int threads = std::max(1, options_.threads);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  // httplib's default sets SO_REUSEPORT, which would let a second proxy
  // share a port that is already in use. Quick restarts only need REUSEADDR.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  install_routes();
}

ProxyServer::~ProxyServer() { stop(); }

int ProxyServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorCode::kIoError, "cannot bind " + host);
  } else {
    if (!server_->bind_to_port(host, port)) {
      throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  return port_;
}

void ProxyServer::run() {
  if (port_ < 0) throw Error(ErrorCode::kInvalidArgument, "bind() before run()");
  server_->listen_after_bind();
}

void ProxyServer::start() {
  if (port_ < 0) throw Error(ErrorCode::kInvalidArgument, "bind() before start()");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void ProxyServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void ProxyServer::install_routes() {
  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"audit_records", guard_->audit().size()}});
  });

  server_->Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    json m = guard_->metrics().to_json();
    m["http_requests"] = http_requests_.load();
    m["http_rejected"] = http_rejected_.load();
    send_json(res, 200, m);
  });

  server_->Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
    ++http_requests_;
    if (!options_.auth_token.empty() && req.get_header_value("Authorization") != "Bearer " + options_.auth_token) {
      ++http_rejected_;
      send_json(res, 401, client_error("unauthorized", "missing or wrong bearer token"));
      return;
    }
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("messages")) {
      ++http_rejected_;
      send_json(res, 400, client_error("invalid_request", "body must be a JSON object with messages"));
      return;
    }
    if (body.value("stream", false)) {
      ++http_rejected_;
      send_json(res, 400, client_error("invalid_request", "streaming is not supported"));
      return;
    }

    std::vector<llm::ChatMessage> messages;
    llm::CompletionParams params;
    guard::BackendRole role = guard::BackendRole::kData;
    try {
      messages = llm::messages_from_json(body.at("messages"));
      if (body.contains("temperature") && body.at("temperature").is_number()) {
        params.temperature = body.at("temperature").get<double>();
      }
      if (body.contains("max_tokens") && body.at("max_tokens").is_number_integer()) {
        params.max_tokens = body.at("max_tokens").get<int>();
      }
      std::string role_name = req.get_header_value("X-Guard-Role");
      if (body.contains("guard_role")) role_name = body.at("guard_role").get<std::string>();
      if (!role_name.empty()) role = guard::backend_role_from_name(role_name);
    } catch (const std::exception& e) {
      ++http_rejected_;
      send_json(res, 400, client_error("invalid_request", e.what()));
      return;
    }

    const std::uint64_t n = ++request_counter_;
    std::string session_id = req.get_header_value("X-Session-Id");
    if (session_id.empty()) session_id = body.value("user", std::string());
    if (session_id.empty()) session_id = "req-" + std::to_string(n);

    // Leading system messages form the session prompt; the rest is the turn.
    std::string system_prompt;
    std::size_t first = 0;
    while (first < messages.size() && messages[first].role == llm::Role::kSystem) {
      if (!system_prompt.empty()) system_prompt += "\n";
      system_prompt += messages[first].content;
      ++first;
    }
    std::vector<llm::ChatMessage> turn_messages(messages.begin() + static_cast<std::ptrdiff_t>(first), messages.end());
    guard::Session session(session_id, system_prompt);

    guard::TurnResult turn;
    try {
      turn = guard_->pipeline(session, turn_messages, role, params);
    } catch (const Error& e) {
      send_json(res, 500, client_error("internal_error", error_code_name(e.code())));
      return;
    }

    json decisions = json::array();
    for (const auto& d : turn.decisions) decisions.push_back(d.to_json());
    if (turn.refused) {
      json out = turn.refusal;
      out["session_id"] = session_id;
      out["guard"] = {{"decisions", decisions}};
      send_json(res, turn.backend_failure ? 502 : 403, out);
      return;
    }

    const auto created = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
    json usage = json::object();
    if (turn.usage) {
      usage = {{"prompt_tokens", turn.usage->prompt_tokens},
               {"completion_tokens", turn.usage->completion_tokens},
               {"total_tokens", turn.usage->prompt_tokens + turn.usage->completion_tokens}};
    }
    json out{{"id", "chatcmpl-avguard-" + std::to_string(n)},
             {"object", "chat.completion"},
             {"created", created},
             {"model", body.value("model", turn.backend)},
             {"choices",
              json::array({{{"index", 0},
                            {"message", {{"role", "assistant"}, {"content", turn.reply}}},
                            {"finish_reason", "stop"}}})},
             {"usage", usage},
             {"session_id", session_id},
             {"guard", {{"decisions", decisions}}}};
    send_json(res, 200, out);
  });
}

}  // namespace avguard::proxy
