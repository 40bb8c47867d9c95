#pragma once

// HTTP front end for the guard pipeline. Speaks the chat-completions wire
// shape on /v1/chat/completions and exposes /health and /metrics.

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "avguard/guardrail.hpp"

namespace httplib {
class Server;
}

namespace avguard::proxy {

struct ProxyOptions {
  std::string auth_token;  // required bearer token; empty = open
  int threads = 8;
};

class ProxyServer {
 public:
  ProxyServer(std::shared_ptr<guard::Guardrail> guard, ProxyOptions options = {});
  ~ProxyServer();
  ProxyServer(const ProxyServer&) = delete;
  ProxyServer& operator=(const ProxyServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port. Throws
  /// Error(kIoError) when the address cannot be bound.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires bind().
  void run();
  /// run() on a background thread.
  void start();
  void stop();
  int port() const noexcept { return port_; }

 private:
  void install_routes();

  std::shared_ptr<guard::Guardrail> guard_;
  ProxyOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<std::uint64_t> request_counter_{0};
  std::atomic<std::uint64_t> http_requests_{0};
  std::atomic<std::uint64_t> http_rejected_{0};
};

}  // namespace avguard::proxy
