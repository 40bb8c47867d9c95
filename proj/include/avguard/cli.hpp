#pragma once

// Command-line front end. Exit codes: 0 success, 1 operational failure,
// 2 usage error.

#include <iosfwd>
#include <string>
#include <vector>

namespace avguard::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable consulted when --config is not given.
inline constexpr const char* kConfigEnv = "AVGUARD_CONFIG";

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Asks a running `serve` to shut down. Safe to call from any thread.
void request_shutdown() noexcept;

}  // namespace avguard::cli
