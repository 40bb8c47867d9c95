#include <pthread.h>
#include <signal.h>

#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "avguard/cli.hpp"

int main(int argc, char** argv) {
  // Signals are taken by a dedicated thread so serve can stop cleanly.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread([set] {
    int sig = 0;
    if (sigwait(&set, &sig) == 0) avguard::cli::request_shutdown();
  }).detach();

  std::vector<std::string> args(argv + 1, argv + argc);
  return avguard::cli::run_cli(args, std::cout, std::cerr);
}
