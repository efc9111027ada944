#pragma once

#include <sys/types.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace repro_lens::util {

class SpawnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpawnOptions {
  std::filesystem::path cwd;
  std::map<std::string, std::string> env_overrides;
  /// Where the child's stdout+stderr go. Empty means /dev/null.
  std::filesystem::path log_file;
  /// Put the child in its own process group so signals reach its descendants.
  bool new_process_group = true;
};

/// Owning handle to a spawned child. Kills the process group on destruction
/// if the child is still running.
class ChildProcess {
 public:
  static ChildProcess spawn(const std::vector<std::string>& argv, const SpawnOptions& opts);

  ChildProcess(ChildProcess&& other) noexcept;
  ChildProcess& operator=(ChildProcess&& other) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;
  ~ChildProcess();

  pid_t pid() const { return pid_; }
  bool running();
  void signal(int sig);
  /// Waits up to `timeout` for exit; returns the raw wait status if it exited.
  std::optional<int> wait_for(std::chrono::milliseconds timeout);
  /// SIGKILL to the group, then reap.
  void kill_and_reap();

 private:
  explicit ChildProcess(pid_t pid, bool group) : pid_(pid), group_(group) {}
  bool poll_exit();

  pid_t pid_ = -1;
  bool group_ = true;
  std::optional<int> status_;
};

struct CommandResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string output;
};

/// Runs argv to completion, capturing merged stdout/stderr.
CommandResult run_command(const std::vector<std::string>& argv,
                          const std::filesystem::path& cwd = {},
                          std::chrono::milliseconds timeout = std::chrono::minutes(30),
                          const std::map<std::string, std::string>& env_overrides = {});

/// Resolves `name` against PATH; returns empty path if not found.
std::filesystem::path find_executable(const std::string& name);

}  // namespace repro_lens::util
