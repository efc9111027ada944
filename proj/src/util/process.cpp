#include "repro_lens/util/process.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <algorithm>
#include <cstring>
#include <sstream>
#include <thread>

extern char** environ;

namespace repro_lens::util {

namespace {

std::vector<std::string> build_environment(const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> merged;
  for (char** e = environ; e && *e; ++e) {
    std::string kv(*e);
    auto eq = kv.find('=');
    if (eq != std::string::npos) merged[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const auto& [k, v] : overrides) merged[k] = v;
  std::vector<std::string> out;
  out.reserve(merged.size());
  for (const auto& [k, v] : merged) out.push_back(k + "=" + v);
  return out;
}

std::vector<char*> c_strings(std::vector<std::string>& strings) {
  std::vector<char*> out;
  out.reserve(strings.size() + 1);
  for (auto& s : strings) out.push_back(s.data());
  out.push_back(nullptr);
  return out;
}

// Forks and execs; `child_fd` (if >= 0) becomes the child's stdout and stderr.
pid_t fork_exec(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                const std::map<std::string, std::string>& env_overrides, int child_fd,
                bool new_group) {
  if (argv.empty()) throw SpawnError("empty argv");
  std::vector<std::string> args = argv;
  std::vector<std::string> env = build_environment(env_overrides);
  auto c_args = c_strings(args);
  auto c_env = c_strings(env);

  // Exec failure is reported through a close-on-exec pipe.
  int errpipe[2];
  if (pipe2(errpipe, O_CLOEXEC) != 0) throw SpawnError(std::strerror(errno));

  pid_t pid = fork();
  if (pid < 0) {
    close(errpipe[0]);
    close(errpipe[1]);
    throw SpawnError(std::strerror(errno));
  }
  if (pid == 0) {
    close(errpipe[0]);
    if (new_group) setpgid(0, 0);
    int devnull = open("/dev/null", O_RDONLY);
    if (devnull >= 0) dup2(devnull, STDIN_FILENO);
    int out = child_fd >= 0 ? child_fd : open("/dev/null", O_WRONLY);
    if (out >= 0) {
      dup2(out, STDOUT_FILENO);
      dup2(out, STDERR_FILENO);
    }
    if (!cwd.empty() && chdir(cwd.c_str()) != 0) {
      int err = errno;
      (void)!write(errpipe[1], &err, sizeof err);
      _exit(127);
    }
    execvpe(c_args[0], c_args.data(), c_env.data());
    int err = errno;
    (void)!write(errpipe[1], &err, sizeof err);
    _exit(127);
  }
  close(errpipe[1]);
  int child_errno = 0;
  ssize_t n;
  do {
    n = read(errpipe[0], &child_errno, sizeof child_errno);
  } while (n < 0 && errno == EINTR);
  close(errpipe[0]);
  if (n == static_cast<ssize_t>(sizeof child_errno)) {
    waitpid(pid, nullptr, 0);
    throw SpawnError("cannot execute " + argv[0] + ": " + std::strerror(child_errno));
  }
  return pid;
}

}  // namespace

ChildProcess ChildProcess::spawn(const std::vector<std::string>& argv, const SpawnOptions& opts) {
  int fd = -1;
  if (!opts.log_file.empty()) {
    fd = open(opts.log_file.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw SpawnError("cannot open log " + opts.log_file.string());
  }
  pid_t pid;
  try {
    pid = fork_exec(argv, opts.cwd, opts.env_overrides, fd, opts.new_process_group);
  } catch (...) {
    if (fd >= 0) close(fd);
    throw;
  }
  if (fd >= 0) close(fd);
  return ChildProcess(pid, opts.new_process_group);
}

ChildProcess::ChildProcess(ChildProcess&& other) noexcept
    : pid_(other.pid_), group_(other.group_), status_(other.status_) {
  other.pid_ = -1;
}

ChildProcess& ChildProcess::operator=(ChildProcess&& other) noexcept {
  if (this != &other) {
    if (pid_ > 0 && !status_) kill_and_reap();
    pid_ = other.pid_;
    group_ = other.group_;
    status_ = other.status_;
    other.pid_ = -1;
  }
  return *this;
}

ChildProcess::~ChildProcess() {
  if (pid_ > 0 && !status_) kill_and_reap();
}

bool ChildProcess::poll_exit() {
  if (status_) return true;
  if (pid_ <= 0) return true;
  int st = 0;
  pid_t r = waitpid(pid_, &st, WNOHANG);
  if (r == pid_) {
    status_ = st;
    return true;
  }
  if (r < 0 && errno == ECHILD) {
    status_ = 0;
    return true;
  }
  return false;
}

bool ChildProcess::running() { return !poll_exit(); }

void ChildProcess::signal(int sig) {
  if (pid_ <= 0 || poll_exit()) return;
  if (group_) {
    ::kill(-pid_, sig);
  } else {
    ::kill(pid_, sig);
  }
}

std::optional<int> ChildProcess::wait_for(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (!poll_exit()) {
    if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return status_;
}

void ChildProcess::kill_and_reap() {
  if (pid_ <= 0) return;
  if (!poll_exit()) {
    if (group_) ::kill(-pid_, SIGKILL);
    ::kill(pid_, SIGKILL);
    int st = 0;
    if (waitpid(pid_, &st, 0) == pid_) status_ = st;
    else status_ = 0;
  } else if (group_) {
    // Leader is gone; sweep any stragglers left in its group.
    ::kill(-pid_, SIGKILL);
  }
}

CommandResult run_command(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          std::chrono::milliseconds timeout,
                          const std::map<std::string, std::string>& env_overrides) {
  CommandResult result;
  int fds[2];
  if (pipe2(fds, O_CLOEXEC) != 0) throw SpawnError(std::strerror(errno));
  pid_t pid;
  try {
    // The write end must survive exec in the child; dup2 clears CLOEXEC.
    pid = fork_exec(argv, cwd, env_overrides, fds[1], true);
  } catch (...) {
    close(fds[0]);
    close(fds[1]);
    throw;
  }
  close(fds[1]);
  auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  bool exited = false;
  char buf[4096];
  for (;;) {
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      result.timed_out = true;
      break;
    }
    pollfd pfd{fds[0], POLLIN, 0};
    int pr = poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 200)));
    if (pr > 0) {
      ssize_t n = read(fds[0], buf, sizeof buf);
      if (n > 0) {
        result.output.append(buf, static_cast<std::size_t>(n));
        continue;
      }
      if (n == 0) break;  // EOF: every writer closed
      if (errno == EINTR) continue;
      break;
    }
  }
  close(fds[0]);
  if (result.timed_out) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
  }
  while (!exited) {
    pid_t r = waitpid(pid, &status, 0);
    if (r == pid || (r < 0 && errno != EINTR)) exited = true;
  }
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  if (result.timed_out) result.exit_code = -1;
  return result;
}

std::filesystem::path find_executable(const std::string& name) {
  if (name.find('/') != std::string::npos) {
    std::filesystem::path p(name);
    return access(p.c_str(), X_OK) == 0 ? p : std::filesystem::path{};
  }
  const char* path = std::getenv("PATH");
  if (!path) return {};
  std::stringstream ss(path);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (dir.empty()) continue;
    auto candidate = std::filesystem::path(dir) / name;
    if (access(candidate.c_str(), X_OK) == 0 && std::filesystem::is_regular_file(candidate)) {
      return candidate;
    }
  }
  return {};
}

}  // namespace repro_lens::util
