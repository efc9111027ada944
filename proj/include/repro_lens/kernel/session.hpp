#pragma once

#include "repro_lens/env_manager.hpp"
#include "repro_lens/kernel/mock_kernel.hpp"
#include "repro_lens/kernel/transport.hpp"
#include "repro_lens/kernel/wire.hpp"
#include "repro_lens/notebook.hpp"
#include "repro_lens/util/time.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace repro_lens::kernel {

/// A running kernel, however it is hosted.
class KernelProcess {
 public:
  virtual ~KernelProcess() = default;
  virtual bool alive() = 0;
  virtual void interrupt() = 0;
  /// Forced termination; returns once the kernel is gone.
  virtual void kill() = 0;
  virtual bool wait_exit(std::chrono::milliseconds timeout) = 0;
  virtual std::string describe() const = 0;
  /// Recent kernel stderr/stdout, for launch diagnostics.
  virtual std::string log_tail() { return {}; }
};

/// Tracks every kernel launched through the launchers that share it, so tests
/// and shutdown paths can assert that nothing is left running.
class KernelRegistry {
 public:
  void add(std::weak_ptr<KernelProcess> process);
  std::size_t live_count();
  std::size_t launched_count() const;
  void kill_all();

 private:
  mutable std::mutex mu_;
  std::vector<std::weak_ptr<KernelProcess>> processes_;
  std::size_t launched_ = 0;
};

struct LaunchRequest {
  const env::EnvironmentHandle* env = nullptr;
  nb::KernelSpecInfo spec;
  std::filesystem::path cwd;
  ConnectionInfo connection;
  std::chrono::milliseconds timeout{30000};
};

struct Launched {
  std::shared_ptr<KernelProcess> process;
  std::unique_ptr<Transport> transport;
};

class KernelLauncher {
 public:
  virtual ~KernelLauncher() = default;
  /// Throws KernelError(KernelLaunchFailed | HandshakeTimeout).
  virtual Launched launch(const LaunchRequest& request) = 0;
};

/// Starts kernels as child processes from their kernelspec argv and connects
/// over TCP.
class ProcessKernelLauncher final : public KernelLauncher {
 public:
  struct Options {
    /// Kernel stdout/stderr logs. Empty: the system temp directory.
    std::filesystem::path log_dir;
    /// Searched before the standard Jupyter data directories.
    std::vector<std::filesystem::path> kernelspec_dirs;
  };
  explicit ProcessKernelLauncher(KernelRegistry* registry = nullptr) : ProcessKernelLauncher(Options{}, registry) {}
  ProcessKernelLauncher(Options options, KernelRegistry* registry = nullptr);
  Launched launch(const LaunchRequest& request) override;

  /// argv for the kernelspec with the interpreter and connection file filled in.
  std::vector<std::string> kernel_argv(const nb::KernelSpecInfo& spec,
                                       const std::filesystem::path& interpreter,
                                       const std::filesystem::path& connection_file) const;

 private:
  Options options_;
  KernelRegistry* registry_;
};

/// Starts in-process MockKernels. Packages installed in the environment become
/// importable; the kernel's working directory is the request's.
class MockKernelLauncher final : public KernelLauncher {
 public:
  explicit MockKernelLauncher(MockKernelOptions base = {}, KernelRegistry* registry = nullptr);
  Launched launch(const LaunchRequest& request) override;

  /// Adjusts options per launch (e.g. different scripts per notebook).
  std::function<void(MockKernelOptions&, const LaunchRequest&)> customize;

 private:
  MockKernelOptions base_;
  KernelRegistry* registry_;
};

/// Import name for a distribution name ("scikit-learn" -> "sklearn").
std::string import_name_for(const std::string& distribution);

enum class CellStatus { Ok, Error, Timeout, Aborted };

std::string_view to_string(CellStatus s);

struct CellExecutionResult {
  CellStatus status = CellStatus::Ok;
  std::vector<nb::Output> outputs;
  std::optional<std::int64_t> execution_count;
  util::Timestamp started_at{};
  util::Timestamp ended_at{};
  std::int64_t duration_ms = 0;
};

struct StdinEvent {
  std::string prompt;
  bool password = false;
  util::Timestamp at{};
};

struct SessionOptions {
  std::chrono::milliseconds startup_timeout{30000};
  /// Time allowed between an interrupt and the forced kill on cell timeout.
  std::chrono::milliseconds interrupt_grace{2000};
  std::chrono::milliseconds shutdown_grace{2000};
  std::chrono::milliseconds heartbeat_timeout{5000};
  std::chrono::milliseconds kernel_info_retry{1000};
};

/// One kernel serving one notebook. execute() calls must not overlap; the
/// object may move between threads.
class KernelSession {
 public:
  /// Launches, performs the kernel_info handshake and checks the heartbeat.
  /// Throws KernelError(KernelLaunchFailed | HandshakeTimeout | UnsupportedProtocol).
  static std::unique_ptr<KernelSession> start(KernelLauncher& launcher, const env::EnvironmentHandle& env,
                                              const nb::KernelSpecInfo& spec, const std::filesystem::path& cwd,
                                              const SessionOptions& options = {});
  ~KernelSession();
  KernelSession(const KernelSession&) = delete;
  KernelSession& operator=(const KernelSession&) = delete;

  /// Throws KernelError(SessionDead) when the kernel is gone or the transport fails.
  CellExecutionResult execute(const std::string& code, std::chrono::milliseconds timeout);
  /// Graceful shutdown_request, then a forced kill after the grace period. Idempotent.
  void shutdown();

  bool live() const { return live_.load(); }
  const Json& kernel_info() const { return kernel_info_; }
  const std::string& session_id() const { return session_id_; }
  std::vector<StdinEvent> stdin_events() const;
  /// Inbound messages discarded because their parent was not the active request.
  std::size_t unattributed_messages() const { return unattributed_.load(); }
  std::size_t rejected_messages() const { return rejected_.load(); }

 private:
  struct Inbound {
    Channel channel;
    WireMessage msg;
  };

  KernelSession(Launched launched, ConnectionInfo info, SessionOptions options);
  void handshake();
  void receiver_loop();
  void send(Channel channel, const std::string& type, const Json& content, const Json& parent = Json::object());
  /// Waits for the next inbound message until `deadline`; nullopt on timeout.
  /// Throws KernelError(SessionDead) if the transport broke.
  std::optional<Inbound> pop(std::chrono::steady_clock::time_point deadline);
  void kill_kernel();
  void stop_receiver();

  std::shared_ptr<KernelProcess> process_;
  std::unique_ptr<Transport> transport_;
  ConnectionInfo info_;
  SessionOptions options_;
  std::string session_id_ = new_uuid();
  Json kernel_info_;

  std::thread receiver_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> live_{false};
  bool shut_down_ = false;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Inbound> inbox_;
  bool broken_ = false;
  std::string broken_reason_;
  std::vector<StdinEvent> stdin_events_;
  std::atomic<std::size_t> unattributed_{0};
  std::atomic<std::size_t> rejected_{0};
};

std::unique_ptr<KernelSession> start_kernel(KernelLauncher& launcher, const env::EnvironmentHandle& env,
                                            const nb::KernelSpecInfo& spec, const std::filesystem::path& cwd,
                                            const SessionOptions& options = {});
CellExecutionResult execute(KernelSession& session, const std::string& code, std::chrono::milliseconds timeout);
void shutdown(KernelSession& session);

}  // namespace repro_lens::kernel
