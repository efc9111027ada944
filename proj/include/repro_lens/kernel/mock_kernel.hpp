#pragma once

#include "repro_lens/kernel/transport.hpp"
#include "repro_lens/notebook.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace repro_lens::kernel {

/// Scripted behaviour for one cell.
struct MockResponse {
  std::vector<nb::Output> outputs;
  /// Present: the reply status is "error" and this is published last.
  std::optional<nb::ErrorOutput> error;
  bool busy_forever = false;
  std::chrono::milliseconds delay{0};
  /// Issue an input_request before publishing outputs.
  bool request_input = false;
  /// Reply with status "aborted".
  bool abort = false;
  /// The kernel process dies after publishing busy.
  bool crash = false;
};

struct MockKernelOptions {
  std::string protocol_version = "5.3";
  std::string language_version = "3.10.12";
  bool answer_kernel_info = true;
  bool answer_heartbeat = true;
  /// Exact-source overrides consulted before the interpreter.
  std::map<std::string, MockResponse> script;
  std::function<std::optional<MockResponse>(const std::string& code)> script_fn;
  /// Fall back to the built-in Python-subset interpreter for unscripted code.
  bool interpret = true;
  /// Top-level module names importable beyond the standard library.
  std::set<std::string> importable;
  std::filesystem::path cwd;
  std::uint64_t seed = 0;
  /// Inject iopub traffic whose parent is some other request, and shuffle the
  /// reply/idle order, to exercise output attribution.
  bool noise = false;
  std::uint64_t noise_seed = 1;
};

/// Frames in flight between a MockTransport and its MockKernel.
struct MockWire {
  std::mutex mu;
  std::condition_variable client_cv;
  std::condition_variable kernel_cv;
  std::deque<ChannelMessage> to_client;
  std::deque<std::vector<std::string>> shell_in, control_in, stdin_in;
  bool kernel_gone = false;
  bool client_closed = false;
};

class MockKernel;

class MockTransport final : public Transport {
 public:
  MockTransport(std::shared_ptr<MockWire> wire, std::shared_ptr<MockKernel> kernel);
  void send(Channel channel, const std::vector<std::string>& frames) override;
  std::optional<ChannelMessage> receive(std::chrono::milliseconds timeout) override;
  bool ping(std::chrono::milliseconds timeout) override;
  void close() override;

 private:
  std::shared_ptr<MockWire> wire_;
  std::shared_ptr<MockKernel> kernel_;
};

/// In-process kernel speaking the signed wire format over a MockWire.
class MockKernel : public std::enable_shared_from_this<MockKernel> {
 public:
  static std::shared_ptr<MockKernel> start(MockKernelOptions options, std::string key);
  ~MockKernel();

  std::unique_ptr<MockTransport> connect();

  bool alive() const { return !gone_.load(); }
  /// Like SIGINT: the running cell raises KeyboardInterrupt.
  void interrupt();
  /// Abrupt death: no further messages are sent.
  void kill();
  bool wait_exit(std::chrono::milliseconds timeout);

  bool answers_heartbeat() const { return options_.answer_heartbeat; }
  std::size_t executions() const { return executions_.load(); }
  std::size_t rejected_signatures() const { return rejected_.load(); }

 private:
  MockKernel(MockKernelOptions options, std::string key);
  void shell_loop();
  void control_loop();
  void handle_execute(const WireMessage& req);
  void publish(Channel channel, const std::string& type, const Json& content, const Json& parent);
  void publish_noise(const std::string& label);
  void mark_gone();
  /// Sleeps unless interrupted or killed; returns false when cut short.
  bool pause(std::chrono::milliseconds d);
  std::optional<WireMessage> next(std::deque<std::vector<std::string>>& queue);

  MockKernelOptions options_;
  std::string key_;
  std::string session_ = new_uuid();
  std::shared_ptr<MockWire> wire_ = std::make_shared<MockWire>();
  std::atomic<bool> gone_{false};
  std::atomic<bool> interrupt_{false};
  std::atomic<std::size_t> executions_{0};
  std::atomic<std::size_t> rejected_{0};
  std::int64_t execution_count_ = 0;
  std::mutex rng_mu_;
  std::uint64_t noise_state_;
  std::thread shell_thread_, control_thread_;
  struct Interp;
  std::unique_ptr<Interp> interp_;
};

}  // namespace repro_lens::kernel
