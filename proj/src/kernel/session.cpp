#include "repro_lens/kernel/session.hpp"

#include "repro_lens/util/process.hpp"

#include <signal.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace repro_lens::kernel {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

// ---------------------------------------------------------------------------
// Registry

void KernelRegistry::add(std::weak_ptr<KernelProcess> process) {
  std::lock_guard lock(mu_);
  processes_.push_back(std::move(process));
  ++launched_;
}

std::size_t KernelRegistry::live_count() {
  std::vector<std::shared_ptr<KernelProcess>> held;
  {
    std::lock_guard lock(mu_);
    for (auto& w : processes_) {
      if (auto p = w.lock()) held.push_back(std::move(p));
    }
  }
  return static_cast<std::size_t>(std::count_if(held.begin(), held.end(), [](auto& p) { return p->alive(); }));
}

std::size_t KernelRegistry::launched_count() const {
  std::lock_guard lock(mu_);
  return launched_;
}

void KernelRegistry::kill_all() {
  std::vector<std::shared_ptr<KernelProcess>> held;
  {
    std::lock_guard lock(mu_);
    for (auto& w : processes_) {
      if (auto p = w.lock()) held.push_back(std::move(p));
    }
  }
  for (auto& p : held) p->kill();
}

// ---------------------------------------------------------------------------
// Child-process kernels

namespace {

class ProcessKernel final : public KernelProcess {
 public:
  ProcessKernel(util::ChildProcess child, fs::path connection_file, fs::path log_file)
      : child_(std::move(child)), connection_file_(std::move(connection_file)), log_file_(std::move(log_file)) {}

  ~ProcessKernel() override {
    kill();
    std::error_code ec;
    fs::remove(log_file_, ec);
  }

  bool alive() override {
    std::lock_guard lock(mu_);
    return child_.running();
  }
  void interrupt() override {
    std::lock_guard lock(mu_);
    if (child_.running()) child_.signal(SIGINT);
  }
  void kill() override {
    std::lock_guard lock(mu_);
    child_.kill_and_reap();
    std::error_code ec;
    fs::remove(connection_file_, ec);
  }
  bool wait_exit(std::chrono::milliseconds timeout) override {
    std::lock_guard lock(mu_);
    bool exited = child_.wait_for(timeout).has_value() || !child_.running();
    if (exited) {
      std::error_code ec;
      fs::remove(connection_file_, ec);
    }
    return exited;
  }
  std::string describe() const override { return "pid " + std::to_string(child_.pid()); }
  std::string log_tail() override {
    std::ifstream in(log_file_, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string all = ss.str();
    return all.size() > 4000 ? all.substr(all.size() - 4000) : all;
  }

 private:
  std::mutex mu_;
  util::ChildProcess child_;
  fs::path connection_file_;
  fs::path log_file_;
};

std::vector<fs::path> standard_kernelspec_dirs(const fs::path& interpreter) {
  std::vector<fs::path> dirs;
  if (const char* jp = std::getenv("JUPYTER_PATH")) {
    std::stringstream ss(jp);
    std::string item;
    while (std::getline(ss, item, ':')) {
      if (!item.empty()) dirs.push_back(fs::path(item) / "kernels");
    }
  }
  if (!interpreter.empty()) dirs.push_back(interpreter.parent_path().parent_path() / "share/jupyter/kernels");
  if (const char* home = std::getenv("HOME")) dirs.push_back(fs::path(home) / ".local/share/jupyter/kernels");
  dirs.emplace_back("/usr/local/share/jupyter/kernels");
  dirs.emplace_back("/usr/share/jupyter/kernels");
  return dirs;
}

bool is_python_argv0(const std::string& arg) {
  std::string base = fs::path(arg).filename().string();
  return base.rfind("python", 0) == 0;
}

}  // namespace

ProcessKernelLauncher::ProcessKernelLauncher(Options options, KernelRegistry* registry)
    : options_(std::move(options)), registry_(registry) {}

std::vector<std::string> ProcessKernelLauncher::kernel_argv(const nb::KernelSpecInfo& spec,
                                                            const fs::path& interpreter,
                                                            const fs::path& connection_file) const {
  std::vector<std::string> argv;
  auto dirs = options_.kernelspec_dirs;
  auto standard = standard_kernelspec_dirs(interpreter);
  dirs.insert(dirs.end(), standard.begin(), standard.end());
  for (const auto& dir : dirs) {
    if (spec.name.empty() || spec.name.find('/') != std::string::npos) break;
    fs::path file = dir / spec.name / "kernel.json";
    std::ifstream in(file);
    if (!in) continue;
    try {
      Json j = Json::parse(in);
      if (j.contains("argv") && j["argv"].is_array() && !j["argv"].empty()) {
        for (const auto& a : j["argv"]) argv.push_back(a.get<std::string>());
        break;
      }
    } catch (const std::exception&) {
      continue;
    }
  }
  if (argv.empty()) argv = {"python", "-m", "ipykernel_launcher", "-f", "{connection_file}"};
  if (is_python_argv0(argv[0])) argv[0] = interpreter.string();
  for (auto& a : argv) {
    for (std::size_t at = a.find("{connection_file}"); at != std::string::npos;
         at = a.find("{connection_file}", at)) {
      a.replace(at, 17, connection_file.string());
      at += connection_file.string().size();
    }
  }
  return argv;
}

Launched ProcessKernelLauncher::launch(const LaunchRequest& req) {
  if (!req.env) throw KernelError(KernelErrorKind::KernelLaunchFailed, "no environment");
  const fs::path interpreter = req.env->interpreter_path;
  if (interpreter.empty() || ::access(interpreter.c_str(), X_OK) != 0) {
    throw KernelError(KernelErrorKind::KernelLaunchFailed,
                      "interpreter not executable: " + interpreter.string());
  }
  std::string tag = new_uuid().substr(0, 8);
  fs::path conn_file = req.cwd / (".repro-lens-kernel-" + tag + ".json");
  {
    std::ofstream out(conn_file, std::ios::trunc);
    if (!out) {
      throw KernelError(KernelErrorKind::KernelLaunchFailed, "cannot write connection file " + conn_file.string());
    }
    out << req.connection.to_json().dump(2);
  }
  ::chmod(conn_file.c_str(), 0600);

  fs::path log_dir = options_.log_dir.empty() ? fs::temp_directory_path() / "repro-lens-kernels" : options_.log_dir;
  std::error_code ec;
  fs::create_directories(log_dir, ec);
  fs::path log_file = log_dir / ("kernel-" + tag + ".log");

  util::SpawnOptions spawn;
  spawn.cwd = req.cwd;
  spawn.log_file = log_file;
  std::string path_env = interpreter.parent_path().string();
  if (const char* p = std::getenv("PATH")) path_env += std::string(":") + p;
  // JPY_PARENT_PID makes the kernel exit if this process dies without cleaning up.
  spawn.env_overrides = {{"PATH", path_env},
                         {"PYTHONUNBUFFERED", "1"},
                         {"JPY_SESSION_NAME", ""},
                         {"JPY_PARENT_PID", std::to_string(::getpid())}};
  if (fs::exists(interpreter.parent_path().parent_path() / "pyvenv.cfg")) {
    spawn.env_overrides["VIRTUAL_ENV"] = interpreter.parent_path().parent_path().string();
  }

  std::shared_ptr<ProcessKernel> process;
  try {
    auto child = util::ChildProcess::spawn(kernel_argv(req.spec, interpreter, conn_file), spawn);
    process = std::make_shared<ProcessKernel>(std::move(child), conn_file, log_file);
  } catch (const util::SpawnError& e) {
    fs::remove(conn_file, ec);
    throw KernelError(KernelErrorKind::KernelLaunchFailed, e.what());
  }
  if (registry_) registry_->add(process);

  auto deadline = std::chrono::steady_clock::now() + req.timeout;
  std::string last_error;
  while (std::chrono::steady_clock::now() < deadline) {
    if (!process->alive()) {
      std::string tail = process->log_tail();
      process->kill();
      throw KernelError(KernelErrorKind::KernelLaunchFailed, "kernel exited during startup: " + tail);
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    try {
      auto transport = ZmtpTransport::connect(req.connection, std::clamp(left, 1ms, std::chrono::milliseconds(500)));
      return Launched{process, std::move(transport)};
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  process->kill();
  throw KernelError(KernelErrorKind::HandshakeTimeout, "kernel did not accept connections: " + last_error);
}

// ---------------------------------------------------------------------------
// Mock kernels

namespace {

class MockProcess final : public KernelProcess {
 public:
  explicit MockProcess(std::shared_ptr<MockKernel> kernel) : kernel_(std::move(kernel)) {}
  bool alive() override { return kernel_->alive(); }
  void interrupt() override { kernel_->interrupt(); }
  void kill() override { kernel_->kill(); }
  bool wait_exit(std::chrono::milliseconds timeout) override { return kernel_->wait_exit(timeout); }
  std::string describe() const override { return "mock kernel"; }

 private:
  std::shared_ptr<MockKernel> kernel_;
};

}  // namespace

std::string import_name_for(const std::string& distribution) {
  static const std::map<std::string, std::string> known = {
      {"scikit-learn", "sklearn"}, {"scikit-image", "skimage"}, {"pillow", "PIL"},
      {"beautifulsoup4", "bs4"},   {"pyyaml", "yaml"},          {"opencv-python", "cv2"},
      {"opencv-python-headless", "cv2"}, {"python-dateutil", "dateutil"}, {"tensorflow-cpu", "tensorflow"}};
  std::string lower = distribution;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (auto it = known.find(lower); it != known.end()) return it->second;
  std::replace(lower.begin(), lower.end(), '-', '_');
  std::replace(lower.begin(), lower.end(), '.', '_');
  return lower;
}

MockKernelLauncher::MockKernelLauncher(MockKernelOptions base, KernelRegistry* registry)
    : base_(std::move(base)), registry_(registry) {}

Launched MockKernelLauncher::launch(const LaunchRequest& req) {
  if (!req.env || req.env->interpreter_path.empty()) {
    throw KernelError(KernelErrorKind::KernelLaunchFailed, "environment has no interpreter");
  }
  MockKernelOptions opts = base_;
  opts.cwd = req.cwd;
  opts.language_version = req.env->actual_interpreter_version.to_string();
  for (const auto& pkg : req.env->installed_packages) opts.importable.insert(import_name_for(pkg));
  if (customize) customize(opts, req);
  auto kernel = MockKernel::start(std::move(opts), req.connection.key);
  auto process = std::make_shared<MockProcess>(kernel);
  if (registry_) registry_->add(process);
  return Launched{process, kernel->connect()};
}

// ---------------------------------------------------------------------------
// Session

std::string_view to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Ok: return "ok";
    case CellStatus::Error: return "error";
    case CellStatus::Timeout: return "timeout";
    case CellStatus::Aborted: return "aborted";
  }
  return "ok";
}

KernelSession::KernelSession(Launched launched, ConnectionInfo info, SessionOptions options)
    : process_(std::move(launched.process)),
      transport_(std::move(launched.transport)),
      info_(std::move(info)),
      options_(options) {}

std::unique_ptr<KernelSession> KernelSession::start(KernelLauncher& launcher, const env::EnvironmentHandle& env,
                                                    const nb::KernelSpecInfo& spec, const fs::path& cwd,
                                                    const SessionOptions& options) {
  if (!env.satisfied) throw KernelError(KernelErrorKind::KernelLaunchFailed, "environment is not satisfied");
  ConnectionInfo info = ConnectionInfo::generate();
  info.kernel_name = spec.name;
  LaunchRequest req{&env, spec, cwd, info, options.startup_timeout};
  auto started = std::chrono::steady_clock::now();
  Launched launched = launcher.launch(req);
  SessionOptions remaining = options;
  remaining.startup_timeout = std::max(
      1ms, options.startup_timeout -
               std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started));
  std::unique_ptr<KernelSession> s(new KernelSession(std::move(launched), info, remaining));
  s->receiver_ = std::thread([raw = s.get()] { raw->receiver_loop(); });
  try {
    s->handshake();
  } catch (...) {
    s->kill_kernel();
    throw;
  }
  s->options_ = options;
  return s;
}

KernelSession::~KernelSession() { shutdown(); }

void KernelSession::receiver_loop() {
  while (!stop_) {
    std::optional<ChannelMessage> m;
    try {
      m = transport_->receive(100ms);
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      broken_ = true;
      broken_reason_ = e.what();
      cv_.notify_all();
      return;
    }
    if (!m) continue;
    try {
      WireMessage msg = decode_frames(m->frames, info_.key);
      std::lock_guard lock(mu_);
      inbox_.push_back(Inbound{m->channel, std::move(msg)});
      cv_.notify_all();
    } catch (const KernelError&) {
      ++rejected_;
    }
  }
}

void KernelSession::send(Channel channel, const std::string& type, const Json& content, const Json& parent) {
  WireMessage msg = make_message(type, session_id_, content, parent);
  transport_->send(channel, encode_frames(msg, info_.key));
}

std::optional<KernelSession::Inbound> KernelSession::pop(std::chrono::steady_clock::time_point deadline) {
  std::unique_lock lock(mu_);
  cv_.wait_until(lock, deadline, [&] { return !inbox_.empty() || broken_; });
  if (!inbox_.empty()) {
    Inbound in = std::move(inbox_.front());
    inbox_.pop_front();
    return in;
  }
  if (broken_) throw KernelError(KernelErrorKind::SessionDead, "kernel connection lost: " + broken_reason_);
  return std::nullopt;
}

void KernelSession::handshake() {
  auto deadline = std::chrono::steady_clock::now() + options_.startup_timeout;
  std::set<std::string> request_ids;
  bool iopub_seen = false;
  std::optional<Json> reply;
  auto next_send = std::chrono::steady_clock::now();
  while (!(reply && iopub_seen)) {
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      throw KernelError(KernelErrorKind::HandshakeTimeout,
                        reply ? "no iopub traffic from kernel" : "no kernel_info_reply within startup timeout");
    }
    if (!reply && now >= next_send) {
      WireMessage req = make_message("kernel_info_request", session_id_, Json::object());
      request_ids.insert(req.msg_id());
      transport_->send(Channel::Shell, encode_frames(req, info_.key));
      next_send = now + options_.kernel_info_retry;
    }
    std::optional<Inbound> in;
    try {
      in = pop(std::min(deadline, reply ? deadline : next_send));
    } catch (const KernelError& e) {
      throw KernelError(KernelErrorKind::KernelLaunchFailed, std::string("kernel died during startup: ") + e.what() +
                                                                 " " + process_->log_tail());
    }
    if (!in) {
      if (!process_->alive()) {
        throw KernelError(KernelErrorKind::KernelLaunchFailed, "kernel exited during startup: " + process_->log_tail());
      }
      continue;
    }
    if (in->channel == Channel::IOPub) iopub_seen = true;
    if (in->channel == Channel::Shell && in->msg.msg_type() == "kernel_info_reply" &&
        request_ids.count(in->msg.parent_id())) {
      reply = in->msg.content;
    }
  }
  kernel_info_ = *reply;
  std::string version = kernel_info_.value("protocol_version", std::string{});
  int major = 0;
  try {
    major = std::stoi(version);
  } catch (const std::exception&) {
    major = 0;
  }
  if (major != 5) {
    throw KernelError(KernelErrorKind::UnsupportedProtocol,
                      "kernel speaks protocol '" + version + "', need 5.x");
  }
  if (!transport_->ping(options_.heartbeat_timeout)) {
    throw KernelError(KernelErrorKind::HandshakeTimeout, "kernel heartbeat did not answer");
  }
  // Late status messages from the handshake are not part of any cell.
  std::lock_guard lock(mu_);
  inbox_.clear();
  live_ = true;
}

CellExecutionResult KernelSession::execute(const std::string& code, std::chrono::milliseconds timeout) {
  if (!live_) throw KernelError(KernelErrorKind::SessionDead, "session is not live");
  WireMessage req = make_message("execute_request", session_id_,
                                 {{"code", code},
                                  {"silent", false},
                                  {"store_history", true},
                                  {"user_expressions", Json::object()},
                                  {"allow_stdin", true},
                                  {"stop_on_error", true}});
  const std::string req_id = req.msg_id();

  CellExecutionResult result;
  result.started_at = util::now_utc();
  auto deadline = std::chrono::steady_clock::now() + timeout;
  try {
    transport_->send(Channel::Shell, encode_frames(req, info_.key));
  } catch (const std::exception& e) {
    live_ = false;
    kill_kernel();
    throw KernelError(KernelErrorKind::SessionDead, e.what());
  }

  bool idle = false;
  std::optional<Json> reply;
  std::vector<nb::Output> outputs;
  auto finish = [&](CellStatus status) {
    result.status = status;
    result.outputs = std::move(outputs);
    result.ended_at = util::now_utc();
    if (result.ended_at < result.started_at) result.ended_at = result.started_at;
    result.duration_ms = (result.ended_at - result.started_at).count();
    return result;
  };

  auto absorb = [&](const Inbound& in) {
    const std::string type = in.msg.msg_type();
    if (in.msg.parent_id() != req_id) {
      ++unattributed_;
      return;
    }
    const Json& c = in.msg.content;
    if (in.channel == Channel::Shell) {
      if (type == "execute_reply") reply = c;
      return;
    }
    if (in.channel == Channel::Stdin) {
      if (type == "input_request") {
        {
          std::lock_guard lock(mu_);
          stdin_events_.push_back(StdinEvent{c.value("prompt", std::string{}), c.value("password", false),
                                             util::now_utc()});
        }
        send(Channel::Stdin, "input_reply", {{"value", ""}, {"status", "ok"}}, in.msg.header);
      }
      return;
    }
    if (in.channel != Channel::IOPub) return;
    if (type == "status") {
      if (c.value("execution_state", std::string{}) == "idle") idle = true;
      return;
    }
    if (type == "clear_output") {
      outputs.clear();
      return;
    }
    if (type == "stream" || type == "execute_result" || type == "display_data" || type == "error") {
      Json j = c;
      j["output_type"] = type;
      if (type == "display_data") j.erase("transient");
      try {
        outputs.push_back(nb::output_from_json(j));
      } catch (const nb::ParseError&) {
        ++rejected_;
      }
    }
  };

  while (!(idle && reply)) {
    std::optional<Inbound> in;
    try {
      in = pop(deadline);
    } catch (const KernelError&) {
      live_ = false;
      kill_kernel();
      throw;
    }
    if (in) {
      try {
        absorb(*in);
      } catch (const std::exception& e) {
        live_ = false;
        kill_kernel();
        throw KernelError(KernelErrorKind::SessionDead, e.what());
      }
      continue;
    }
    if (!process_->alive()) {
      live_ = false;
      kill_kernel();
      throw KernelError(KernelErrorKind::SessionDead, "kernel exited while executing");
    }
    // Timed out: interrupt, give the kernel a moment to settle, then kill.
    process_->interrupt();
    auto grace = std::chrono::steady_clock::now() + options_.interrupt_grace;
    std::vector<nb::Output> kept = outputs;
    try {
      while (!(idle && reply)) {
        auto late = pop(grace);
        if (!late) break;
        absorb(*late);
      }
    } catch (const std::exception&) {
    }
    outputs = std::move(kept);
    live_ = false;
    kill_kernel();
    return finish(CellStatus::Timeout);
  }

  if (reply->contains("execution_count") && (*reply)["execution_count"].is_number_integer()) {
    result.execution_count = (*reply)["execution_count"].get<std::int64_t>();
  }
  const std::string status = reply->value("status", std::string("ok"));
  if (status == "ok") return finish(CellStatus::Ok);
  if (status == "aborted") return finish(CellStatus::Aborted);

  // Error: exactly one error output, last.
  std::optional<nb::ErrorOutput> err;
  std::vector<nb::Output> rest;
  for (auto& o : outputs) {
    if (auto e = std::get_if<nb::ErrorOutput>(&o)) {
      err = *e;
    } else {
      rest.push_back(std::move(o));
    }
  }
  if (!err) {
    nb::ErrorOutput e;
    e.ename = reply->value("ename", std::string{});
    if (e.ename.empty()) e.ename = "UnknownError";
    e.evalue = reply->value("evalue", std::string{});
    if (auto tb = reply->find("traceback"); tb != reply->end() && tb->is_array()) {
      for (const auto& line : *tb) {
        if (line.is_string()) e.traceback.push_back(line.get<std::string>());
      }
    }
    err = std::move(e);
  }
  rest.push_back(std::move(*err));
  outputs = std::move(rest);
  return finish(CellStatus::Error);
}

void KernelSession::kill_kernel() {
  if (process_) process_->kill();
  stop_receiver();
}

void KernelSession::stop_receiver() {
  stop_ = true;
  if (transport_) transport_->close();
  if (receiver_.joinable() && receiver_.get_id() != std::this_thread::get_id()) receiver_.join();
}

void KernelSession::shutdown() {
  if (shut_down_) return;
  shut_down_ = true;
  bool was_live = live_.exchange(false);
  if (was_live && process_ && process_->alive()) {
    try {
      send(Channel::Control, "shutdown_request", {{"restart", false}});
    } catch (const std::exception&) {
    }
    process_->wait_exit(options_.shutdown_grace);
  }
  kill_kernel();
}

std::vector<StdinEvent> KernelSession::stdin_events() const {
  std::lock_guard lock(mu_);
  return stdin_events_;
}

std::unique_ptr<KernelSession> start_kernel(KernelLauncher& launcher, const env::EnvironmentHandle& env,
                                            const nb::KernelSpecInfo& spec, const fs::path& cwd,
                                            const SessionOptions& options) {
  return KernelSession::start(launcher, env, spec, cwd, options);
}

CellExecutionResult execute(KernelSession& session, const std::string& code, std::chrono::milliseconds timeout) {
  return session.execute(code, timeout);
}

void shutdown(KernelSession& session) { session.shutdown(); }

}  // namespace repro_lens::kernel
