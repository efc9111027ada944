#include "repro_lens/kernel/mock_kernel.hpp"

#include "mini_python.hpp"

#include <stdexcept>

namespace repro_lens::kernel {

// ---------------------------------------------------------------------------
// MockTransport

MockTransport::MockTransport(std::shared_ptr<MockWire> wire, std::shared_ptr<MockKernel> kernel)
    : wire_(std::move(wire)), kernel_(std::move(kernel)) {}

void MockTransport::send(Channel channel, const std::vector<std::string>& frames) {
  std::lock_guard lock(wire_->mu);
  if (wire_->client_closed) throw std::runtime_error("transport closed");
  if (wire_->kernel_gone) return;  // like a socket to a vanished peer: silently queued forever
  switch (channel) {
    case Channel::Shell: wire_->shell_in.push_back(frames); break;
    case Channel::Control: wire_->control_in.push_back(frames); break;
    case Channel::Stdin: wire_->stdin_in.push_back(frames); break;
    case Channel::IOPub: throw std::logic_error("iopub is receive-only");
  }
  wire_->kernel_cv.notify_all();
}

std::optional<ChannelMessage> MockTransport::receive(std::chrono::milliseconds timeout) {
  std::unique_lock lock(wire_->mu);
  wire_->client_cv.wait_for(lock, timeout, [&] {
    return !wire_->to_client.empty() || wire_->kernel_gone || wire_->client_closed;
  });
  if (wire_->client_closed) throw std::runtime_error("transport closed");
  if (!wire_->to_client.empty()) {
    auto m = std::move(wire_->to_client.front());
    wire_->to_client.pop_front();
    return m;
  }
  if (wire_->kernel_gone) throw std::runtime_error("kernel connection lost");
  return std::nullopt;
}

bool MockTransport::ping(std::chrono::milliseconds) {
  return kernel_->alive() && kernel_->answers_heartbeat();
}

void MockTransport::close() {
  std::lock_guard lock(wire_->mu);
  wire_->client_closed = true;
  wire_->client_cv.notify_all();
}

// ---------------------------------------------------------------------------
// MockKernel

struct MockKernel::Interp {
  mini::Interpreter interpreter;
};

namespace {

Json wire_content(const nb::Output& out) {
  Json j = nb::output_to_json(out);
  if (auto s = std::get_if<nb::StreamOutput>(&out)) j["text"] = s->text;
  j.erase("output_type");
  return j;
}

std::string output_type(const nb::Output& out) {
  return nb::output_to_json(out).at("output_type").get<std::string>();
}

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

MockKernel::MockKernel(MockKernelOptions options, std::string key)
    : options_(std::move(options)), key_(std::move(key)), noise_state_(options_.noise_seed) {
  interp_ = std::make_unique<Interp>(
      Interp{mini::Interpreter(options_.cwd.empty() ? std::filesystem::current_path() : options_.cwd,
                               options_.importable, options_.seed)});
}

std::shared_ptr<MockKernel> MockKernel::start(MockKernelOptions options, std::string key) {
  std::shared_ptr<MockKernel> k(new MockKernel(std::move(options), std::move(key)));
  k->shell_thread_ = std::thread([raw = k.get()] { raw->shell_loop(); });
  k->control_thread_ = std::thread([raw = k.get()] { raw->control_loop(); });
  return k;
}

MockKernel::~MockKernel() {
  mark_gone();
  if (shell_thread_.joinable()) shell_thread_.join();
  if (control_thread_.joinable()) control_thread_.join();
}

std::unique_ptr<MockTransport> MockKernel::connect() {
  return std::make_unique<MockTransport>(wire_, shared_from_this());
}

void MockKernel::interrupt() {
  interrupt_ = true;
  wire_->kernel_cv.notify_all();
}

void MockKernel::kill() { mark_gone(); }

void MockKernel::mark_gone() {
  gone_ = true;
  std::lock_guard lock(wire_->mu);
  wire_->kernel_gone = true;
  wire_->kernel_cv.notify_all();
  wire_->client_cv.notify_all();
}

bool MockKernel::wait_exit(std::chrono::milliseconds timeout) {
  std::unique_lock lock(wire_->mu);
  return wire_->kernel_cv.wait_for(lock, timeout, [&] { return wire_->kernel_gone; });
}

bool MockKernel::pause(std::chrono::milliseconds d) {
  std::unique_lock lock(wire_->mu);
  return !wire_->kernel_cv.wait_for(lock, d, [&] { return wire_->kernel_gone || interrupt_.load(); });
}

std::optional<WireMessage> MockKernel::next(std::deque<std::vector<std::string>>& queue) {
  for (;;) {
    std::vector<std::string> frames;
    {
      std::unique_lock lock(wire_->mu);
      wire_->kernel_cv.wait(lock, [&] { return wire_->kernel_gone || !queue.empty(); });
      if (wire_->kernel_gone) return std::nullopt;
      frames = std::move(queue.front());
      queue.pop_front();
    }
    try {
      return decode_frames(frames, key_);
    } catch (const KernelError&) {
      ++rejected_;  // real kernels drop badly signed messages without replying
    }
  }
}

void MockKernel::publish(Channel channel, const std::string& type, const Json& content, const Json& parent) {
  WireMessage msg = make_message(type, session_, content, parent);
  if (channel == Channel::IOPub) msg.identities = {"kernel." + session_ + "." + type};
  auto frames = encode_frames(msg, key_);
  std::lock_guard lock(wire_->mu);
  if (wire_->kernel_gone) return;
  wire_->to_client.push_back(ChannelMessage{channel, std::move(frames)});
  wire_->client_cv.notify_all();
}

void MockKernel::publish_noise(const std::string& label) {
  std::uint64_t r;
  {
    std::lock_guard lock(rng_mu_);
    r = splitmix(noise_state_);
  }
  Json foreign = {{"msg_id", new_uuid()}, {"msg_type", "execute_request"}, {"session", new_uuid()},
                  {"username", "other"}, {"date", "2020-01-01T00:00:00.000Z"}, {"version", "5.3"}};
  switch (r % 5) {
    case 0:
      publish(Channel::IOPub, "stream", {{"name", "stdout"}, {"text", "LEAK " + label + "\n"}}, foreign);
      break;
    case 1:
      publish(Channel::IOPub, "execute_result",
              {{"data", {{"text/plain", "'LEAK " + label + "'"}}}, {"metadata", Json::object()}, {"execution_count", 99}},
              foreign);
      break;
    case 2:
      publish(Channel::IOPub, "status", {{"execution_state", "idle"}}, foreign);
      break;
    case 3:
      publish(Channel::IOPub, "error",
              {{"ename", "LeakError"}, {"evalue", "LEAK " + label}, {"traceback", Json::array()}}, foreign);
      break;
    default:
      publish(Channel::Shell, "execute_reply", {{"status", "ok"}, {"execution_count", 99}}, foreign);
      break;
  }
}

void MockKernel::shell_loop() {
  while (auto req = next(wire_->shell_in)) {
    const std::string type = req->msg_type();
    if (type == "kernel_info_request") {
      if (!options_.answer_kernel_info) continue;
      publish(Channel::IOPub, "status", {{"execution_state", "busy"}}, req->header);
      publish(Channel::Shell, "kernel_info_reply",
              {{"status", "ok"},
               {"protocol_version", options_.protocol_version},
               {"implementation", "repro-lens-mock"},
               {"implementation_version", "1.0"},
               {"language_info",
                {{"name", "python"},
                 {"version", options_.language_version},
                 {"mimetype", "text/x-python"},
                 {"file_extension", ".py"}}},
               {"banner", "mock kernel"},
               {"help_links", Json::array()}},
              req->header);
      publish(Channel::IOPub, "status", {{"execution_state", "idle"}}, req->header);
    } else if (type == "execute_request") {
      handle_execute(*req);
    }
  }
}

void MockKernel::control_loop() {
  while (auto req = next(wire_->control_in)) {
    const std::string type = req->msg_type();
    if (type == "kernel_info_request" && options_.answer_kernel_info) {
      publish(Channel::Control, "kernel_info_reply",
              {{"status", "ok"}, {"protocol_version", options_.protocol_version}}, req->header);
    } else if (type == "interrupt_request") {
      interrupt();
      publish(Channel::Control, "interrupt_reply", {{"status", "ok"}}, req->header);
    } else if (type == "shutdown_request") {
      publish(Channel::Control, "shutdown_reply",
              {{"status", "ok"}, {"restart", req->content.value("restart", false)}}, req->header);
      mark_gone();
      return;
    }
  }
}

void MockKernel::handle_execute(const WireMessage& req) {
  ++executions_;
  const Json& c = req.content;
  const std::string code = c.value("code", std::string{});
  const bool silent = c.value("silent", false);
  const bool store_history = c.value("store_history", !silent);
  const bool allow_stdin = c.value("allow_stdin", true);
  const Json& parent = req.header;
  interrupt_ = false;

  publish(Channel::IOPub, "status", {{"execution_state", "busy"}}, parent);
  if (store_history && !silent) ++execution_count_;
  const std::int64_t count = execution_count_;
  publish(Channel::IOPub, "execute_input", {{"code", code}, {"execution_count", count}}, parent);
  if (options_.noise) publish_noise("before");

  std::optional<nb::ErrorOutput> error;
  bool aborted = false;

  auto emit = [&](const nb::Output& out) {
    nb::Output o = out;
    if (auto r = std::get_if<nb::ExecuteResultOutput>(&o); r && !r->execution_count) r->execution_count = count;
    if (!silent) publish(Channel::IOPub, output_type(o), wire_content(o), parent);
    if (options_.noise) publish_noise("between");
  };

  auto request_input = [&](const std::string& prompt) -> std::string {
    if (!allow_stdin) {
      throw mini::PyException{"StdinNotImplementedError",
                              "raw_input was called, but this frontend does not support input requests."};
    }
    publish(Channel::Stdin, "input_request", {{"prompt", prompt}, {"password", false}}, parent);
    std::vector<std::string> frames;
    {
      std::unique_lock lock(wire_->mu);
      wire_->kernel_cv.wait(lock, [&] {
        return wire_->kernel_gone || interrupt_.load() || !wire_->stdin_in.empty();
      });
      if (wire_->kernel_gone || interrupt_) throw mini::Interrupted{};
      frames = std::move(wire_->stdin_in.front());
      wire_->stdin_in.pop_front();
    }
    try {
      return decode_frames(frames, key_).content.value("value", std::string{});
    } catch (const KernelError&) {
      ++rejected_;
      return {};
    }
  };

  std::optional<MockResponse> scripted;
  if (auto it = options_.script.find(code); it != options_.script.end()) {
    scripted = it->second;
  } else if (options_.script_fn) {
    scripted = options_.script_fn(code);
  }

  try {
    if (scripted) {
      if (scripted->crash) {
        mark_gone();
        return;
      }
      if (scripted->request_input) request_input("");
      if (scripted->delay.count() > 0 && !pause(scripted->delay)) throw mini::Interrupted{};
      if (scripted->busy_forever) {
        while (pause(std::chrono::milliseconds(50))) {
        }
        throw mini::Interrupted{};
      }
      for (const auto& o : scripted->outputs) emit(o);
      error = scripted->error;
      aborted = scripted->abort;
    } else if (options_.interpret) {
      mini::Host host;
      host.write = [&](bool to_stderr, const std::string& text) {
        emit(nb::StreamOutput{to_stderr ? nb::StreamName::Stderr : nb::StreamName::Stdout, text, Json::object()});
      };
      host.input = request_input;
      host.sleep = [&](std::chrono::milliseconds d) {
        if (!pause(d)) throw mini::Interrupted{};
      };
      host.interrupted = [&] { return interrupt_.load() || gone_.load(); };
      try {
        if (auto result = interp_->interpreter.run(code, host)) {
          nb::ExecuteResultOutput r;
          r.data["text/plain"] = *result;
          r.metadata = Json::object();
          r.execution_count = count;
          emit(r);
        }
      } catch (const mini::PyException& e) {
        nb::ErrorOutput err;
        err.ename = e.ename;
        err.evalue = e.evalue;
        err.traceback = {"Traceback (most recent call last)",
                         "  Cell In[" + std::to_string(count) + "]",
                         e.evalue.empty() ? e.ename : e.ename + ": " + e.evalue};
        error = err;
      }
    }
  } catch (const mini::Interrupted&) {
    if (gone_) return;
    nb::ErrorOutput err;
    err.ename = "KeyboardInterrupt";
    err.traceback = {"KeyboardInterrupt"};
    error = err;
  } catch (const mini::PyException& e) {
    nb::ErrorOutput err;
    err.ename = e.ename;
    err.evalue = e.evalue;
    err.traceback = {e.ename + ": " + e.evalue};
    error = err;
  }
  if (gone_) return;

  Json reply;
  if (aborted) {
    reply = {{"status", "aborted"}};
  } else if (error) {
    if (!silent) publish(Channel::IOPub, "error", wire_content(*error), parent);
    reply = {{"status", "error"},
             {"ename", error->ename},
             {"evalue", error->evalue},
             {"traceback", error->traceback},
             {"execution_count", count}};
  } else {
    reply = {{"status", "ok"},
             {"execution_count", count},
             {"user_expressions", Json::object()},
             {"payload", Json::array()}};
  }

  bool idle_first = false;
  if (options_.noise) {
    std::lock_guard lock(rng_mu_);
    idle_first = splitmix(noise_state_) & 1;
  }
  if (idle_first) publish(Channel::IOPub, "status", {{"execution_state", "idle"}}, parent);
  publish(Channel::Shell, "execute_reply", reply, parent);
  if (!idle_first) publish(Channel::IOPub, "status", {{"execution_state", "idle"}}, parent);
  if (options_.noise) {
    // Late output for a finished request must never reach the next one.
    publish(Channel::IOPub, "stream", {{"name", "stdout"}, {"text", "LEAK late\n"}}, parent);
    publish_noise("after");
  }
}

}  // namespace repro_lens::kernel
