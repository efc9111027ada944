#include "fixtures.hpp"

#include "repro_lens/kernel/session.hpp"
#include "repro_lens/util/process.hpp"

#include <doctest.h>

#include <thread>

using namespace repro_lens;
using namespace std::chrono_literals;
using kernel::CellStatus;

namespace {

nb::KernelSpecInfo python3() { return {"python3", "Python 3", nb::Json::object()}; }

kernel::SessionOptions quick() {
  kernel::SessionOptions o;
  o.startup_timeout = 2000ms;
  o.interrupt_grace = 200ms;
  o.shutdown_grace = 200ms;
  o.kernel_info_retry = 100ms;
  return o;
}

}  // namespace

TEST_CASE("mock session streams stdout") {
  testkit::TempDir dir("ks");
  kernel::KernelRegistry registry;
  kernel::MockKernelLauncher launcher({}, &registry);
  auto env = testkit::mock_env();
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
  CHECK(s->live());
  CHECK(s->kernel_info().value("protocol_version", "") == "5.3");

  auto r = kernel::execute(*s, "print('hi')", 2000ms);
  CHECK(r.status == CellStatus::Ok);
  REQUIRE(r.outputs.size() == 1);
  auto* st = std::get_if<nb::StreamOutput>(&r.outputs[0]);
  REQUIRE(st);
  CHECK(st->text == "hi\n");
  CHECK(r.execution_count == 1);
  CHECK(r.duration_ms == (r.ended_at - r.started_at).count());

  auto r2 = s->execute("1+1", 2000ms);
  REQUIRE(r2.outputs.size() == 1);
  auto* er = std::get_if<nb::ExecuteResultOutput>(&r2.outputs[0]);
  REQUIRE(er);
  CHECK(er->data.at("text/plain") == "2");
  CHECK(r2.execution_count == 2);

  kernel::shutdown(*s);
  kernel::shutdown(*s);
  CHECK_FALSE(s->live());
  CHECK(registry.live_count() == 0);
}

TEST_CASE("error outputs end with exactly one error") {
  testkit::TempDir dir("ks");
  kernel::MockKernelOptions opts;
  kernel::MockResponse zero;
  zero.outputs.push_back(nb::StreamOutput{nb::StreamName::Stdout, "before\n"});
  zero.error = nb::ErrorOutput{"ZeroDivisionError", "division by zero", {"tb"}};
  opts.script["scripted"] = zero;
  kernel::MockKernelLauncher launcher(opts);
  auto env = testkit::mock_env();
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());

  auto r = s->execute("scripted", 2000ms);
  CHECK(r.status == CellStatus::Error);
  REQUIRE(r.outputs.size() == 2);
  auto* e = std::get_if<nb::ErrorOutput>(&r.outputs.back());
  REQUIRE(e);
  CHECK(e->ename == "ZeroDivisionError");

  auto r2 = s->execute("import surely_not_installed_pkg", 2000ms);
  CHECK(r2.status == CellStatus::Error);
  REQUIRE(r2.outputs.size() == 1);
  CHECK(std::get<nb::ErrorOutput>(r2.outputs[0]).ename == "ModuleNotFoundError");

  auto r3 = s->execute("print(\"hello\"", 2000ms);
  CHECK(std::get<nb::ErrorOutput>(r3.outputs.back()).ename == "SyntaxError");
}

TEST_CASE("installed packages become importable") {
  testkit::TempDir dir("ks");
  kernel::MockKernelLauncher launcher;
  auto env = testkit::mock_env({"scikit-learn", "numpy"});
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
  CHECK(s->execute("import sklearn\nimport numpy as np", 2000ms).status == CellStatus::Ok);
}

TEST_CASE("busy kernel times out and the session dies") {
  testkit::TempDir dir("ks");
  kernel::KernelRegistry registry;
  kernel::MockKernelOptions opts;
  kernel::MockResponse busy;
  busy.outputs.push_back(nb::StreamOutput{nb::StreamName::Stdout, "partial\n"});
  busy.busy_forever = true;
  opts.script["spin"] = busy;
  kernel::MockKernelLauncher launcher(opts, &registry);
  auto env = testkit::mock_env();
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());

  auto begin = std::chrono::steady_clock::now();
  auto r = s->execute("spin", 100ms);
  auto took = std::chrono::steady_clock::now() - begin;
  CHECK(r.status == CellStatus::Timeout);
  CHECK(took < 2s);
  CHECK_FALSE(s->live());
  CHECK(registry.live_count() == 0);
  CHECK_THROWS_AS(s->execute("1", 100ms), kernel::KernelError);
  try {
    s->execute("1", 100ms);
  } catch (const kernel::KernelError& e) {
    CHECK(e.kind() == kernel::KernelErrorKind::SessionDead);
  }
}

TEST_CASE("interpreted loop is interrupted on timeout") {
  testkit::TempDir dir("ks");
  kernel::MockKernelLauncher launcher;
  auto env = testkit::mock_env();
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
  auto r = s->execute("import time\nwhile True:\n    time.sleep(0.01)", 150ms);
  CHECK(r.status == CellStatus::Timeout);
}

TEST_CASE("silent kernel fails the handshake") {
  testkit::TempDir dir("ks");
  kernel::KernelRegistry registry;
  kernel::MockKernelOptions opts;
  opts.answer_kernel_info = false;
  kernel::MockKernelLauncher launcher(opts, &registry);
  auto env = testkit::mock_env();
  auto o = quick();
  o.startup_timeout = 300ms;
  auto begin = std::chrono::steady_clock::now();
  try {
    kernel::start_kernel(launcher, env, python3(), dir.path(), o);
    FAIL("handshake should time out");
  } catch (const kernel::KernelError& e) {
    CHECK(e.kind() == kernel::KernelErrorKind::HandshakeTimeout);
  }
  CHECK(std::chrono::steady_clock::now() - begin < 2s);
  CHECK(registry.live_count() == 0);
}

TEST_CASE("protocol 4 kernels are rejected") {
  testkit::TempDir dir("ks");
  kernel::MockKernelOptions opts;
  opts.protocol_version = "4.1";
  kernel::MockKernelLauncher launcher(opts);
  auto env = testkit::mock_env();
  try {
    kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
    FAIL("expected rejection");
  } catch (const kernel::KernelError& e) {
    CHECK(e.kind() == kernel::KernelErrorKind::UnsupportedProtocol);
  }
}

TEST_CASE("stdin requests get an empty reply") {
  testkit::TempDir dir("ks");
  kernel::MockKernelLauncher launcher;
  auto env = testkit::mock_env();
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
  auto r = s->execute("name = input('who? ')\nprint(repr(name))", 2000ms);
  CHECK(r.status == CellStatus::Ok);
  REQUIRE(s->stdin_events().size() == 1);
  CHECK(s->stdin_events()[0].prompt == "who? ");
  REQUIRE(r.outputs.size() == 1);
  CHECK(std::get<nb::StreamOutput>(r.outputs[0]).text == "''\n");
}

TEST_CASE("crashing kernel surfaces SessionDead") {
  testkit::TempDir dir("ks");
  kernel::MockKernelOptions opts;
  kernel::MockResponse crash;
  crash.crash = true;
  opts.script["boom"] = crash;
  kernel::MockKernelLauncher launcher(opts);
  auto env = testkit::mock_env();
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
  try {
    s->execute("boom", 2000ms);
    FAIL("expected SessionDead");
  } catch (const kernel::KernelError& e) {
    CHECK(e.kind() == kernel::KernelErrorKind::SessionDead);
  }
  CHECK_FALSE(s->live());
}

TEST_CASE("noisy kernel never leaks foreign outputs") {
  testkit::TempDir dir("ks");
  kernel::MockKernelOptions opts;
  opts.noise = true;
  opts.noise_seed = 7;
  kernel::MockKernelLauncher launcher(opts);
  auto env = testkit::mock_env();
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
  for (int i = 0; i < 20; ++i) {
    auto r = s->execute("print(" + std::to_string(i) + ")", 2000ms);
    REQUIRE(r.outputs.size() == 1);
    CHECK(std::get<nb::StreamOutput>(r.outputs[0]).text == std::to_string(i) + "\n");
  }
  CHECK(s->unattributed_messages() > 0);
}

TEST_CASE("nonexistent interpreter fails to launch") {
  testkit::TempDir dir("ks");
  kernel::ProcessKernelLauncher launcher;
  auto env = testkit::mock_env();
  try {
    kernel::start_kernel(launcher, env, python3(), dir.path(), quick());
    FAIL("expected launch failure");
  } catch (const kernel::KernelError& e) {
    CHECK(e.kind() == kernel::KernelErrorKind::KernelLaunchFailed);
  }
}

TEST_CASE("kernelspec argv substitution") {
  testkit::TempDir dir("ks");
  testkit::write_file(dir / "k/custom/kernel.json",
                      R"({"argv":["python3","-m","ipykernel_launcher","-f","{connection_file}"],"language":"python"})");
  kernel::ProcessKernelLauncher launcher({{}, {dir / "k"}});
  auto argv = launcher.kernel_argv({"custom", {}, nb::Json::object()}, "/envs/x/bin/python", "/nb/conn.json");
  CHECK(argv == std::vector<std::string>{"/envs/x/bin/python", "-m", "ipykernel_launcher", "-f", "/nb/conn.json"});
  CHECK(kernel::import_name_for("scikit-learn") == "sklearn");
  CHECK(kernel::import_name_for("Typing-Extensions") == "typing_extensions");
}

namespace {

bool host_has_ipykernel() {
  auto py = util::find_executable("python3");
  if (py.empty()) return false;
  auto r = util::run_command({py.string(), "-c", "import ipykernel"}, {}, std::chrono::seconds(30));
  return r.exit_code == 0;
}

}  // namespace

TEST_CASE("real ipykernel round trip" * doctest::skip(!host_has_ipykernel())) {
  testkit::TempDir dir("real");
  kernel::KernelRegistry registry;
  kernel::ProcessKernelLauncher launcher(&registry);
  auto env = testkit::mock_env();
  env.interpreter_path = util::find_executable("python3");
  kernel::SessionOptions o;
  o.startup_timeout = 60s;
  auto s = kernel::start_kernel(launcher, env, python3(), dir.path(), o);
  auto r = s->execute("print('hi')", 30s);
  CHECK(r.status == CellStatus::Ok);
  REQUIRE(r.outputs.size() == 1);
  CHECK(std::get<nb::StreamOutput>(r.outputs[0]).text == "hi\n");

  auto e = s->execute("1/0", 30s);
  CHECK(e.status == CellStatus::Error);
  CHECK(std::get<nb::ErrorOutput>(e.outputs.back()).ename == "ZeroDivisionError");

  auto t = s->execute("import time\ntime.sleep(30)", 500ms);
  CHECK(t.status == CellStatus::Timeout);
  CHECK_FALSE(s->live());
  CHECK(registry.live_count() == 0);
  bool leftover = false;
  for (auto& p : std::filesystem::directory_iterator(dir.path())) {
    leftover |= p.path().filename().string().rfind(".repro-lens-kernel-", 0) == 0;
  }
  CHECK_FALSE(leftover);
}
