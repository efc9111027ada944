#include "repro_lens/gateway.hpp"
#include "repro_lens/util/ulid.hpp"

#include <CLI11.hpp>

#include <signal.h>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using namespace repro_lens;

namespace {

fs::path default_workdir() {
  if (const char* w = std::getenv("REPRO_LENS_WORKDIR"); w && *w) return w;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".repro-lens";
  return fs::current_path() / ".repro-lens";
}

int default_port() {
  if (const char* p = std::getenv("REPRO_LENS_PORT"); p && *p) {
    try {
      return std::stoi(p);
    } catch (const std::exception&) {
      std::cerr << "ignoring malformed REPRO_LENS_PORT=" << p << "\n";
    }
  }
  return 8080;
}

struct Common {
  std::string workdir;
  bool mock = false;
  unsigned parallel = 1;
  long cell_timeout_ms = 60000;
  long notebook_timeout_ms = 300000;

  gateway::PipelineConfig config() const {
    fs::path wd = workdir.empty() ? default_workdir() : fs::path(workdir);
    fs::create_directories(wd);
    auto c = mock ? gateway::mock_pipeline_config(wd) : gateway::default_pipeline_config(wd);
    c.orchestrator.parallelism = parallel;
    c.orchestrator.cell_timeout = std::chrono::milliseconds(cell_timeout_ms);
    c.orchestrator.notebook_timeout = std::chrono::milliseconds(notebook_timeout_ms);
    return c;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--workdir", c.workdir, "Environment cache and job store root (default $REPRO_LENS_WORKDIR)");
  cmd->add_flag("--mock", c.mock, "Use the in-process mock kernel and a recording provisioner");
  cmd->add_option("--parallel", c.parallel, "Notebooks executed concurrently")->check(CLI::Range(1u, 64u));
  cmd->add_option("--cell-timeout", c.cell_timeout_ms, "Per-cell timeout in milliseconds")->check(CLI::PositiveNumber);
  cmd->add_option("--notebook-timeout", c.notebook_timeout_ms, "Per-notebook timeout in milliseconds")
      ->check(CLI::PositiveNumber);
}

void print_summary(const nlohmann::json& doc, std::ostream& out) {
  const auto& s = doc.at("summary");
  const auto& o = s.at("outcomes");
  out << "notebooks: " << s["totals"]["notebooks"] << "  valid: " << s["totals"]["valid"]
      << "  executed: " << s["totals"]["executed"] << "\n";
  out << "same: " << o["same_results"] << "  different: " << o["different_results"]
      << "  exception: " << o["exception"] << "  not executed: " << o["not_executed"] << "\n";
  for (const auto& [kind, n] : s["exception_kinds"].items()) out << "  " << kind << ": " << n << "\n";
  for (const auto& row : doc["notebooks"]) {
    out << "  [" << row["index"] << "] " << row["path"].get<std::string>() << "  "
        << row["outcome"]["category"].get<std::string>();
    if (row["outcome"].contains("exception_kind")) out << "(" << row["outcome"]["exception_kind"].get<std::string>() << ")";
    if (row["outcome"].contains("reason")) out << " - " << row["outcome"]["reason"].get<std::string>();
    out << "\n";
  }
}

int run_command(const std::string& url, const std::optional<std::string>& ref, const std::string& out_dir,
                const std::string& format, const Common& common) {
  auto fmt = format == "json" ? gateway::OutputFormat::Json
             : format == "turtle" ? gateway::OutputFormat::Turtle
                                  : gateway::OutputFormat::Both;
  auto config = common.config();
  config.orchestrator.on_progress = [](const run::ProgressEvent& ev) {
    if (ev.kind == run::ProgressEvent::Kind::NotebookFinished) {
      std::cerr << "finished " << ev.path << ": " << ev.status << "\n";
    }
  };
  std::string job_id = util::make_ulid();
  try {
    auto artifacts = gateway::run_pipeline(config, job_id, url, ref, out_dir, fmt, [](const gateway::JobState& s) {
      std::cerr << "state: " << gateway::to_string(s.phase) << (s.detail.empty() ? "" : " " + s.detail) << "\n";
    });
    print_summary(artifacts.report_document, std::cout);
    if (!artifacts.report.empty()) std::cout << "report: " << artifacts.report.string() << "\n";
    if (!artifacts.repo_prov.empty()) std::cout << "provenance: " << artifacts.repo_prov.string() << "\n";
    std::cerr << "state: Completed\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "state: Failed " << e.what() << "\n";
    return 1;
  }
}

int serve_command(const std::string& host, int port, unsigned workers, const Common& common) {
  // Block the stop signals before any thread starts so sigwait sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  gateway::Service service(common.config(), gateway::Service::Options{workers});
  service.start();
  gateway::HttpServer http(service);
  int bound = 0;
  try {
    bound = http.start(host, port);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  int sig = 0;
  sigwait(&stop_signals, &sig);
  std::cerr << "stopping\n";
  http.stop();
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Re-executes the notebooks of a repository and reports how reproducible they are"};
  app.require_subcommand(1);

  Common run_common, serve_common;
  std::string url, ref, out_dir = "repro-lens-out", format = "both";
  auto* run = app.add_subcommand("run", "Run one job without the HTTP layer");
  run->add_option("url", url, "Repository URL (https://github.com/owner/name or file:///dir)")->required();
  run->add_option("--ref", ref, "Branch, tag or commit");
  run->add_option("--out", out_dir, "Directory for the fetched tree and artifacts");
  run->add_option("--format", format, "Artifacts to write")->check(CLI::IsMember({"json", "turtle", "both"}));
  add_common(run, run_common);

  std::string host = "127.0.0.1";
  int port = default_port();
  unsigned workers = 2;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--port", port, "Port (default $REPRO_LENS_PORT or 8080; 0 picks one)");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--workers", workers, "Concurrent jobs")->check(CLI::Range(1u, 64u));
  add_common(serve, serve_common);

  CLI11_PARSE(app, argc, argv);
  if (*run) return run_command(url, ref.empty() ? std::nullopt : std::optional<std::string>(ref), out_dir, format, run_common);
  return serve_command(host, port, workers, serve_common);
}
