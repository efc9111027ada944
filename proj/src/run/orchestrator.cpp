#include "repro_lens/run_orchestrator.hpp"

#include "repro_lens/util/ulid.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace repro_lens::run {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

std::string_view to_string(FidelityFlag f) {
  switch (f) {
    case FidelityFlag::InterpreterFallback: return "InterpreterFallback";
    case FidelityFlag::NoManifest: return "NoManifest";
    case FidelityFlag::DefaultInterpreter: return "DefaultInterpreter";
  }
  return "NoManifest";
}

std::optional<FidelityFlag> fidelity_flag_from_string(std::string_view s) {
  for (auto f : {FidelityFlag::InterpreterFallback, FidelityFlag::NoManifest, FidelityFlag::DefaultInterpreter}) {
    if (to_string(f) == s) return f;
  }
  return std::nullopt;
}

std::string_view to_string(TerminalStatus::Kind k) {
  switch (k) {
    case TerminalStatus::Kind::Completed: return "Completed";
    case TerminalStatus::Kind::HaltedOnError: return "HaltedOnError";
    case TerminalStatus::Kind::TimedOut: return "TimedOut";
    case TerminalStatus::Kind::NotExecuted: return "NotExecuted";
  }
  return "NotExecuted";
}

bool supported_language(const nb::Notebook& notebook) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  if (notebook.language_name) return lower(*notebook.language_name) == "python";
  if (notebook.kernel_spec) {
    const auto& extra = notebook.kernel_spec->extra;
    if (extra.contains("language") && extra["language"].is_string()) {
      return lower(extra["language"].get<std::string>()) == "python";
    }
    return lower(notebook.kernel_spec->name).rfind("python", 0) == 0;
  }
  return false;
}

struct Orchestrator::Prepared {
  std::optional<TerminalStatus> skip;
  env::EnvironmentHandle env;
  std::set<FidelityFlag> flags;
  std::string env_id;
};

Orchestrator::Orchestrator(env::EnvironmentManager& envs, kernel::KernelLauncher& launcher,
                           OrchestratorOptions options)
    : envs_(envs), launcher_(launcher), options_(std::move(options)) {
  options_.parallelism = std::max(1u, options_.parallelism);
}

void Orchestrator::emit(ProgressEvent event) {
  if (!options_.on_progress) return;
  std::lock_guard lock(progress_mu_);
  options_.on_progress(event);
}

Orchestrator::Prepared Orchestrator::prepare(const nb::Notebook& notebook,
                                             const ingest::RepositorySnapshot& snapshot,
                                             const std::vector<ingest::ManifestRef>& manifests) {
  Prepared p;
  auto validity = nb::validate(notebook);
  if (!validity.has_valid_format) {
    p.skip = TerminalStatus::not_executed("invalid nbformat");
  } else if (!validity.has_kernel_spec) {
    p.skip = TerminalStatus::not_executed("missing kernel specification");
  } else if (!validity.has_language_version) {
    p.skip = TerminalStatus::not_executed("missing language version");
  } else if (!supported_language(notebook)) {
    p.skip = TerminalStatus::not_executed("unsupported language");
  }
  if (p.skip) return p;

  auto plan = env::plan_environment(manifests, notebook, snapshot, envs_.plan_defaults());
  p.env_id = plan.env_id;
  if (plan.manifests.empty()) p.flags.insert(FidelityFlag::NoManifest);
  if (plan.default_interpreter) p.flags.insert(FidelityFlag::DefaultInterpreter);
  try {
    p.env = envs_.provision(plan);
  } catch (const env::EnvError& e) {
    p.skip = TerminalStatus::not_executed(std::string(e.kind() == env::EnvErrorKind::InterpreterUnavailable
                                                          ? "interpreter unavailable: "
                                                          : "provisioning failed: ") +
                                          e.what());
    return p;
  }
  if (p.env.interpreter_fallback) p.flags.insert(FidelityFlag::InterpreterFallback);
  if (!p.env.satisfied) p.skip = TerminalStatus::not_executed("environment not satisfied");
  emit({ProgressEvent::Kind::EnvironmentReady, notebook.source_path, std::nullopt, p.skip ? "failed" : "ok"});
  return p;
}

namespace {

kernel::CellExecutionResult synthetic_error(const kernel::CellExecutionResult& base, std::string ename,
                                            std::string evalue) {
  kernel::CellExecutionResult r = base;
  r.status = kernel::CellStatus::Error;
  std::erase_if(r.outputs, [](const nb::Output& o) { return std::holds_alternative<nb::ErrorOutput>(o); });
  r.outputs.push_back(nb::ErrorOutput{std::move(ename), std::move(evalue), {}, nb::Json::object()});
  return r;
}

}  // namespace

NotebookRunRecord Orchestrator::execute(const nb::Notebook& notebook, const ingest::RepositorySnapshot& snapshot,
                                        Prepared& prepared) {
  NotebookRunRecord rec;
  rec.path = notebook.source_path;
  rec.run_id = util::make_ulid();
  rec.env_id = prepared.env_id;
  rec.fidelity_flags = prepared.flags;
  rec.started_at = util::now_utc();
  auto finish = [&](TerminalStatus status) {
    rec.terminal_status = std::move(status);
    rec.ended_at = std::max(util::now_utc(), rec.started_at);
    emit({ProgressEvent::Kind::NotebookFinished, rec.path, rec.terminal_status.cell,
          std::string(to_string(rec.terminal_status.kind))});
    return rec;
  };
  emit({ProgressEvent::Kind::NotebookStarted, rec.path, std::nullopt, {}});
  if (prepared.skip) return finish(*prepared.skip);
  rec.interpreter_version_used = prepared.env.actual_interpreter_version.to_string();

  nb::KernelSpecInfo spec = notebook.kernel_spec.value_or(nb::KernelSpecInfo{"python3", {}, nb::Json::object()});
  fs::path cwd = (snapshot.root / fs::path(notebook.source_path)).parent_path();
  std::unique_ptr<kernel::KernelSession> session;
  try {
    session = kernel::start_kernel(launcher_, prepared.env, spec, cwd, options_.session);
  } catch (const kernel::KernelError& e) {
    return finish(TerminalStatus::not_executed(std::string("kernel start failed: ") + e.what()));
  }

  auto deadline = std::chrono::steady_clock::now() + options_.notebook_timeout;
  std::optional<TerminalStatus> stop;
  for (const auto& cell : notebook.cells) {
    if (cell.kind != nb::CellKind::Code) continue;
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    auto budget = std::clamp(left, 1ms, options_.cell_timeout);
    kernel::CellExecutionResult result;
    try {
      result = session->execute(cell.source, budget);
    } catch (const kernel::KernelError& e) {
      kernel::CellExecutionResult base;
      base.started_at = base.ended_at = util::now_utc();
      result = synthetic_error(base, "DeadKernelError", e.what());
    }
    if (result.status == kernel::CellStatus::Aborted) {
      result = synthetic_error(result, "ExecutionAborted", "the kernel aborted the execution request");
    }
    rec.cell_records.push_back(CellRecord{cell.index, result});
    emit({ProgressEvent::Kind::CellFinished, rec.path, cell.index, std::string(kernel::to_string(result.status))});
    if (result.status == kernel::CellStatus::Error) {
      stop = TerminalStatus::halted(cell.index);
      break;
    }
    if (result.status == kernel::CellStatus::Timeout) {
      stop = TerminalStatus::timed_out(cell.index);
      break;
    }
  }
  for (const auto& ev : session->stdin_events()) rec.stdin_prompts.push_back(ev.prompt);
  session->shutdown();
  return finish(stop.value_or(TerminalStatus::completed()));
}

NotebookRunRecord Orchestrator::reproduce_notebook(const nb::Notebook& notebook,
                                                   const ingest::RepositorySnapshot& snapshot) {
  auto prepared = prepare(notebook, snapshot, ingest::discover_environment(snapshot));
  return execute(notebook, snapshot, prepared);
}

RepoRunReport Orchestrator::reproduce_repository(const ingest::RepositorySnapshot& snapshot) {
  RepoRunReport report;
  report.url = snapshot.url;
  report.ref = snapshot.ref;
  report.started_at = util::now_utc();
  auto wall_start = std::chrono::steady_clock::now();

  auto scanned = ingest::scan_notebooks(snapshot);
  auto manifests = ingest::discover_environment(snapshot);
  std::vector<NotebookReport> rows(scanned.size());
  std::vector<std::optional<Prepared>> prepared(scanned.size());

  for (std::size_t i = 0; i < scanned.size(); ++i) {
    rows[i].path = scanned[i].path;
    if (scanned[i].ok()) {
      rows[i].notebook = scanned[i].notebook();
      rows[i].validity = nb::validate(*rows[i].notebook);
    } else {
      rows[i].parse_error = scanned[i].failure().message;
    }
  }

  auto parallel_for = [&](auto&& body) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) body(i);
    };
    unsigned n = std::min<std::size_t>(options_.parallelism, std::max<std::size_t>(rows.size(), 1));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  };

  // Environments first, so every notebook's kernel starts against a ready env.
  parallel_for([&](std::size_t i) {
    if (rows[i].notebook) prepared[i] = prepare(*rows[i].notebook, snapshot, manifests);
  });
  std::mutex rows_mu;
  parallel_for([&](std::size_t i) {
    NotebookRunRecord rec;
    if (rows[i].notebook) {
      rec = execute(*rows[i].notebook, snapshot, *prepared[i]);
    } else {
      rec.path = rows[i].path;
      rec.run_id = util::make_ulid();
      rec.started_at = rec.ended_at = util::now_utc();
      bool unsupported = scanned[i].failure().kind == nb::ParseErrorKind::UnsupportedFormat;
      rec.terminal_status = TerminalStatus::not_executed(unsupported ? "invalid nbformat" : "parse error");
      emit({ProgressEvent::Kind::NotebookFinished, rec.path, std::nullopt, "NotExecuted"});
    }
    std::lock_guard lock(rows_mu);
    rows[i].record = std::move(rec);
  });

  report.notebooks = std::move(rows);
  report.ended_at = std::max(util::now_utc(), report.started_at);
  report.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - wall_start)
                       .count();
  return report;
}

}  // namespace repro_lens::run
