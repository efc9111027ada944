#pragma once

#include "repro_lens/env_manager.hpp"
#include "repro_lens/kernel/session.hpp"
#include "repro_lens/notebook.hpp"
#include "repro_lens/repo_ingest.hpp"
#include "repro_lens/util/time.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace repro_lens::run {

using Json = nlohmann::json;

enum class FidelityFlag { InterpreterFallback, NoManifest, DefaultInterpreter };

std::string_view to_string(FidelityFlag f);
std::optional<FidelityFlag> fidelity_flag_from_string(std::string_view s);

struct TerminalStatus {
  enum class Kind { Completed, HaltedOnError, TimedOut, NotExecuted };
  Kind kind = Kind::NotExecuted;
  /// Cell index for HaltedOnError / TimedOut.
  std::optional<std::size_t> cell;
  /// Reason for NotExecuted.
  std::string reason;

  static TerminalStatus completed() { return {Kind::Completed, std::nullopt, {}}; }
  static TerminalStatus halted(std::size_t i) { return {Kind::HaltedOnError, i, {}}; }
  static TerminalStatus timed_out(std::size_t i) { return {Kind::TimedOut, i, {}}; }
  static TerminalStatus not_executed(std::string why) { return {Kind::NotExecuted, std::nullopt, std::move(why)}; }
  bool operator==(const TerminalStatus&) const = default;
};

std::string_view to_string(TerminalStatus::Kind k);

struct CellRecord {
  /// Index of the cell in the notebook (all kinds counted).
  std::size_t index = 0;
  kernel::CellExecutionResult result;
};

struct NotebookRunRecord {
  std::string path;
  /// Identifies this execution; unique per run.
  std::string run_id;
  std::string env_id;
  std::string interpreter_version_used;
  std::set<FidelityFlag> fidelity_flags;
  std::vector<CellRecord> cell_records;
  TerminalStatus terminal_status;
  util::Timestamp started_at{};
  util::Timestamp ended_at{};
  /// Prompts the kernel issued on stdin; each was answered with "".
  std::vector<std::string> stdin_prompts;
};

struct NotebookReport {
  std::string path;
  /// Absent when the file failed to parse.
  std::optional<nb::Notebook> notebook;
  /// Parse failure message, when notebook is absent.
  std::string parse_error;
  nb::ValidityReport validity;
  std::optional<NotebookRunRecord> record;
};

struct RepoRunReport {
  std::string url;
  std::string ref;
  std::vector<NotebookReport> notebooks;
  util::Timestamp started_at{};
  util::Timestamp ended_at{};
  std::int64_t wall_ms = 0;
};

struct ProgressEvent {
  enum class Kind { EnvironmentReady, NotebookStarted, CellFinished, NotebookFinished };
  Kind kind = Kind::NotebookStarted;
  std::string path;
  std::optional<std::size_t> cell;
  /// Cell status for CellFinished; terminal status for NotebookFinished.
  std::string status;
};

struct OrchestratorOptions {
  std::chrono::milliseconds cell_timeout{60000};
  std::chrono::milliseconds notebook_timeout{300000};
  /// Notebooks executed concurrently; each gets its own kernel.
  unsigned parallelism = 1;
  kernel::SessionOptions session;
  /// Called from worker threads, one call at a time.
  std::function<void(const ProgressEvent&)> on_progress;
};

class Orchestrator {
 public:
  Orchestrator(env::EnvironmentManager& envs, kernel::KernelLauncher& launcher, OrchestratorOptions options = {});

  /// Total: every failure is encoded in the record's terminal status.
  NotebookRunRecord reproduce_notebook(const nb::Notebook& notebook, const ingest::RepositorySnapshot& snapshot);

  /// One entry per scanned notebook, in path order.
  RepoRunReport reproduce_repository(const ingest::RepositorySnapshot& snapshot);

 private:
  struct Prepared;
  Prepared prepare(const nb::Notebook& notebook, const ingest::RepositorySnapshot& snapshot,
                   const std::vector<ingest::ManifestRef>& manifests);
  NotebookRunRecord execute(const nb::Notebook& notebook, const ingest::RepositorySnapshot& snapshot,
                            Prepared& prepared);
  void emit(ProgressEvent event);

  env::EnvironmentManager& envs_;
  kernel::KernelLauncher& launcher_;
  OrchestratorOptions options_;
  std::mutex progress_mu_;
};

/// Languages this engine can execute.
bool supported_language(const nb::Notebook& notebook);

/// Lossless JSON form of a report, used for persistence.
Json report_to_json(const RepoRunReport& report);
/// Throws std::runtime_error on malformed input.
RepoRunReport report_from_json(const Json& j);

Json record_to_json(const NotebookRunRecord& record);
NotebookRunRecord record_from_json(const Json& j);

}  // namespace repro_lens::run
