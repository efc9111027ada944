#pragma once

#include "repro_lens/analytics.hpp"
#include "repro_lens/env_manager.hpp"
#include "repro_lens/kernel/session.hpp"
#include "repro_lens/repo_ingest.hpp"
#include "repro_lens/run_orchestrator.hpp"
#include "repro_lens/util/time.hpp"

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace repro_lens::gateway {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

class GatewayError : public std::runtime_error {
 public:
  /// code: InvalidUrl, JobNotFound, JobNotFinished, JobFailed, NotebookNotFound, UnsupportedHost, BadRequest.
  GatewayError(std::string code, int http_status, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)), http_status_(http_status) {}
  const std::string& code() const { return code_; }
  int http_status() const { return http_status_; }

 private:
  std::string code_;
  int http_status_;
};

/// `https://mybinder.org/v2/gh/<owner>/<name>/<ref>?filepath=<encoded path>`.
/// Throws GatewayError(UnsupportedHost) for anything but github.com URLs.
std::string binder_link(const std::string& url, const std::string& ref, const std::string& notebook_path);

enum class JobPhase { Queued, Fetching, Provisioning, Executing, Completed, Failed };

std::string_view to_string(JobPhase p);
std::optional<JobPhase> job_phase_from_string(std::string_view s);

struct JobState {
  JobPhase phase = JobPhase::Queued;
  /// Executing: current notebook path. Failed: error message.
  std::string detail;
  bool terminal() const { return phase == JobPhase::Completed || phase == JobPhase::Failed; }
  bool operator==(const JobState&) const = default;
};

/// Whether `to` may follow `from`.
bool valid_transition(const JobState& from, const JobState& to);

struct Job {
  std::string id;
  std::string url;
  std::optional<std::string> requested_ref;
  std::string resolved_ref;
  JobState state;
  util::Timestamp created_at{};
  util::Timestamp updated_at{};
  std::filesystem::path dir;
};

Json to_json(const Job& job);

/// Jobs persisted as append-only journals under `<root>/<job_id>/journal.jsonl`.
class JobStore {
 public:
  /// Loads every journal under root. Torn trailing records (from a crash mid
  /// write) are cut off so the journal stays parseable.
  explicit JobStore(std::filesystem::path root);

  Job create(const std::string& url, const std::optional<std::string>& ref);
  /// Appends a transition. Throws std::logic_error if it would move backwards.
  Job transition(const std::string& id, const JobState& state);
  void set_resolved_ref(const std::string& id, const std::string& ref);
  std::optional<Job> get(const std::string& id) const;
  std::vector<Job> list() const;
  /// A non-terminal job for the same url whose requested or resolved ref matches.
  std::optional<Job> find_active(const std::string& url, const std::optional<std::string>& ref) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  void append(const Job& job, const Json& record);
  Job load(const std::filesystem::path& dir);

  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::map<std::string, Job> jobs_;
};

/// Everything the pipeline needs besides the job itself.
struct PipelineConfig {
  std::filesystem::path workdir;
  ingest::HostingConfig hosting;
  /// Shared across jobs so concurrent jobs serialize on the same env_id.
  std::shared_ptr<env::EnvironmentManager> envs;
  std::shared_ptr<kernel::KernelRegistry> registry;
  std::shared_ptr<kernel::KernelLauncher> launcher;
  run::OrchestratorOptions orchestrator;
};

/// Production defaults: venv provisioning and real kernels.
PipelineConfig default_pipeline_config(const std::filesystem::path& workdir);
/// In-process mock kernels and a recording provisioner; no Python required.
PipelineConfig mock_pipeline_config(const std::filesystem::path& workdir);

/// Files written for a finished job.
struct Artifacts {
  std::filesystem::path report;     // report.json (schema_version 1)
  std::filesystem::path run;        // run.json (lossless run report)
  std::filesystem::path repo_prov;  // prov/repository.prov.ttl
  /// One Turtle file per notebook, in report order.
  std::vector<std::filesystem::path> notebook_prov;
  Json report_document;
};

enum class OutputFormat { Json, Turtle, Both };

/// Turns a run report into the published report document.
Json build_report_document(const std::string& job_id, const run::RepoRunReport& report,
                           const analytics::ReportAnalysis& analysis);

/// Fetch, provision, execute, analyze and write artifacts under `job_dir`.
/// `on_state` receives Fetching, Provisioning and Executing transitions and the
/// resolved ref. Throws on fetch or I/O failure.
Artifacts run_pipeline(const PipelineConfig& config, const std::string& job_id, const std::string& url,
                       const std::optional<std::string>& ref, const std::filesystem::path& job_dir,
                       OutputFormat format,
                       const std::function<void(const JobState&)>& on_state = {},
                       const std::function<void(const std::string&)>& on_resolved_ref = {});

/// Writes `content` to `path` atomically (temp file, fsync, rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Job queue, worker pool and query surface shared by the HTTP server.
class Service {
 public:
  struct Options {
    unsigned workers = 2;
  };
  Service(PipelineConfig config, Options options);
  explicit Service(PipelineConfig config) : Service(std::move(config), Options{}) {}
  ~Service();

  /// Recovers persisted jobs and starts the workers. Queued jobs are resumed;
  /// jobs caught mid-pipeline by a restart are marked Failed.
  void start();
  void stop();

  /// Throws GatewayError(InvalidUrl).
  std::string submit(const std::string& url, const std::optional<std::string>& ref);
  Job status(const std::string& id) const;
  /// The persisted report bytes.
  std::string report(const std::string& id) const;
  std::string notebook_prov(const std::string& id, std::size_t index) const;
  std::string notebook_binder(const std::string& id, std::size_t index) const;
  /// Blocks until the job is terminal or the timeout passes.
  std::optional<Job> wait(const std::string& id, std::chrono::milliseconds timeout) const;

  JobStore& store() { return store_; }

 private:
  void worker_loop();
  void process(const std::string& id);
  Job require(const std::string& id) const;
  Json completed_report(const std::string& id) const;

  PipelineConfig config_;
  Options options_;
  JobStore store_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  bool started_ = false;
  std::vector<std::thread> workers_;
};

/// HTTP front end. Routes under /api; errors as {code, message}.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace repro_lens::gateway
