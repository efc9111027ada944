#include "repro_lens/gateway.hpp"

#include "repro_lens/provenance.hpp"
#include "repro_lens/util/digest.hpp"

#include <algorithm>

namespace repro_lens::gateway {

namespace fs = std::filesystem;

std::string binder_link(const std::string& url, const std::string& ref, const std::string& notebook_path) {
  auto parsed = ingest::parse_repo_url(url);
  std::string host = parsed ? parsed->host : std::string{};
  std::transform(host.begin(), host.end(), host.begin(), [](unsigned char c) { return std::tolower(c); });
  if (!parsed || parsed->is_local() || host != "github.com") {
    throw GatewayError("UnsupportedHost", 422, "no Binder mapping for " + url);
  }
  return "https://mybinder.org/v2/gh/" + util::url_encode(parsed->owner) + "/" + util::url_encode(parsed->name) +
         "/" + util::url_encode(ref) + "?filepath=" + util::url_encode(notebook_path);
}

PipelineConfig default_pipeline_config(const fs::path& workdir) {
  PipelineConfig c;
  c.workdir = workdir;
  c.hosting = ingest::HostingConfig::from_env();
  c.envs = std::make_shared<env::EnvironmentManager>(workdir, std::make_shared<env::VenvProvisioner>());
  c.registry = std::make_shared<kernel::KernelRegistry>();
  kernel::ProcessKernelLauncher::Options lo;
  lo.log_dir = workdir / "kernel-logs";
  c.launcher = std::make_shared<kernel::ProcessKernelLauncher>(lo, c.registry.get());
  return c;
}

PipelineConfig mock_pipeline_config(const fs::path& workdir) {
  PipelineConfig c;
  c.workdir = workdir;
  c.hosting = ingest::HostingConfig::from_env();
  c.envs = std::make_shared<env::EnvironmentManager>(workdir, std::make_shared<env::RecordingProvisioner>());
  c.registry = std::make_shared<kernel::KernelRegistry>();
  c.launcher = std::make_shared<kernel::MockKernelLauncher>(kernel::MockKernelOptions{}, c.registry.get());
  return c;
}

namespace {

Json cell_summary(const run::CellRecord& c) {
  Json j = {{"index", c.index},
            {"status", kernel::to_string(c.result.status)},
            {"execution_count", c.result.execution_count ? Json(*c.result.execution_count) : Json(nullptr)},
            {"started_at", util::format_iso8601(c.result.started_at)},
            {"ended_at", util::format_iso8601(c.result.ended_at)},
            {"duration_ms", c.result.duration_ms},
            {"error", nullptr}};
  if (!c.result.outputs.empty()) {
    if (auto e = std::get_if<nb::ErrorOutput>(&c.result.outputs.back())) {
      j["error"] = {{"ename", e->ename}, {"evalue", e->evalue}};
    }
  }
  return j;
}

Json execution_json(const run::NotebookRunRecord& r) {
  Json cells = Json::array();
  for (const auto& c : r.cell_records) cells.push_back(cell_summary(c));
  Json flags = Json::array();
  for (auto f : r.fidelity_flags) flags.push_back(run::to_string(f));
  return {{"run_id", r.run_id},
          {"terminal_status", run::to_string(r.terminal_status.kind)},
          {"terminal_cell", r.terminal_status.cell ? Json(*r.terminal_status.cell) : Json(nullptr)},
          {"reason", r.terminal_status.reason.empty() ? Json(nullptr) : Json(r.terminal_status.reason)},
          {"env_id", r.env_id.empty() ? Json(nullptr) : Json(r.env_id)},
          {"interpreter_version", r.interpreter_version_used.empty() ? Json(nullptr) : Json(r.interpreter_version_used)},
          {"fidelity_flags", flags},
          {"started_at", util::format_iso8601(r.started_at)},
          {"ended_at", util::format_iso8601(r.ended_at)},
          {"stdin_prompts", r.stdin_prompts},
          {"cells", cells}};
}

Json outcome_json(const analytics::Outcome& o) {
  Json j = {{"category", analytics::to_string(o.kind)}};
  if (!o.reason.empty()) j["reason"] = o.reason;
  if (o.exception) j["exception_kind"] = o.exception->name();
  return j;
}

Json structure_json(const analytics::StructureMetrics& m) {
  return {{"code_cells", m.code_cells},
          {"markdown_cells", m.markdown_cells},
          {"raw_cells", m.raw_cells},
          {"cells_with_execution_count", m.cells_with_execution_count},
          {"cells_with_outputs", m.cells_with_outputs},
          {"executed_in_order", m.ascending_execution},
          {"all_code_cells_output_and_execution_count", m.all_code_cells_output_and_count}};
}

std::string notebook_link(const std::string& job_id, std::size_t i, const char* leaf) {
  return "/api/jobs/" + job_id + "/notebooks/" + std::to_string(i) + "/" + leaf;
}

}  // namespace

Json build_report_document(const std::string& job_id, const run::RepoRunReport& report,
                           const analytics::ReportAnalysis& analysis) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < report.notebooks.size(); ++i) {
    const auto& row = report.notebooks[i];
    Json j = {{"index", i},
              {"path", row.path},
              {"validity",
               {{"has_valid_format", row.validity.has_valid_format},
                {"has_kernel_spec", row.validity.has_kernel_spec},
                {"has_language_version", row.validity.has_language_version},
                {"overall_valid", row.validity.overall_valid}}},
              {"parse_error", row.parse_error.empty() ? Json(nullptr) : Json(row.parse_error)},
              {"outcome", outcome_json(analysis.outcomes[i])},
              {"execution", row.record ? execution_json(*row.record) : Json(nullptr)},
              {"diff", analysis.diffs[i] ? diff::to_json(*analysis.diffs[i]) : Json(nullptr)},
              {"links", {{"prov_ttl", notebook_link(job_id, i, "prov.ttl")}, {"binder", notebook_link(job_id, i, "binder")}}}};
    if (row.notebook) {
      const auto& n = *row.notebook;
      j["language"] = {{"name", n.language_name ? Json(*n.language_name) : Json(nullptr)},
                       {"version", n.language_version ? Json(*n.language_version) : Json(nullptr)}};
      j["kernel"] = n.kernel_spec ? Json(n.kernel_spec->name) : Json(nullptr);
      j["nbformat"] = std::to_string(n.format_major) + "." + std::to_string(n.format_minor);
      j["structure"] = structure_json(analytics::compute_structure_metrics(n));
      j["imports"] = analytics::extract_imports(n);
    } else {
      j["language"] = nullptr;
      j["kernel"] = nullptr;
      j["nbformat"] = nullptr;
      j["structure"] = nullptr;
      j["imports"] = Json::array();
    }
    rows.push_back(std::move(j));
  }
  return {{"schema_version", kSchemaVersion},
          {"job_id", job_id},
          {"repository", {{"url", report.url}, {"ref", report.ref}, {"notebook_count", report.notebooks.size()}}},
          {"started_at", util::format_iso8601(report.started_at)},
          {"ended_at", util::format_iso8601(report.ended_at)},
          {"wall_ms", report.wall_ms},
          {"summary", analytics::to_json(analysis.summary)},
          {"notebooks", rows}};
}

Artifacts run_pipeline(const PipelineConfig& config, const std::string& job_id, const std::string& url,
                       const std::optional<std::string>& ref, const fs::path& job_dir, OutputFormat format,
                       const std::function<void(const JobState&)>& on_state,
                       const std::function<void(const std::string&)>& on_resolved_ref) {
  auto state = [&](JobPhase p, std::string detail = {}) {
    if (on_state) on_state(JobState{p, std::move(detail)});
  };
  state(JobPhase::Fetching);
  fs::create_directories(job_dir);
  auto snapshot = ingest::fetch_repository(url, ref, job_dir, config.hosting);
  if (on_resolved_ref) on_resolved_ref(snapshot.ref);
  state(JobPhase::Provisioning);

  bool executing = false;
  run::OrchestratorOptions options = config.orchestrator;
  auto user_progress = options.on_progress;
  options.on_progress = [&](const run::ProgressEvent& ev) {
    if (ev.kind == run::ProgressEvent::Kind::NotebookStarted) {
      executing = true;
      state(JobPhase::Executing, ev.path);
    }
    if (user_progress) user_progress(ev);
  };
  run::Orchestrator orchestrator(*config.envs, *config.launcher, options);
  auto report = orchestrator.reproduce_repository(snapshot);
  if (!executing) state(JobPhase::Executing);

  auto analysis = analytics::analyze(report);
  Artifacts out;
  out.report_document = build_report_document(job_id, report, analysis);
  out.run = job_dir / "run.json";
  write_file_atomic(out.run, run::report_to_json(report).dump(1));
  if (format != OutputFormat::Json) {
    for (const auto& row : report.notebooks) {
      fs::path p = job_dir / "prov" / (row.path + ".prov.ttl");
      write_file_atomic(p, prov::serialize_turtle(prov::export_notebook(row, report.ref)));
      out.notebook_prov.push_back(p);
    }
    out.repo_prov = job_dir / "prov" / "repository.prov.ttl";
    write_file_atomic(out.repo_prov, prov::serialize_turtle(prov::export_repository(report)));
  }
  if (format != OutputFormat::Turtle) {
    out.report = job_dir / "report.json";
    write_file_atomic(out.report, out.report_document.dump(2) + "\n");
  }
  return out;
}

}  // namespace repro_lens::gateway
