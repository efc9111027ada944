#include "repro_lens/run_orchestrator.hpp"

#include <stdexcept>

namespace repro_lens::run {

namespace {

std::string ts(util::Timestamp t) { return util::format_iso8601(t); }

util::Timestamp parse_ts(const Json& j) {
  auto t = util::parse_iso8601(j.get<std::string>());
  if (!t) throw std::runtime_error("bad timestamp: " + j.get<std::string>());
  return *t;
}

kernel::CellStatus cell_status_from(const std::string& s) {
  for (auto c : {kernel::CellStatus::Ok, kernel::CellStatus::Error, kernel::CellStatus::Timeout,
                 kernel::CellStatus::Aborted}) {
    if (kernel::to_string(c) == s) return c;
  }
  throw std::runtime_error("bad cell status: " + s);
}

TerminalStatus::Kind terminal_kind_from(const std::string& s) {
  for (auto k : {TerminalStatus::Kind::Completed, TerminalStatus::Kind::HaltedOnError,
                 TerminalStatus::Kind::TimedOut, TerminalStatus::Kind::NotExecuted}) {
    if (to_string(k) == s) return k;
  }
  throw std::runtime_error("bad terminal status: " + s);
}

Json validity_json(const nb::ValidityReport& v) {
  return {{"has_valid_format", v.has_valid_format},
          {"has_kernel_spec", v.has_kernel_spec},
          {"has_language_version", v.has_language_version},
          {"overall_valid", v.overall_valid}};
}

}  // namespace

Json record_to_json(const NotebookRunRecord& r) {
  Json cells = Json::array();
  for (const auto& c : r.cell_records) {
    Json outs = Json::array();
    for (const auto& o : c.result.outputs) outs.push_back(nb::output_to_json(o));
    cells.push_back({{"index", c.index},
                     {"status", kernel::to_string(c.result.status)},
                     {"execution_count", c.result.execution_count ? Json(*c.result.execution_count) : Json(nullptr)},
                     {"started_at", ts(c.result.started_at)},
                     {"ended_at", ts(c.result.ended_at)},
                     {"duration_ms", c.result.duration_ms},
                     {"outputs", outs}});
  }
  Json flags = Json::array();
  for (auto f : r.fidelity_flags) flags.push_back(to_string(f));
  Json status = {{"kind", to_string(r.terminal_status.kind)}};
  if (r.terminal_status.cell) status["cell"] = *r.terminal_status.cell;
  if (!r.terminal_status.reason.empty()) status["reason"] = r.terminal_status.reason;
  return {{"path", r.path},
          {"run_id", r.run_id},
          {"env_id", r.env_id},
          {"interpreter_version_used", r.interpreter_version_used},
          {"fidelity_flags", flags},
          {"terminal_status", status},
          {"started_at", ts(r.started_at)},
          {"ended_at", ts(r.ended_at)},
          {"stdin_prompts", r.stdin_prompts},
          {"cells", cells}};
}

NotebookRunRecord record_from_json(const Json& j) {
  NotebookRunRecord r;
  r.path = j.at("path").get<std::string>();
  r.run_id = j.at("run_id").get<std::string>();
  r.env_id = j.at("env_id").get<std::string>();
  r.interpreter_version_used = j.at("interpreter_version_used").get<std::string>();
  for (const auto& f : j.at("fidelity_flags")) {
    auto flag = fidelity_flag_from_string(f.get<std::string>());
    if (!flag) throw std::runtime_error("bad fidelity flag");
    r.fidelity_flags.insert(*flag);
  }
  const Json& st = j.at("terminal_status");
  r.terminal_status.kind = terminal_kind_from(st.at("kind").get<std::string>());
  if (st.contains("cell")) r.terminal_status.cell = st["cell"].get<std::size_t>();
  r.terminal_status.reason = st.value("reason", std::string{});
  r.started_at = parse_ts(j.at("started_at"));
  r.ended_at = parse_ts(j.at("ended_at"));
  r.stdin_prompts = j.at("stdin_prompts").get<std::vector<std::string>>();
  for (const auto& c : j.at("cells")) {
    CellRecord cr;
    cr.index = c.at("index").get<std::size_t>();
    cr.result.status = cell_status_from(c.at("status").get<std::string>());
    if (!c.at("execution_count").is_null()) cr.result.execution_count = c["execution_count"].get<std::int64_t>();
    cr.result.started_at = parse_ts(c.at("started_at"));
    cr.result.ended_at = parse_ts(c.at("ended_at"));
    cr.result.duration_ms = c.at("duration_ms").get<std::int64_t>();
    for (const auto& o : c.at("outputs")) cr.result.outputs.push_back(nb::output_from_json(o));
    r.cell_records.push_back(std::move(cr));
  }
  return r;
}

Json report_to_json(const RepoRunReport& report) {
  Json rows = Json::array();
  for (const auto& n : report.notebooks) {
    Json row = {{"path", n.path}, {"validity", validity_json(n.validity)}};
    row["notebook"] = n.notebook ? Json::parse(nb::serialize_notebook(*n.notebook)) : Json(nullptr);
    if (!n.parse_error.empty()) row["parse_error"] = n.parse_error;
    row["record"] = n.record ? record_to_json(*n.record) : Json(nullptr);
    rows.push_back(std::move(row));
  }
  return {{"url", report.url},
          {"ref", report.ref},
          {"started_at", ts(report.started_at)},
          {"ended_at", ts(report.ended_at)},
          {"wall_ms", report.wall_ms},
          {"notebooks", rows}};
}

RepoRunReport report_from_json(const Json& j) {
  try {
    RepoRunReport r;
    r.url = j.at("url").get<std::string>();
    r.ref = j.at("ref").get<std::string>();
    r.started_at = parse_ts(j.at("started_at"));
    r.ended_at = parse_ts(j.at("ended_at"));
    r.wall_ms = j.at("wall_ms").get<std::int64_t>();
    for (const auto& row : j.at("notebooks")) {
      NotebookReport n;
      n.path = row.at("path").get<std::string>();
      const Json& v = row.at("validity");
      n.validity = {v.at("has_valid_format").get<bool>(), v.at("has_kernel_spec").get<bool>(),
                    v.at("has_language_version").get<bool>(), v.at("overall_valid").get<bool>()};
      if (!row.at("notebook").is_null()) n.notebook = nb::parse_notebook(row["notebook"].dump(), n.path);
      n.parse_error = row.value("parse_error", std::string{});
      if (!row.at("record").is_null()) n.record = record_from_json(row["record"]);
      r.notebooks.push_back(std::move(n));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed run report: ") + e.what());
  } catch (const nb::ParseError& e) {
    throw std::runtime_error(std::string("malformed notebook in run report: ") + e.what());
  }
}

}  // namespace repro_lens::run
