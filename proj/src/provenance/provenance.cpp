#include "repro_lens/provenance.hpp"

#include "repro_lens/diff_engine.hpp"
#include "repro_lens/util/digest.hpp"

#include <cstdio>
#include <map>

namespace repro_lens::prov {

namespace {

std::string rl(const char* local) { return std::string(ns::rl) + local; }
std::string pv(const char* local) { return std::string(ns::prov) + local; }
const std::string kType = std::string(ns::rdf) + "type";

}  // namespace

Term Term::integer(std::int64_t v) { return typed(std::to_string(v), std::string(ns::xsd) + "integer"); }

Term Term::date_time(util::Timestamp t) { return typed(util::format_iso8601(t), std::string(ns::xsd) + "dateTime"); }

std::string notebook_iri(const std::string& ref, const std::string& path) {
  return "urn:repro-lens:" + util::url_encode(ref) + ":" + util::url_encode(path);
}

std::string step_iri(const std::string& ref, const std::string& path, std::size_t cell) {
  return notebook_iri(ref, path) + ":" + std::to_string(cell);
}

std::string run_iri(const std::string& ref, const std::string& path, const std::string& run_id) {
  return notebook_iri(ref, path) + ":run:" + util::url_encode(run_id);
}

std::string activity_iri(const std::string& ref, const std::string& path, std::size_t cell,
                         const std::string& run_id) {
  return step_iri(ref, path, cell) + ":run:" + util::url_encode(run_id);
}

Graph export_prospective(const nb::Notebook& notebook, const std::string& ref) {
  Graph g;
  const std::string& path = notebook.source_path;
  Term plan = Term::iri(notebook_iri(ref, path));
  g.add(plan, kType, Term::iri(pv("Plan")));
  g.add(plan, kType, Term::iri(rl("Notebook")));
  g.add(plan, rl("path"), Term::literal(path));
  g.add(plan, rl("nbformat"),
        Term::literal(std::to_string(notebook.format_major) + "." + std::to_string(notebook.format_minor)));
  g.add(plan, rl("cellCount"), Term::integer(static_cast<std::int64_t>(notebook.cells.size())));
  if (notebook.kernel_spec) g.add(plan, rl("kernel"), Term::literal(notebook.kernel_spec->name));
  if (notebook.language_name) g.add(plan, rl("language"), Term::literal(*notebook.language_name));
  if (notebook.language_version) g.add(plan, rl("languageVersion"), Term::literal(*notebook.language_version));

  for (const auto& cell : notebook.cells) {
    Term step = Term::iri(step_iri(ref, path, cell.index));
    g.add(step, kType, Term::iri(rl("Step")));
    g.add(step, rl("inPlan"), plan);
    g.add(step, rl("order"), Term::integer(static_cast<std::int64_t>(cell.index)));
    g.add(step, rl("cellKind"), Term::literal(std::string(nb::to_string(cell.kind))));
    g.add(step, rl("source"), Term::literal(cell.source));
    if (cell.execution_count) g.add(step, rl("storedExecutionCount"), Term::integer(*cell.execution_count));
  }
  return g;
}

Graph export_retrospective(const run::NotebookRunRecord& record, const std::string& ref) {
  Graph g;
  const std::string& path = record.path;
  Term plan = Term::iri(notebook_iri(ref, path));
  Term run = Term::iri(run_iri(ref, path, record.run_id));
  g.add(run, kType, Term::iri(rl("NotebookRun")));
  g.add(run, rl("ofNotebook"), plan);
  g.add(run, rl("runId"), Term::literal(record.run_id));
  g.add(run, rl("terminalStatus"), Term::literal(std::string(run::to_string(record.terminal_status.kind))));
  if (record.terminal_status.cell) {
    g.add(run, rl("terminalCell"), Term::integer(static_cast<std::int64_t>(*record.terminal_status.cell)));
  }
  if (!record.terminal_status.reason.empty()) g.add(run, rl("reason"), Term::literal(record.terminal_status.reason));
  g.add(run, rl("startedAt"), Term::date_time(record.started_at));
  g.add(run, rl("endedAt"), Term::date_time(record.ended_at));

  std::optional<Term> env;
  if (!record.env_id.empty()) {
    env = Term::iri("urn:repro-lens:env:" + util::url_encode(record.env_id));
    g.add(*env, kType, Term::iri(pv("Agent")));
    g.add(*env, kType, Term::iri(rl("Environment")));
    g.add(*env, rl("envId"), Term::literal(record.env_id));
    if (!record.interpreter_version_used.empty()) {
      g.add(*env, rl("interpreterVersion"), Term::literal(record.interpreter_version_used));
    }
    g.add(run, rl("environment"), *env);
  }
  for (auto f : record.fidelity_flags) g.add(run, rl("fidelityFlag"), Term::literal(std::string(run::to_string(f))));

  for (const auto& cell : record.cell_records) {
    const auto& r = cell.result;
    Term act = Term::iri(activity_iri(ref, path, cell.index, record.run_id));
    g.add(act, kType, Term::iri(pv("Activity")));
    g.add(act, kType, Term::iri(rl("CellExecution")));
    g.add(act, rl("executesStep"), Term::iri(step_iri(ref, path, cell.index)));
    g.add(act, rl("partOfRun"), run);
    g.add(act, rl("cellIndex"), Term::integer(static_cast<std::int64_t>(cell.index)));
    g.add(act, pv("startedAtTime"), Term::date_time(r.started_at));
    g.add(act, pv("endedAtTime"), Term::date_time(r.ended_at));
    g.add(act, rl("durationMs"), Term::integer(r.duration_ms));
    g.add(act, rl("status"), Term::literal(std::string(kernel::to_string(r.status))));
    if (r.execution_count) g.add(act, rl("executionCount"), Term::integer(*r.execution_count));
    if (env) g.add(act, pv("wasAssociatedWith"), *env);

    auto normalized = diff::normalize_outputs(r.outputs);
    for (std::size_t k = 0; k < normalized.size(); ++k) {
      Term out = Term::iri(act.value + ":output:" + std::to_string(k));
      g.add(out, kType, Term::iri(pv("Entity")));
      g.add(out, kType, Term::iri(rl("Output")));
      g.add(out, pv("wasGeneratedBy"), act);
      g.add(out, rl("position"), Term::integer(static_cast<std::int64_t>(k)));
      g.add(out, rl("outputType"), Term::literal(std::string(diff::to_string(normalized[k].kind))));
      std::string content = diff::to_json(normalized[k]).dump();
      if (content.size() > kInlineOutputLimit) {
        g.add(out, rl("contentDigest"), Term::literal("sha256:" + util::sha256_hex(content)));
        g.add(out, rl("contentLength"), Term::integer(static_cast<std::int64_t>(content.size())));
      } else {
        g.add(out, rl("content"), Term::literal(content));
      }
    }
  }
  return g;
}

Graph export_notebook(const run::NotebookReport& row, const std::string& ref) {
  Graph g;
  if (row.notebook) g.merge(export_prospective(*row.notebook, ref));
  if (row.record) g.merge(export_retrospective(*row.record, ref));
  return g;
}

Graph export_repository(const run::RepoRunReport& report) {
  Graph g;
  Term repo = Term::iri("urn:repro-lens:" + util::url_encode(report.ref));
  g.add(repo, kType, Term::iri(rl("Repository")));
  g.add(repo, rl("url"), Term::literal(report.url));
  g.add(repo, rl("ref"), Term::literal(report.ref));
  for (const auto& row : report.notebooks) {
    g.add(repo, rl("hasNotebook"), Term::iri(notebook_iri(report.ref, row.path)));
    g.merge(export_notebook(row, report.ref));
  }
  return g;
}

namespace {

bool is_pn_local(std::string_view s) {
  if (s.empty()) return false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    unsigned char c = s[i];
    bool ok = std::isalnum(c) || c == '_' || (i > 0 && c == '-');
    if (!ok) return false;
  }
  return true;
}

std::string escape_literal(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (unsigned char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20 || c == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04X", c);
          out += buf;
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out;
}

class Writer {
 public:
  explicit Writer(const Graph& g) : g_(g) {}

  std::string iri(const std::string& v) const {
    for (const auto& [prefix, base] : g_.prefixes) {
      if (v.size() > base.size() && v.compare(0, base.size(), base) == 0 && is_pn_local(v.substr(base.size()))) {
        return prefix + ":" + v.substr(base.size());
      }
    }
    std::string out = "<";
    for (unsigned char c : v) {
      if (c <= 0x20 || c == '<' || c == '>' || c == '"' || c == '{' || c == '}' || c == '|' || c == '\\' ||
          c == '^' || c == '`') {
        char buf[12];
        std::snprintf(buf, sizeof buf, "\\u%04X", c);
        out += buf;
      } else {
        out.push_back(static_cast<char>(c));
      }
    }
    return out + ">";
  }

  std::string term(const Term& t) const {
    if (t.kind == Term::Kind::Iri) return iri(t.value);
    std::string out = "\"" + escape_literal(t.value) + "\"";
    if (!t.lang.empty()) return out + "@" + t.lang;
    if (!t.datatype.empty()) out += "^^" + iri(t.datatype);
    return out;
  }

 private:
  const Graph& g_;
};

}  // namespace

std::string serialize_turtle(const Graph& g) {
  Writer w(g);
  std::string out;
  for (const auto& [prefix, base] : g.prefixes) out += "@prefix " + prefix + ": <" + base + "> .\n";

  // Triples are ordered by subject then predicate, so grouping is a single pass.
  const Triple* prev = nullptr;
  for (const auto& t : g.triples) {
    if (prev && prev->subject == t.subject) {
      if (prev->predicate == t.predicate) {
        out += ",\n        " + w.term(t.object);
      } else {
        out += " ;\n    " + (t.predicate.value == std::string(ns::rdf) + "type" ? "a" : w.iri(t.predicate.value)) +
               " " + w.term(t.object);
      }
    } else {
      if (prev) out += " .\n";
      out += "\n" + w.term(t.subject) + "\n    " +
             (t.predicate.value == std::string(ns::rdf) + "type" ? "a" : w.iri(t.predicate.value)) + " " +
             w.term(t.object);
    }
    prev = &t;
  }
  if (prev) out += " .\n";
  return out;
}

}  // namespace repro_lens::prov
