#include "repro_lens/analytics.hpp"

#include "repro_lens/env_manager.hpp"

#include <algorithm>
#include <regex>

namespace repro_lens::analytics {

std::string ExceptionKind::name() const {
  switch (kind) {
    case Kind::ImportError: return "ImportError";
    case Kind::ModuleNotFoundError: return "ModuleNotFoundError";
    case Kind::FileNotFoundError: return "FileNotFoundError";
    case Kind::IOError: return "IOError";
    case Kind::SyntaxError: return "SyntaxError";
    case Kind::Timeout: return "Timeout";
    case Kind::Other: return ename;
  }
  return ename;
}

ExceptionKind exception_kind_from_ename(const std::string& ename) {
  using K = ExceptionKind::Kind;
  static const std::map<std::string, K> listed = {{"ImportError", K::ImportError},
                                                  {"ModuleNotFoundError", K::ModuleNotFoundError},
                                                  {"FileNotFoundError", K::FileNotFoundError},
                                                  {"IOError", K::IOError},
                                                  {"SyntaxError", K::SyntaxError}};
  if (auto it = listed.find(ename); it != listed.end()) return {it->second, {}};
  return {K::Other, ename};
}

std::string_view to_string(Outcome::Kind k) {
  switch (k) {
    case Outcome::Kind::NotExecuted: return "NotExecuted";
    case Outcome::Kind::Exception: return "Exception";
    case Outcome::Kind::SameResults: return "SameResults";
    case Outcome::Kind::DifferentResults: return "DifferentResults";
  }
  return "NotExecuted";
}

Outcome classify_run(const nb::ValidityReport& validity, const run::NotebookRunRecord& record,
                     const std::optional<diff::NotebookDiff>& diff) {
  using K = run::TerminalStatus::Kind;
  const auto& status = record.terminal_status;
  if (status.kind == K::NotExecuted) return {Outcome::Kind::NotExecuted, status.reason, std::nullopt};
  if (!validity.overall_valid) return {Outcome::Kind::NotExecuted, "invalid notebook", std::nullopt};
  if (status.kind == K::TimedOut) {
    return {Outcome::Kind::Exception, {}, ExceptionKind{ExceptionKind::Kind::Timeout, {}}};
  }
  if (status.kind == K::HaltedOnError) {
    std::string ename;
    for (const auto& c : record.cell_records) {
      if (c.index != status.cell || c.result.outputs.empty()) continue;
      if (auto e = std::get_if<nb::ErrorOutput>(&c.result.outputs.back())) ename = e->ename;
    }
    return {Outcome::Kind::Exception, {}, exception_kind_from_ename(ename)};
  }
  if (!diff || diff->overall == diff::NotebookDiff::Overall::NotComparable) {
    return {Outcome::Kind::NotExecuted, "not comparable", std::nullopt};
  }
  return {diff->overall == diff::NotebookDiff::Overall::SameResults ? Outcome::Kind::SameResults
                                                                    : Outcome::Kind::DifferentResults,
          {},
          std::nullopt};
}

namespace {

// Source lines with comments removed and string contents blanked to a pair of
// quotes, so keywords inside literals never look like statements.
std::vector<std::string> code_lines(const std::string& src) {
  std::vector<std::string> lines(1);
  std::size_t i = 0;
  const std::size_t n = src.size();
  while (i < n) {
    char c = src[i];
    if (c == '\n') {
      lines.emplace_back();
      ++i;
    } else if (c == '#') {
      while (i < n && src[i] != '\n') ++i;
    } else if (c == '\'' || c == '"') {
      bool triple = i + 2 < n && src[i + 1] == c && src[i + 2] == c;
      std::size_t q = triple ? 3 : 1;
      lines.back() += '"';
      i += q;
      while (i < n) {
        if (src[i] == '\\' && i + 1 < n) {
          if (src[i + 1] == '\n') lines.emplace_back();
          i += 2;
          continue;
        }
        if (src[i] == '\n') {
          lines.emplace_back();
          ++i;
          if (!triple) break;  // unterminated single-line string
          continue;
        }
        if (src[i] == c && (!triple || (i + 2 < n && src[i + 1] == c && src[i + 2] == c))) {
          i += q;
          lines.back() += '"';
          break;
        }
        ++i;
      }
    } else {
      lines.back() += c;
      ++i;
    }
  }
  return lines;
}

std::vector<std::string> split_statements(const std::string& line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ';') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::string top_level(const std::string& dotted) { return dotted.substr(0, dotted.find('.')); }

const std::string kDotted = R"([A-Za-z_][A-Za-z0-9_]*(?:\s*\.\s*[A-Za-z_][A-Za-z0-9_]*)*)";
const std::string kIdent = R"([A-Za-z_][A-Za-z0-9_]*)";

void parse_statement(const std::string& stmt, std::set<std::string>& out) {
  static const std::regex import_re(R"(^\s*import\s+(.+?)\s*$)");
  static const std::regex alias_re("^\\s*(" + kDotted + ")(?:\\s+as\\s+" + kIdent + ")?\\s*$");
  static const std::regex from_re("^\\s*from\\s+(" + kDotted + ")\\s+import(?:\\s+[A-Za-z_(*]|\\s*[(*]).*");
  std::smatch m;
  if (std::regex_match(stmt, m, from_re)) {
    std::string dotted = m[1].str();
    std::erase_if(dotted, [](unsigned char ch) { return std::isspace(ch); });
    out.insert(top_level(dotted));
    return;
  }
  if (!std::regex_match(stmt, m, import_re)) return;
  std::string names = m[1].str();
  std::vector<std::string> found;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = names.find(',', start);
    std::string part = names.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::smatch pm;
    if (!std::regex_match(part, pm, alias_re)) return;  // malformed: skip the whole statement
    std::string dotted = pm[1].str();
    std::erase_if(dotted, [](unsigned char ch) { return std::isspace(ch); });
    found.push_back(top_level(dotted));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  out.insert(found.begin(), found.end());
}

}  // namespace

std::set<std::string> extract_imports(const std::string& source) {
  std::set<std::string> out;
  for (const auto& line : code_lines(source)) {
    for (const auto& stmt : split_statements(line)) parse_statement(stmt, out);
  }
  return out;
}

std::set<std::string> extract_imports(const nb::Notebook& notebook) {
  std::set<std::string> out;
  for (const auto& cell : notebook.cells) {
    if (cell.kind != nb::CellKind::Code) continue;
    auto found = extract_imports(cell.source);
    out.insert(found.begin(), found.end());
  }
  return out;
}

StructureMetrics compute_structure_metrics(const nb::Notebook& notebook) {
  StructureMetrics m;
  std::int64_t expected = 1;
  for (const auto& cell : notebook.cells) {
    switch (cell.kind) {
      case nb::CellKind::Markdown: ++m.markdown_cells; continue;
      case nb::CellKind::Raw: ++m.raw_cells; continue;
      case nb::CellKind::Code: break;
    }
    ++m.code_cells;
    if (cell.execution_count) ++m.cells_with_execution_count;
    if (!cell.outputs.empty()) ++m.cells_with_outputs;
    if (cell.execution_count != expected) m.ascending_execution = false;
    ++expected;
  }
  std::size_t both = 0;
  for (const auto& cell : notebook.cells) {
    if (cell.kind == nb::CellKind::Code && cell.execution_count && !cell.outputs.empty()) ++both;
  }
  m.all_code_cells_output_and_count = m.code_cells > 0 && both == m.code_cells;
  return m;
}

DashboardSummary aggregate(const run::RepoRunReport& report,
                           const std::vector<std::optional<diff::NotebookDiff>>& diffs,
                           const std::vector<Outcome>& outcomes) {
  DashboardSummary s;
  for (std::size_t i = 0; i < report.notebooks.size(); ++i) {
    const auto& row = report.notebooks[i];
    ++s.notebooks;
    if (row.validity.overall_valid) ++s.valid;
    if (row.record && row.record->terminal_status.kind != run::TerminalStatus::Kind::NotExecuted) ++s.executed;
    if (row.record && row.record->terminal_status.kind == run::TerminalStatus::Kind::Completed) ++s.completed;

    const Outcome& o = outcomes.at(i);
    switch (o.kind) {
      case Outcome::Kind::NotExecuted: ++s.not_executed; break;
      case Outcome::Kind::Exception:
        ++s.exceptions;
        ++s.exception_kinds[o.exception ? o.exception->name() : std::string{}];
        break;
      case Outcome::Kind::SameResults: ++s.same_results; break;
      case Outcome::Kind::DifferentResults: ++s.different_results; break;
    }
    if (i < diffs.size() && diffs[i]) s.differing_cells += diffs[i]->flagged_cells().size();

    if (!row.notebook) continue;
    const auto& notebook = *row.notebook;
    std::string lang = notebook.language_name.value_or("unknown");
    std::transform(lang.begin(), lang.end(), lang.begin(), [](unsigned char c) { return std::tolower(c); });
    std::string version = "unknown";
    if (notebook.language_version) {
      if (auto v = env::Version::parse(*notebook.language_version)) version = v->major_minor();
    }
    ++s.languages[{lang, version}];

    auto m = compute_structure_metrics(notebook);
    s.code_cells += m.code_cells;
    s.markdown_cells += m.markdown_cells;
    s.raw_cells += m.raw_cells;
    if (m.all_code_cells_output_and_count) ++s.notebooks_with_output_and_count;
    if (m.ascending_execution) ++s.notebooks_ascending;
    for (const auto& mod : extract_imports(notebook)) ++s.imports[mod];
  }
  return s;
}

ReportAnalysis analyze(const run::RepoRunReport& report) {
  ReportAnalysis a;
  for (const auto& row : report.notebooks) {
    std::optional<diff::NotebookDiff> d;
    if (row.notebook && row.record && row.record->terminal_status.kind == run::TerminalStatus::Kind::Completed) {
      d = diff::diff_notebook(*row.notebook, *row.record);
    }
    run::NotebookRunRecord none;
    none.path = row.path;
    none.terminal_status = run::TerminalStatus::not_executed("not run");
    a.outcomes.push_back(classify_run(row.validity, row.record ? *row.record : none, d));
    a.diffs.push_back(std::move(d));
  }
  a.summary = aggregate(report, a.diffs, a.outcomes);
  return a;
}

Json to_json(const DashboardSummary& s) {
  Json languages = Json::array();
  for (const auto& [key, count] : s.languages) {
    languages.push_back({{"language", key.first}, {"version", key.second}, {"notebooks", count}});
  }
  Json imports = Json::array();
  std::vector<std::pair<std::string, std::size_t>> sorted(s.imports.begin(), s.imports.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.second > b.second; });
  for (const auto& [mod, count] : sorted) imports.push_back({{"module", mod}, {"notebooks", count}});
  return {{"totals", {{"notebooks", s.notebooks}, {"valid", s.valid}, {"executed", s.executed}, {"completed", s.completed}}},
          {"outcomes",
           {{"same_results", s.same_results},
            {"different_results", s.different_results},
            {"exception", s.exceptions},
            {"not_executed", s.not_executed}}},
          {"exception_kinds", s.exception_kinds},
          {"languages", languages},
          {"structure",
           {{"notebooks_with_output_and_execution_count", s.notebooks_with_output_and_count},
            {"notebooks_executed_in_order", s.notebooks_ascending},
            {"code_cells", s.code_cells},
            {"markdown_cells", s.markdown_cells},
            {"raw_cells", s.raw_cells},
            {"differing_cells", s.differing_cells}}},
          {"imports", imports}};
}

}  // namespace repro_lens::analytics
