#pragma once

#include "repro_lens/diff_engine.hpp"
#include "repro_lens/notebook.hpp"
#include "repro_lens/run_orchestrator.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace repro_lens::analytics {

using Json = nlohmann::json;

struct ExceptionKind {
  enum class Kind { ImportError, ModuleNotFoundError, FileNotFoundError, IOError, SyntaxError, Timeout, Other };
  Kind kind = Kind::Other;
  /// The original ename for Other.
  std::string ename;

  /// "ModuleNotFoundError", ..., "Timeout", or the ename itself for Other.
  std::string name() const;
  bool operator==(const ExceptionKind&) const = default;
};

/// Exact, case-sensitive match on the listed names.
ExceptionKind exception_kind_from_ename(const std::string& ename);

struct Outcome {
  enum class Kind { NotExecuted, Exception, SameResults, DifferentResults };
  Kind kind = Kind::NotExecuted;
  std::string reason;
  std::optional<ExceptionKind> exception;
  bool operator==(const Outcome&) const = default;
};

std::string_view to_string(Outcome::Kind k);

Outcome classify_run(const nb::ValidityReport& validity, const run::NotebookRunRecord& record,
                     const std::optional<diff::NotebookDiff>& diff);

/// Top-level modules imported by a piece of source.
std::set<std::string> extract_imports(const std::string& source);
/// Union over the notebook's code cells.
std::set<std::string> extract_imports(const nb::Notebook& notebook);

struct StructureMetrics {
  std::size_t code_cells = 0;
  std::size_t markdown_cells = 0;
  std::size_t raw_cells = 0;
  std::size_t cells_with_execution_count = 0;
  std::size_t cells_with_outputs = 0;
  /// Stored execution counts are exactly 1..n top to bottom.
  bool ascending_execution = true;
  /// Every code cell carries both an output and an execution count.
  bool all_code_cells_output_and_count = false;
  bool operator==(const StructureMetrics&) const = default;
};

StructureMetrics compute_structure_metrics(const nb::Notebook& notebook);

struct DashboardSummary {
  std::size_t notebooks = 0;
  std::size_t valid = 0;
  std::size_t executed = 0;
  std::size_t completed = 0;

  std::size_t not_executed = 0;
  std::size_t exceptions = 0;
  std::size_t same_results = 0;
  std::size_t different_results = 0;

  std::map<std::string, std::size_t> exception_kinds;
  /// (language, major.minor) -> notebooks.
  std::map<std::pair<std::string, std::string>, std::size_t> languages;

  std::size_t notebooks_with_output_and_count = 0;
  std::size_t notebooks_ascending = 0;
  std::size_t code_cells = 0;
  std::size_t markdown_cells = 0;
  std::size_t raw_cells = 0;
  /// Code cells flagged Different or ReproducedMissing across all diffs.
  std::size_t differing_cells = 0;

  /// module -> number of notebooks importing it.
  std::map<std::string, std::size_t> imports;

  bool operator==(const DashboardSummary&) const = default;
};

Json to_json(const DashboardSummary& s);

/// diffs and outcomes are aligned with report.notebooks.
DashboardSummary aggregate(const run::RepoRunReport& report, const std::vector<std::optional<diff::NotebookDiff>>& diffs,
                           const std::vector<Outcome>& outcomes);

/// Per-notebook derived data for a whole report.
struct ReportAnalysis {
  std::vector<std::optional<diff::NotebookDiff>> diffs;
  std::vector<Outcome> outcomes;
  DashboardSummary summary;
};

ReportAnalysis analyze(const run::RepoRunReport& report);

}  // namespace repro_lens::analytics
