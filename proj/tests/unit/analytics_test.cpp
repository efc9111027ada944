#include "fixtures.hpp"
#include "oracles.hpp"

#include "repro_lens/analytics.hpp"

#include <doctest.h>

#include <random>

using namespace repro_lens;
using analytics::ExceptionKind;
using analytics::Outcome;
using K = ExceptionKind::Kind;

namespace {

run::NotebookRunRecord record_with(run::TerminalStatus status, std::vector<nb::Output> last_outputs = {}) {
  run::NotebookRunRecord r;
  r.terminal_status = std::move(status);
  run::CellRecord c;
  c.index = r.terminal_status.cell.value_or(0);
  c.result.outputs = std::move(last_outputs);
  r.cell_records.push_back(c);
  return r;
}

const nb::ValidityReport kValid{true, true, true, true};

}  // namespace

TEST_CASE("the five listed exception names map to their kinds") {
  // The listed names as they appear in the published study.
  const std::string listed = "ImportError, ModuleNotFoundError, FileNotFoundError, IOError, SyntaxError";
  std::vector<std::pair<std::string, K>> expected = {{"ImportError", K::ImportError},
                                                     {"ModuleNotFoundError", K::ModuleNotFoundError},
                                                     {"FileNotFoundError", K::FileNotFoundError},
                                                     {"IOError", K::IOError},
                                                     {"SyntaxError", K::SyntaxError}};
  for (const auto& [name, kind] : expected) {
    CHECK(listed.find(name) != std::string::npos);
    auto k = analytics::exception_kind_from_ename(name);
    CHECK(k.kind == kind);
    CHECK(k.name() == name);
  }
  auto other = analytics::exception_kind_from_ename("ZeroDivisionError");
  CHECK(other.kind == K::Other);
  CHECK(other.name() == "ZeroDivisionError");
  CHECK(analytics::exception_kind_from_ename("importerror").kind == K::Other);
  CHECK(analytics::exception_kind_from_ename("").kind == K::Other);
}

TEST_CASE("run classification") {
  auto halted = record_with(run::TerminalStatus::halted(0), {nb::StreamOutput{}, nb::ErrorOutput{"ModuleNotFoundError", "x", {}}});
  auto o = analytics::classify_run(kValid, halted, std::nullopt);
  CHECK(o.kind == Outcome::Kind::Exception);
  CHECK(o.exception->kind == K::ModuleNotFoundError);

  auto timed = analytics::classify_run(kValid, record_with(run::TerminalStatus::timed_out(0)), std::nullopt);
  CHECK(timed.exception->kind == K::Timeout);
  CHECK(timed.exception->name() == "Timeout");

  auto skipped = analytics::classify_run({true, false, true, false},
                                         record_with(run::TerminalStatus::not_executed("missing kernel specification")),
                                         std::nullopt);
  CHECK(skipped.kind == Outcome::Kind::NotExecuted);
  CHECK(skipped.reason == "missing kernel specification");

  diff::NotebookDiff same;
  same.overall = diff::NotebookDiff::Overall::SameResults;
  diff::NotebookDiff different;
  different.overall = diff::NotebookDiff::Overall::DifferentResults;
  auto done = record_with(run::TerminalStatus::completed());
  CHECK(analytics::classify_run(kValid, done, same).kind == Outcome::Kind::SameResults);
  CHECK(analytics::classify_run(kValid, done, different).kind == Outcome::Kind::DifferentResults);
}

TEST_CASE("import extraction on hand-picked cells") {
  using S = std::set<std::string>;
  CHECK(analytics::extract_imports("import numpy as np\nimport os.path") == S{"numpy", "os"});
  CHECK(analytics::extract_imports("from matplotlib import pyplot as plt") == S{"matplotlib"});
  CHECK(analytics::extract_imports("import a, b.c as d, e") == S{"a", "b", "e"});
  CHECK(analytics::extract_imports("from . import x\nfrom .y import z") == S{});
  CHECK(analytics::extract_imports("# import hidden\ns = 'import quoted'") == S{});
  CHECK(analytics::extract_imports("x = 1; import json") == S{"json"});
  CHECK(analytics::extract_imports("def f():\n    import pandas\n") == S{"pandas"});
  CHECK(analytics::extract_imports("doc = \"\"\"\nimport inside\n\"\"\"\nimport outside") == S{"outside"});
  CHECK(analytics::extract_imports("from sklearn.linear_model import (\n    LinearRegression,\n)") == S{"sklearn"});
  CHECK(analytics::extract_imports("important = 1\n__import__('os')") == S{});
  CHECK(analytics::extract_imports("import") == S{});
  CHECK(analytics::extract_imports("import 3d") == S{});
}

TEST_CASE("import extraction agrees with the generator on random cells") {
  std::mt19937_64 rng(5150);
  int disagreements = 0;
  for (int i = 0; i < 800; ++i) {
    auto cell = oracle::generate_import_cell(rng);
    auto got = analytics::extract_imports(cell.source);
    if (got != cell.imports) {
      ++disagreements;
      INFO(cell.source);
      CHECK(got == cell.imports);
    }
  }
  CHECK(disagreements == 0);
}

TEST_CASE("notebook imports skip markdown") {
  auto n = nb::parse_notebook(testkit::notebook_json({{"import numpy", {}, 1}, {"import fake", {}, std::nullopt, "markdown"}}),
                              "a.ipynb");
  CHECK(analytics::extract_imports(n) == std::set<std::string>{"numpy"});
}

TEST_CASE("structure metrics") {
  auto ordered = nb::parse_notebook(
      testkit::notebook_json({{"a", {testkit::stream_json("1")}, 1},
                              {"m", {}, std::nullopt, "markdown"},
                              {"b", {testkit::stream_json("2")}, 2},
                              {"r", {}, std::nullopt, "raw"}}),
      "a.ipynb");
  auto m = analytics::compute_structure_metrics(ordered);
  CHECK(m.code_cells == 2);
  CHECK(m.markdown_cells == 1);
  CHECK(m.raw_cells == 1);
  CHECK(m.cells_with_execution_count == 2);
  CHECK(m.cells_with_outputs == 2);
  CHECK(m.ascending_execution);
  CHECK(m.all_code_cells_output_and_count);

  auto skipped = nb::parse_notebook(testkit::notebook_json({{"a", {}, 1}, {"b", {testkit::stream_json("x")}, 3}}), "b.ipynb");
  auto s = analytics::compute_structure_metrics(skipped);
  CHECK_FALSE(s.ascending_execution);
  CHECK_FALSE(s.all_code_cells_output_and_count);

  auto unrun = nb::parse_notebook(testkit::notebook_json({{"a", {}, std::nullopt}}), "c.ipynb");
  CHECK_FALSE(analytics::compute_structure_metrics(unrun).ascending_execution);

  auto empty = nb::parse_notebook(testkit::notebook_json({{"m", {}, std::nullopt, "markdown"}}), "d.ipynb");
  auto e = analytics::compute_structure_metrics(empty);
  CHECK(e.ascending_execution);
  CHECK_FALSE(e.all_code_cells_output_and_count);
}

TEST_CASE("aggregate counts every notebook once") {
  run::RepoRunReport report;
  auto add = [&](std::string path, std::string raw, run::TerminalStatus status, std::vector<std::vector<nb::Output>> outs) {
    run::NotebookReport row;
    row.path = path;
    row.notebook = nb::parse_notebook(raw, path);
    row.validity = nb::validate(*row.notebook);
    run::NotebookRunRecord rec;
    rec.path = path;
    rec.terminal_status = status;
    std::size_t k = 0;
    for (const auto& c : row.notebook->cells) {
      if (c.kind != nb::CellKind::Code || k >= outs.size()) continue;
      run::CellRecord cr;
      cr.index = c.index;
      cr.result.outputs = outs[k++];
      rec.cell_records.push_back(cr);
    }
    row.record = rec;
    report.notebooks.push_back(row);
  };
  add("same.ipynb", testkit::notebook_json({{"import numpy\n1", {testkit::result_json("1", 1)}, 1}}),
      run::TerminalStatus::completed(), {{nb::ExecuteResultOutput{{{"text/plain", "1"}}, 1}}});
  add("diff.ipynb", testkit::notebook_json({{"import numpy, os\n1", {testkit::result_json("1", 1)}, 1}}, "3.8.5"),
      run::TerminalStatus::completed(), {{nb::ExecuteResultOutput{{{"text/plain", "2"}}, 1}}});
  add("err.ipynb", testkit::notebook_json({{"import missing_mod", {}, 1}}), run::TerminalStatus::halted(0),
      {{nb::ErrorOutput{"ModuleNotFoundError", "No module named 'missing_mod'", {}}}});
  add("skip.ipynb", testkit::notebook_json({{"x", {}, 1}}, ""), run::TerminalStatus::not_executed("missing language version"), {});
  run::NotebookReport broken;
  broken.path = "broken.ipynb";
  broken.parse_error = "unsupported nbformat 3";
  report.notebooks.push_back(broken);

  auto a = analytics::analyze(report);
  const auto& s = a.summary;
  CHECK(s.notebooks == 5);
  CHECK(s.valid == 3);
  CHECK(s.executed == 3);
  CHECK(s.completed == 2);
  CHECK(s.same_results == 1);
  CHECK(s.different_results == 1);
  CHECK(s.exceptions == 1);
  CHECK(s.not_executed == 2);
  CHECK(s.same_results + s.different_results + s.exceptions + s.not_executed == s.notebooks);
  CHECK(s.exception_kinds == std::map<std::string, std::size_t>{{"ModuleNotFoundError", 1}});
  CHECK(s.differing_cells == 1);
  CHECK(s.imports.at("numpy") == 2);
  CHECK(s.imports.at("os") == 1);
  CHECK(s.imports.at("missing_mod") == 1);
  CHECK(s.languages.at({"python", "3.10"}) == 2);
  CHECK(s.languages.at({"python", "3.8"}) == 1);
  CHECK(s.languages.at({"python", "unknown"}) == 1);

  auto j = analytics::to_json(s);
  CHECK(j["totals"]["notebooks"] == 5);
  CHECK(j["outcomes"]["exception"] == 1);
  CHECK(j["exception_kinds"]["ModuleNotFoundError"] == 1);
  CHECK(j["imports"][0]["module"] == "numpy");
  CHECK(j["imports"][0]["notebooks"] == 2);
  CHECK(j["structure"]["differing_cells"] == 1);
}
