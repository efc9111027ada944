#include "fixtures.hpp"
#include "generators.hpp"
#include "oracles.hpp"

#include "repro_lens/diff_engine.hpp"
#include "repro_lens/util/digest.hpp"

#include <doctest.h>

using namespace repro_lens;
using diff::Verdict;
using nb::Output;
using nb::StreamName;
using nb::StreamOutput;

namespace {

Output out_stream(std::string text, StreamName name = StreamName::Stdout) { return StreamOutput{name, std::move(text)}; }
Output out_plain(std::string text) { return nb::ExecuteResultOutput{{{"text/plain", std::move(text)}}, 1}; }

run::NotebookRunRecord completed_record(const nb::Notebook& n, const std::vector<std::vector<Output>>& outputs) {
  run::NotebookRunRecord r;
  r.path = n.source_path;
  r.terminal_status = run::TerminalStatus::completed();
  std::size_t k = 0;
  for (const auto& c : n.cells) {
    if (c.kind != nb::CellKind::Code) continue;
    run::CellRecord rec;
    rec.index = c.index;
    rec.result.outputs = outputs.at(k++);
    r.cell_records.push_back(rec);
  }
  return r;
}

}  // namespace

TEST_CASE("text canonicalization helpers") {
  CHECK(diff::normalize_newlines("a\r\nb\rc\n") == "a\nb\nc\n");
  CHECK(diff::strip_ansi("\x1b[1;31mred\x1b[0m") == "red");
  CHECK(diff::strip_ansi("\x1b\x1b[0m[31mx") == "x");
  CHECK(diff::strip_ansi("keep \x1b alone") == "keep \x1b alone");
  CHECK(diff::strip_trailing_whitespace("a \t\nb  \n  c\t") == "a\nb\n  c");
  CHECK(diff::normalize_stream_text("x\x1b[0m  \r\n") == "x\n");
  CHECK(diff::is_text_mime("text/plain"));
  CHECK(diff::is_text_mime("application/vnd.custom+json"));
  CHECK(diff::is_text_mime("image/svg+xml"));
  CHECK_FALSE(diff::is_text_mime("image/png"));
}

TEST_CASE("adjacent same-name streams are coalesced") {
  auto n = diff::normalize_outputs({out_stream("a"), out_stream("b\n"), out_stream("e", StreamName::Stderr),
                                    out_stream("c")});
  REQUIRE(n.size() == 3);
  CHECK(n[0].text == "ab\n");
  CHECK(n[1].stream == StreamName::Stderr);
  CHECK(n[2].text == "c");
}

TEST_CASE("cell verdicts") {
  CHECK(diff::diff_cell({out_stream("x\n")}, {out_stream("x\r\n")}, 0).verdict == Verdict::Same);
  CHECK(diff::diff_cell({}, {}, 0).verdict == Verdict::Same);
  CHECK(diff::diff_cell({}, {out_stream("x")}, 0).verdict == Verdict::OriginalEmpty);

  auto d = diff::diff_cell({out_stream("x\n"), out_plain("1")}, {out_stream("x\n"), out_plain("2")}, 4);
  CHECK(d.index == 4);
  CHECK(d.verdict == Verdict::Different);
  REQUIRE(d.detail.size() == 1);
  CHECK(d.detail[0].position == 1);
  CHECK(d.detail[0].original->entries[0].text == "1");
  CHECK(d.detail[0].reproduced->entries[0].text == "2");

  auto shorter = diff::diff_cell({out_stream("x"), out_plain("1")}, {out_stream("x")}, 0);
  REQUIRE(shorter.detail.size() == 1);
  CHECK_FALSE(shorter.detail[0].reproduced);
}

TEST_CASE("errors compare on name and value only") {
  Output a = nb::ErrorOutput{"ValueError", "bad", {"Traceback (most recent call last)", "line 1"}};
  Output b = nb::ErrorOutput{"ValueError", "bad", {"different traceback"}};
  Output c = nb::ErrorOutput{"ValueError", "worse", {}};
  CHECK(diff::diff_cell({a}, {b}, 0).verdict == Verdict::Same);
  CHECK(diff::diff_cell({a}, {c}, 0).verdict == Verdict::Different);
}

TEST_CASE("binary payloads compare by decoded bytes") {
  std::string bytes = std::string("\x89PNG\r\n\x1a\n", 8) + "payload";
  std::string b64 = "iVBORw0KGgpwYXlsb2Fk";
  std::string wrapped = "iVBORw0K\nGgpwYXlsb2Fk\n";
  Output x = nb::DisplayDataOutput{{{"image/png", b64}}};
  Output y = nb::DisplayDataOutput{{{"image/png", wrapped}}};
  Output z = nb::DisplayDataOutput{{{"image/png", "iVBORw0KGgpwYXlsb2Fl"}}};
  CHECK(diff::diff_cell({x}, {y}, 0).verdict == Verdict::Same);
  CHECK(diff::diff_cell({x}, {z}, 0).verdict == Verdict::Different);
  auto n = diff::normalize_outputs({x});
  REQUIRE(n[0].entries.size() == 1);
  CHECK(n[0].entries[0].binary);
  CHECK(n[0].entries[0].length == bytes.size());
  CHECK(n[0].entries[0].digest == oracle::hex(oracle::sha256(bytes)));
}

TEST_CASE("structured json payloads compare canonically") {
  Output a = nb::DisplayDataOutput{{{"application/json", nb::Json{{"b", 1}, {"a", {1, 2}}}}}};
  Output b = nb::DisplayDataOutput{{{"application/json", nb::Json::parse(R"({"a":[1,2],"b":1})")}}};
  Output c = nb::DisplayDataOutput{{{"application/json", nb::Json{{"a", {2, 1}}, {"b", 1}}}}};
  CHECK(diff::diff_cell({a}, {b}, 0).verdict == Verdict::Same);
  CHECK(diff::diff_cell({a}, {c}, 0).verdict == Verdict::Different);
}

TEST_CASE("normalization is idempotent and reflexive on random lists") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1500; ++i) {
    auto outs = testkit::random_text_outputs(rng);
    auto once = diff::normalize_outputs(outs);
    CHECK(diff::normalize_outputs(once) == once);
    auto self = diff::diff_cell(outs, outs, 0);
    CHECK(self.verdict == Verdict::Same);
  }
}

TEST_CASE("text verdicts agree with the naive oracle") {
  std::mt19937_64 rng(12);
  std::map<std::string, int> seen;
  for (int i = 0; i < 3000; ++i) {
    auto a = testkit::random_text_outputs(rng);
    auto b = testkit::variant_of(rng, a);
    std::string expected = oracle::naive_verdict(a, b);
    std::string got(diff::to_string(diff::diff_cell(a, b, 0).verdict));
    ++seen[expected];
    if (got != expected) {
      INFO("original: " << oracle::naive_render(a));
      INFO("reproduced: " << oracle::naive_render(b));
      CHECK(got == expected);
    }
  }
  // The generator must exercise every verdict for the agreement to mean much.
  CHECK(seen["Same"] > 300);
  CHECK(seen["Different"] > 300);
  CHECK(seen["OriginalEmpty"] > 20);
}

TEST_CASE("notebook diff flags exactly the differing cells") {
  auto n = nb::parse_notebook(
      testkit::notebook_json({{"print(1)", {testkit::stream_json("1\n")}, 1},
                              {"md", {}, std::nullopt, "markdown"},
                              {"x", {testkit::result_json("2", 2)}, 2},
                              {"pass", {}, 3},
                              {"y", {testkit::result_json("3", 4)}, 4}}),
      "n.ipynb");
  auto same = diff::diff_notebook(n, completed_record(n, {{out_stream("1\r\n")}, {out_plain("2")}, {out_stream("new")}, {out_plain("3")}}));
  CHECK(same.overall == diff::NotebookDiff::Overall::SameResults);
  CHECK(same.flagged_cells().empty());
  CHECK(same.cells.size() == 4);
  CHECK(same.cells[2].verdict == Verdict::OriginalEmpty);

  auto changed = diff::diff_notebook(n, completed_record(n, {{out_stream("1\n")}, {out_plain("2")}, {}, {out_plain("4")}}));
  CHECK(changed.overall == diff::NotebookDiff::Overall::DifferentResults);
  CHECK(changed.flagged_cells() == std::vector<std::size_t>{4});

  auto record = completed_record(n, {{out_stream("1\n")}, {out_plain("2")}, {}, {out_plain("3")}});
  record.cell_records.pop_back();
  auto missing = diff::diff_notebook(n, record);
  CHECK(missing.flagged_cells() == std::vector<std::size_t>{4});
  CHECK(missing.cells.back().verdict == Verdict::ReproducedMissing);
}

TEST_CASE("unfinished runs are not comparable") {
  auto n = nb::parse_notebook(testkit::notebook_json({{"x", {}, 1}}), "n.ipynb");
  run::NotebookRunRecord r;
  r.terminal_status = run::TerminalStatus::halted(0);
  CHECK(diff::diff_notebook(n, r).overall == diff::NotebookDiff::Overall::NotComparable);
  CHECK(diff::diff_notebook(n, r).reason == "execution halted");
  r.terminal_status = run::TerminalStatus::timed_out(0);
  CHECK(diff::diff_notebook(n, r).reason == "execution timed out");
  r.terminal_status = run::TerminalStatus::not_executed("missing kernel specification");
  CHECK(diff::diff_notebook(n, r).reason == "not executed: missing kernel specification");
}

TEST_CASE("diff json shape") {
  auto d = diff::diff_cell({out_stream("a")}, {out_stream("b")}, 2);
  auto j = diff::to_json(d);
  CHECK(j["index"] == 2);
  CHECK(j["verdict"] == "Different");
  CHECK(j["detail"][0]["original"]["text"] == "a");
  CHECK(j["detail"][0]["reproduced"]["name"] == "stdout");
}
