#include "fixtures.hpp"

#include "repro_lens/notebook.hpp"

#include <doctest.h>

using namespace repro_lens;
using nb::Json;
using nb::ParseErrorKind;
namespace fs = std::filesystem;

namespace {

ParseErrorKind parse_kind(const std::string& raw) {
  try {
    nb::parse_notebook(raw, "x.ipynb");
  } catch (const nb::ParseError& e) {
    return e.kind();
  }
  FAIL("parse succeeded");
  return ParseErrorKind::MalformedJson;
}

}  // namespace

TEST_CASE("parses a minimal notebook") {
  auto raw = testkit::notebook_json({{"print('hi')", {testkit::stream_json("hi\n")}, 1},
                                     {"# heading", {}, std::nullopt, "markdown"}});
  auto n = nb::parse_notebook(raw, "dir/a.ipynb");
  CHECK(n.source_path == "dir/a.ipynb");
  CHECK(n.format_major == 4);
  CHECK(n.format_minor == 5);
  REQUIRE(n.kernel_spec);
  CHECK(n.kernel_spec->name == "python3");
  CHECK(n.language_name == "python");
  CHECK(n.language_version == "3.10.12");
  REQUIRE(n.cells.size() == 2);
  CHECK(n.cells[0].kind == nb::CellKind::Code);
  CHECK(n.cells[0].execution_count == 1);
  CHECK(n.cells[0].id == "c0");
  CHECK(n.cells[1].kind == nb::CellKind::Markdown);
  CHECK(n.cells[1].index == 1);
  auto* s = std::get_if<nb::StreamOutput>(&n.cells[0].outputs.at(0));
  REQUIRE(s);
  CHECK(s->text == "hi\n");
}

TEST_CASE("multi-line sources are joined") {
  Json doc = Json::parse(testkit::notebook_json({{"x", {}, std::nullopt}}));
  doc["cells"][0]["source"] = {"a = 1\n", "b = 2"};
  doc["cells"][0]["outputs"] = {{{"output_type", "stream"}, {"name", "stderr"}, {"text", {"w\n", "x"}}}};
  auto n = nb::parse_notebook(doc.dump(), "x.ipynb");
  CHECK(n.cells[0].source == "a = 1\nb = 2");
  auto* s = std::get_if<nb::StreamOutput>(&n.cells[0].outputs[0]);
  REQUIRE(s);
  CHECK(s->name == nb::StreamName::Stderr);
  CHECK(s->text == "w\nx");
}

TEST_CASE("parse error kinds") {
  CHECK(parse_kind("{not json") == ParseErrorKind::MalformedJson);
  CHECK(parse_kind("") == ParseErrorKind::MalformedJson);
  CHECK(parse_kind(R"({"nbformat": 3, "nbformat_minor": 0, "worksheets": []})") == ParseErrorKind::UnsupportedFormat);
  CHECK(parse_kind(R"({"metadata": {}, "cells": []})") == ParseErrorKind::UnsupportedFormat);
  CHECK(parse_kind("[]") == ParseErrorKind::SchemaViolation);
  CHECK(parse_kind(R"({"nbformat": 4, "nbformat_minor": 5, "metadata": {}})") == ParseErrorKind::SchemaViolation);
  CHECK(parse_kind(R"({"nbformat": 4, "nbformat_minor": 5, "metadata": {},
    "cells": [{"cell_type": "code", "source": "x", "metadata": {}}]})") == ParseErrorKind::SchemaViolation);
  CHECK(parse_kind(R"({"nbformat": 4, "nbformat_minor": 5, "metadata": {},
    "cells": [{"cell_type": "widget", "source": "x", "metadata": {}}]})") == ParseErrorKind::SchemaViolation);
  CHECK(parse_kind(R"({"nbformat": 4, "nbformat_minor": 5, "metadata": {},
    "cells": [{"cell_type": "markdown", "source": "x", "metadata": {}, "outputs": [{"output_type": "stream"}]}]})") ==
        ParseErrorKind::SchemaViolation);
  CHECK(parse_kind(R"({"nbformat": 4, "nbformat_minor": 5, "metadata": {},
    "cells": [{"cell_type": "code", "source": "x", "metadata": {}, "execution_count": 0, "outputs": []}]})") ==
        ParseErrorKind::SchemaViolation);
  CHECK(parse_kind(R"({"nbformat": 4, "nbformat_minor": 5, "metadata": {"kernelspec": {"display_name": "x"}},
    "cells": []})") == ParseErrorKind::SchemaViolation);
  CHECK(parse_kind(R"({"nbformat": 4, "nbformat_minor": 5, "metadata": {},
    "cells": [{"cell_type": "code", "source": "x", "metadata": {}, "outputs": [{"output_type": "bogus"}]}]})") ==
        ParseErrorKind::SchemaViolation);
}

TEST_CASE("validity flags") {
  auto full = nb::validate(nb::parse_notebook(testkit::notebook_json({}), "a.ipynb"));
  CHECK(full == nb::ValidityReport{true, true, true, true});

  auto no_version = nb::validate(nb::parse_notebook(testkit::notebook_json({}, ""), "a.ipynb"));
  CHECK(no_version == nb::ValidityReport{true, true, false, false});

  auto no_kernel = nb::validate(nb::parse_notebook(testkit::notebook_json({}, "3.9", ""), "a.ipynb"));
  CHECK(no_kernel == nb::ValidityReport{true, false, true, false});

  Json doc = Json::parse(testkit::notebook_json({}));
  doc["nbformat_minor"] = 99;
  auto future = nb::validate(nb::parse_notebook(doc.dump(), "a.ipynb"));
  CHECK_FALSE(future.has_valid_format);
  CHECK_FALSE(future.overall_valid);

  nb::Notebook hand;
  hand.format_major = 3;
  CHECK_FALSE(nb::validate(hand).has_valid_format);
}

TEST_CASE("outputs convert both ways") {
  std::vector<Json> samples = {
      testkit::stream_json("a\nb\n"),
      testkit::result_json("42", 3),
      {{"output_type", "display_data"},
       {"data", {{"image/png", "iVBORw0KGgo="}, {"text/plain", "<Figure>"}}},
       {"metadata", {{"width", 3}}}},
      testkit::error_json("KeyError", "'k'"),
  };
  for (const auto& j : samples) {
    auto o = nb::output_from_json(j);
    CHECK(testkit::canonical_notebook(nb::output_to_json(o)) == testkit::canonical_notebook(j));
    CHECK(nb::output_from_json(nb::output_to_json(o)) == o);
  }
  CHECK_THROWS_AS(nb::output_from_json({{"output_type", "stream"}}), nb::ParseError);
  CHECK_THROWS_AS(nb::output_from_json(Json::array()), nb::ParseError);
}

TEST_CASE("round-trip corpus keeps structure") {
  auto files = testkit::roundtrip_corpus();
  REQUIRE(files.size() >= 20);
  for (const auto& f : files) {
    INFO(f.filename().string());
    std::string raw = testkit::read_file(f);
    auto first = nb::parse_notebook(raw, f.filename().string());
    std::string written = nb::serialize_notebook(first);
    auto second = nb::parse_notebook(written, f.filename().string());
    CHECK(second == first);
    CHECK(nb::serialize_notebook(second) == written);
    CHECK(testkit::canonical_notebook(Json::parse(written)) == testkit::canonical_notebook(Json::parse(raw)));
  }
}

TEST_CASE("serializer writes sorted keys and list-of-lines text") {
  auto n = nb::parse_notebook(testkit::notebook_json({{"a = 1\nb = 2", {}, 1}}), "a.ipynb");
  Json doc = Json::parse(nb::serialize_notebook(n));
  CHECK(doc["cells"][0]["source"] == Json({"a = 1\n", "b = 2"}));
  std::string text = nb::serialize_notebook(n);
  CHECK(text.find("\"cells\"") < text.find("\"metadata\""));
  CHECK(text.find("\"metadata\"") < text.find("\"nbformat\""));
  CHECK(text.back() == '\n');
}
