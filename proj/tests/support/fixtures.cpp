#include "fixtures.hpp"

#include "repro_lens/util/ulid.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using repro_lens::nb::Json;

namespace testkit {

TempDir::TempDir(const std::string& tag) {
  path_ = fs::temp_directory_path() / ("repro-lens-test-" + tag + "-" + repro_lens::util::make_ulid());
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

repro_lens::env::EnvironmentHandle mock_env(std::vector<std::string> packages) {
  repro_lens::env::EnvironmentHandle h;
  h.env_id = "mock-env";
  h.env_dir = "/nonexistent/mock-env";
  h.interpreter_path = "/nonexistent/mock-env/bin/python";
  h.actual_interpreter_version = {3, 10, 12};
  h.satisfied = true;
  h.installed_packages = std::move(packages);
  return h;
}

Json stream_json(const std::string& text, const std::string& name) {
  return {{"output_type", "stream"}, {"name", name}, {"text", text}};
}

Json result_json(const std::string& text_plain, int count) {
  return {{"output_type", "execute_result"},
          {"data", {{"text/plain", text_plain}}},
          {"metadata", Json::object()},
          {"execution_count", count}};
}

Json error_json(const std::string& ename, const std::string& evalue) {
  return {{"output_type", "error"}, {"ename", ename}, {"evalue", evalue}, {"traceback", Json::array()}};
}

std::string notebook_json(const std::vector<CellSpec>& cells, const std::string& language_version,
                          const std::string& kernel) {
  Json doc;
  doc["nbformat"] = 4;
  doc["nbformat_minor"] = 5;
  Json meta = Json::object();
  if (!kernel.empty()) meta["kernelspec"] = {{"name", kernel}, {"display_name", "Python 3"}, {"language", "python"}};
  Json li = {{"name", "python"}};
  if (!language_version.empty()) li["version"] = language_version;
  meta["language_info"] = li;
  doc["metadata"] = meta;
  Json arr = Json::array();
  int n = 0;
  for (const auto& c : cells) {
    Json cell = {{"cell_type", c.kind}, {"id", "c" + std::to_string(n++)}, {"metadata", Json::object()},
                 {"source", c.source}};
    if (c.kind == "code") {
      cell["outputs"] = c.outputs;
      cell["execution_count"] = c.execution_count ? Json(*c.execution_count) : Json(nullptr);
    }
    arr.push_back(cell);
  }
  doc["cells"] = arr;
  return doc.dump(1);
}

std::set<oracle::RdfTriple> as_rdf(const repro_lens::prov::Graph& g) {
  auto term = [](const repro_lens::prov::Term& t) {
    oracle::RdfTerm r;
    if (t.kind == repro_lens::prov::Term::Kind::Iri) {
      r.kind = oracle::RdfTerm::Kind::Iri;
      r.value = t.value;
      return r;
    }
    r.kind = oracle::RdfTerm::Kind::Literal;
    r.value = t.value;
    r.lang = t.lang;
    r.datatype = t.datatype.empty() ? oracle::kXsdString : t.datatype;
    return r;
  };
  std::set<oracle::RdfTriple> out;
  for (const auto& t : g.triples) out.insert({term(t.subject), term(t.predicate), term(t.object)});
  return out;
}

fs::path fixtures_dir() { return REPRO_LENS_FIXTURES; }

// Joins list-of-lines text fields so documents that differ only in how
// multi-line strings are stored compare equal.
nlohmann::json canonical_notebook(const nlohmann::json& j) {
  if (j.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : j.items()) {
      bool joinable = (k == "source" || k == "text") && v.is_array();
      if (joinable) {
        std::string s;
        for (const auto& part : v) s += part.get<std::string>();
        out[k] = s;
      } else if (k == "data" && v.is_object()) {
        nlohmann::json d = nlohmann::json::object();
        for (const auto& [mime, payload] : v.items()) {
          bool strings = payload.is_array() && std::all_of(payload.begin(), payload.end(), [](const nlohmann::json& p) {
                           return p.is_string();
                         });
          if (strings) {
            std::string s;
            for (const auto& part : payload) s += part.get<std::string>();
            d[mime] = s;
          } else {
            d[mime] = canonical_notebook(payload);
          }
        }
        out[k] = d;
      } else {
        out[k] = canonical_notebook(v);
      }
    }
    return out;
  }
  if (j.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : j) out.push_back(canonical_notebook(v));
    return out;
  }
  return j;
}

std::vector<fs::path> roundtrip_corpus() {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(fixtures_dir() / "roundtrip")) {
    if (e.path().extension() == ".ipynb") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}


}  // namespace testkit
