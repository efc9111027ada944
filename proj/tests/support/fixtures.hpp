#pragma once

#include "repro_lens/env_manager.hpp"
#include "repro_lens/notebook.hpp"
#include "repro_lens/provenance.hpp"

#include "oracles.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace testkit {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& p, const std::string& content);
std::string read_file(const std::filesystem::path& p);

/// A satisfied environment handle usable with the mock launcher.
repro_lens::env::EnvironmentHandle mock_env(std::vector<std::string> packages = {});

/// Builds nbformat 4.5 JSON for a notebook of code cells.
struct CellSpec {
  std::string source;
  std::vector<repro_lens::nb::Json> outputs;
  std::optional<int> execution_count;
  std::string kind = "code";
};
std::string notebook_json(const std::vector<CellSpec>& cells, const std::string& language_version = "3.10.12",
                          const std::string& kernel = "python3");

repro_lens::nb::Json stream_json(const std::string& text, const std::string& name = "stdout");
repro_lens::nb::Json result_json(const std::string& text_plain, int count);
repro_lens::nb::Json error_json(const std::string& ename, const std::string& evalue);

/// The library's graph in the oracle's term model (plain literals typed xsd:string).
std::set<oracle::RdfTriple> as_rdf(const repro_lens::prov::Graph& g);

/// Directory holding the checked-in fixture corpus.
std::filesystem::path fixtures_dir();

/// Joins list-of-lines text fields so documents that differ only in how
/// multi-line strings are stored compare equal.
nlohmann::json canonical_notebook(const nlohmann::json& j);
/// The valid notebooks under fixtures/roundtrip, sorted.
std::vector<std::filesystem::path> roundtrip_corpus();

}  // namespace testkit
