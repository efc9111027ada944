#pragma once

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace repro_lens::nb {

using Json = nlohmann::json;

/// MIME type -> payload. Text payloads are strings (multi-line lists are joined
/// at parse time); JSON MIME types may carry structured values; binary payloads
/// are base64 strings.
using MimeBundle = std::map<std::string, Json>;

enum class StreamName { Stdout, Stderr };

struct StreamOutput {
  StreamName name = StreamName::Stdout;
  std::string text;
  Json extra = Json::object();
  bool operator==(const StreamOutput&) const = default;
};

struct ExecuteResultOutput {
  MimeBundle data;
  std::optional<std::int64_t> execution_count;
  Json metadata = Json::object();
  Json extra = Json::object();
  bool operator==(const ExecuteResultOutput&) const = default;
};

struct DisplayDataOutput {
  MimeBundle data;
  Json metadata = Json::object();
  Json extra = Json::object();
  bool operator==(const DisplayDataOutput&) const = default;
};

struct ErrorOutput {
  std::string ename;
  std::string evalue;
  std::vector<std::string> traceback;
  Json extra = Json::object();
  bool operator==(const ErrorOutput&) const = default;
};

using Output = std::variant<StreamOutput, ExecuteResultOutput, DisplayDataOutput, ErrorOutput>;

enum class CellKind { Code, Markdown, Raw };

std::string_view to_string(CellKind kind);
std::string_view to_string(StreamName name);

struct Cell {
  std::size_t index = 0;
  CellKind kind = CellKind::Code;
  std::string source;
  std::optional<std::int64_t> execution_count;
  std::vector<Output> outputs;
  /// The format's optional cell id; kept for round-trip, never used for alignment.
  std::optional<std::string> id;
  Json metadata = Json::object();
  /// Unrecognized cell keys (attachments, ...), preserved verbatim.
  Json extra = Json::object();
  bool operator==(const Cell&) const = default;
};

struct KernelSpecInfo {
  std::string name;
  std::optional<std::string> display_name;
  Json extra = Json::object();
  bool operator==(const KernelSpecInfo&) const = default;
};

struct Notebook {
  int format_major = 4;
  int format_minor = 5;
  std::optional<KernelSpecInfo> kernel_spec;
  std::optional<std::string> language_name;
  std::optional<std::string> language_version;
  std::vector<Cell> cells;
  std::string source_path;

  /// Opaque side maps for lossless re-serialization.
  Json metadata_extra = Json::object();       // metadata minus kernelspec/language_info
  Json language_info_extra = Json::object();  // language_info minus name/version
  Json document_extra = Json::object();       // top-level keys beyond the four known ones

  bool operator==(const Notebook&) const = default;
};

struct ValidityReport {
  bool has_valid_format = false;
  bool has_kernel_spec = false;
  bool has_language_version = false;
  bool overall_valid = false;
  bool operator==(const ValidityReport&) const = default;
};

enum class ParseErrorKind { MalformedJson, UnsupportedFormat, SchemaViolation };

std::string_view to_string(ParseErrorKind kind);

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ParseErrorKind kind() const { return kind_; }

 private:
  ParseErrorKind kind_;
};

/// Parses an nbformat 4.x document. Throws ParseError.
Notebook parse_notebook(std::string_view raw, std::string path);

/// Total; never throws.
ValidityReport validate(const Notebook& nb) noexcept;

/// nbformat 4 JSON, one-space indent and sorted keys like the reference tooling.
std::string serialize_notebook(const Notebook& nb);

/// JSON form of a single output, as it appears in a notebook document.
Json output_to_json(const Output& out);
/// Inverse of output_to_json. Throws ParseError(SchemaViolation).
Output output_from_json(const Json& j);

/// Highest nbformat 4 minor version this parser knows about.
inline constexpr int kNewestKnownMinor = 5;

}  // namespace repro_lens::nb
