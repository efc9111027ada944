#pragma once

#include "repro_lens/notebook.hpp"
#include "repro_lens/run_orchestrator.hpp"

#include <optional>
#include <string>
#include <vector>

namespace repro_lens::diff {

using Json = nlohmann::json;

enum class OutputKind { Stream, ExecuteResult, DisplayData, Error };

std::string_view to_string(OutputKind k);

struct MimeEntry {
  std::string mime;
  bool binary = false;
  /// Text payloads: newline-normalized text. Structured JSON: canonical dump.
  std::string text;
  /// Binary payloads: decoded byte length and SHA-256 of the bytes.
  std::size_t length = 0;
  std::string digest;
  bool operator==(const MimeEntry&) const = default;
};

/// Canonical comparison form of one output.
struct NormalizedOutput {
  OutputKind kind = OutputKind::Stream;
  nb::StreamName stream = nb::StreamName::Stdout;
  std::string text;
  /// Sorted by MIME type.
  std::vector<MimeEntry> entries;
  std::string ename;
  std::string evalue;
  bool operator==(const NormalizedOutput&) const = default;
};

Json to_json(const NormalizedOutput& n);

/// True for MIME types whose payload is text rather than base64 bytes.
bool is_text_mime(std::string_view mime);

/// Removes ANSI CSI escape sequences.
std::string strip_ansi(std::string_view s);
/// CRLF and lone CR become LF.
std::string normalize_newlines(std::string_view s);
/// Strips spaces and tabs (and \f, \v) before each newline and at the end.
std::string strip_trailing_whitespace(std::string_view s);
/// Stream text canonicalization: newlines, then ANSI, then trailing whitespace.
std::string normalize_stream_text(std::string_view s);

std::vector<NormalizedOutput> normalize_outputs(const std::vector<nb::Output>& outputs);
/// Re-normalizes an already normalized list (coalescing and text rules reapplied).
std::vector<NormalizedOutput> normalize_outputs(const std::vector<NormalizedOutput>& outputs);

enum class Verdict { Same, Different, OriginalEmpty, ReproducedMissing };

std::string_view to_string(Verdict v);

struct DiffDetail {
  std::size_t position = 0;
  std::optional<NormalizedOutput> original;
  std::optional<NormalizedOutput> reproduced;
  bool operator==(const DiffDetail&) const = default;
};

struct CellDiff {
  std::size_t index = 0;
  Verdict verdict = Verdict::Same;
  std::vector<DiffDetail> detail;
  bool operator==(const CellDiff&) const = default;
};

Json to_json(const CellDiff& d);

CellDiff diff_cell(const std::vector<nb::Output>& original, const std::vector<nb::Output>& reproduced,
                   std::size_t index);

struct NotebookDiff {
  enum class Overall { SameResults, DifferentResults, NotComparable };
  std::vector<CellDiff> cells;
  Overall overall = Overall::NotComparable;
  std::string reason;

  std::vector<std::size_t> flagged_cells() const;
};

std::string_view to_string(NotebookDiff::Overall o);

Json to_json(const NotebookDiff& d);

NotebookDiff diff_notebook(const nb::Notebook& original, const run::NotebookRunRecord& record);

}  // namespace repro_lens::diff
