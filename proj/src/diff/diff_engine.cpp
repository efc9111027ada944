#include "repro_lens/diff_engine.hpp"

#include "repro_lens/util/digest.hpp"

#include <algorithm>

namespace repro_lens::diff {

std::string_view to_string(OutputKind k) {
  switch (k) {
    case OutputKind::Stream: return "stream";
    case OutputKind::ExecuteResult: return "execute_result";
    case OutputKind::DisplayData: return "display_data";
    case OutputKind::Error: return "error";
  }
  return "stream";
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Same: return "Same";
    case Verdict::Different: return "Different";
    case Verdict::OriginalEmpty: return "OriginalEmpty";
    case Verdict::ReproducedMissing: return "ReproducedMissing";
  }
  return "Same";
}

std::string_view to_string(NotebookDiff::Overall o) {
  switch (o) {
    case NotebookDiff::Overall::SameResults: return "SameResults";
    case NotebookDiff::Overall::DifferentResults: return "DifferentResults";
    case NotebookDiff::Overall::NotComparable: return "NotComparable";
  }
  return "NotComparable";
}

bool is_text_mime(std::string_view mime) {
  auto ends_with = [&](std::string_view suffix) {
    return mime.size() >= suffix.size() && mime.substr(mime.size() - suffix.size()) == suffix;
  };
  return mime.rfind("text/", 0) == 0 || mime == "application/json" || mime == "application/javascript" ||
         mime == "image/svg+xml" || ends_with("+json") || ends_with("+xml");
}

namespace {

bool is_csi_param(unsigned char c) { return c >= 0x30 && c <= 0x3F; }
bool is_csi_intermediate(unsigned char c) { return c >= 0x20 && c <= 0x2F; }
bool is_csi_final(unsigned char c) { return c >= 0x40 && c <= 0x7E; }

// One left-to-right pass; returns whether anything was removed.
bool strip_ansi_once(std::string_view s, std::string& out) {
  out.clear();
  bool removed = false;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '\x1b' && i + 1 < s.size() && s[i + 1] == '[') {
      std::size_t j = i + 2;
      while (j < s.size() && is_csi_param(s[j])) ++j;
      while (j < s.size() && is_csi_intermediate(s[j])) ++j;
      if (j < s.size() && is_csi_final(s[j])) {
        i = j + 1;
        removed = true;
        continue;
      }
    }
    out.push_back(s[i++]);
  }
  return removed;
}

bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\f' || c == '\v'; }

}  // namespace

std::string strip_ansi(std::string_view s) {
  std::string cur(s), next;
  // Removing one sequence can splice an ESC onto a following "[...m".
  while (strip_ansi_once(cur, next)) cur.swap(next);
  return cur;
}

std::string normalize_newlines(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < s.size() && s[i + 1] == '\n') ++i;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::string strip_trailing_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\n') {
      while (!out.empty() && is_blank(out.back())) out.pop_back();
    }
    out.push_back(c);
  }
  while (!out.empty() && is_blank(out.back())) out.pop_back();
  return out;
}

std::string normalize_stream_text(std::string_view s) {
  return strip_trailing_whitespace(strip_ansi(normalize_newlines(s)));
}

namespace {

MimeEntry normalize_entry(const std::string& mime, const Json& payload) {
  MimeEntry e;
  e.mime = mime;
  if (!payload.is_string()) {
    e.text = payload.dump();
    return e;
  }
  const auto& s = payload.get_ref<const std::string&>();
  if (is_text_mime(mime)) {
    e.text = normalize_newlines(s);
    return e;
  }
  std::string bytes;
  if (!util::base64_decode(s, bytes)) bytes = s;
  e.binary = true;
  e.length = bytes.size();
  e.digest = util::sha256_hex(bytes);
  return e;
}

NormalizedOutput normalize_one(const nb::Output& out) {
  NormalizedOutput n;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, nb::StreamOutput>) {
          n.kind = OutputKind::Stream;
          n.stream = o.name;
          n.text = o.text;
        } else if constexpr (std::is_same_v<T, nb::ErrorOutput>) {
          n.kind = OutputKind::Error;
          n.ename = o.ename;
          n.evalue = o.evalue;
        } else {
          n.kind = std::is_same_v<T, nb::ExecuteResultOutput> ? OutputKind::ExecuteResult : OutputKind::DisplayData;
          for (const auto& [mime, payload] : o.data) n.entries.push_back(normalize_entry(mime, payload));
        }
      },
      out);
  return n;
}

// Coalesces adjacent same-name streams, then canonicalizes every text.
std::vector<NormalizedOutput> finish(std::vector<NormalizedOutput> raw) {
  std::vector<NormalizedOutput> out;
  for (auto& n : raw) {
    if (n.kind == OutputKind::Stream && !out.empty() && out.back().kind == OutputKind::Stream &&
        out.back().stream == n.stream) {
      out.back().text += n.text;
      continue;
    }
    out.push_back(std::move(n));
  }
  for (auto& n : out) {
    if (n.kind == OutputKind::Stream) n.text = normalize_stream_text(n.text);
    for (auto& e : n.entries) {
      if (!e.binary) e.text = normalize_newlines(e.text);
    }
    std::sort(n.entries.begin(), n.entries.end(),
              [](const MimeEntry& a, const MimeEntry& b) { return a.mime < b.mime; });
  }
  return out;
}

}  // namespace

std::vector<NormalizedOutput> normalize_outputs(const std::vector<nb::Output>& outputs) {
  std::vector<NormalizedOutput> raw;
  raw.reserve(outputs.size());
  for (const auto& o : outputs) raw.push_back(normalize_one(o));
  return finish(std::move(raw));
}

std::vector<NormalizedOutput> normalize_outputs(const std::vector<NormalizedOutput>& outputs) {
  return finish(outputs);
}

Json to_json(const NormalizedOutput& n) {
  Json j = {{"kind", to_string(n.kind)}};
  switch (n.kind) {
    case OutputKind::Stream:
      j["name"] = nb::to_string(n.stream);
      j["text"] = n.text;
      break;
    case OutputKind::Error:
      j["ename"] = n.ename;
      j["evalue"] = n.evalue;
      break;
    default: {
      Json data = Json::object();
      for (const auto& e : n.entries) {
        data[e.mime] = e.binary ? Json{{"length", e.length}, {"sha256", e.digest}} : Json(e.text);
      }
      j["data"] = data;
    }
  }
  return j;
}

Json to_json(const CellDiff& d) {
  Json detail = Json::array();
  for (const auto& x : d.detail) {
    detail.push_back({{"position", x.position},
                      {"original", x.original ? to_json(*x.original) : Json(nullptr)},
                      {"reproduced", x.reproduced ? to_json(*x.reproduced) : Json(nullptr)}});
  }
  return {{"index", d.index}, {"verdict", to_string(d.verdict)}, {"detail", detail}};
}

Json to_json(const NotebookDiff& d) {
  Json cells = Json::array();
  for (const auto& c : d.cells) cells.push_back(to_json(c));
  Json j = {{"overall", to_string(d.overall)}, {"cells", cells}};
  if (!d.reason.empty()) j["reason"] = d.reason;
  return j;
}

CellDiff diff_cell(const std::vector<nb::Output>& original, const std::vector<nb::Output>& reproduced,
                   std::size_t index) {
  CellDiff d;
  d.index = index;
  auto a = normalize_outputs(original);
  auto b = normalize_outputs(reproduced);
  if (a == b) {
    d.verdict = Verdict::Same;
    return d;
  }
  if (a.empty()) {
    d.verdict = Verdict::OriginalEmpty;
    return d;
  }
  d.verdict = Verdict::Different;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    std::optional<NormalizedOutput> x, y;
    if (i < a.size()) x = a[i];
    if (i < b.size()) y = b[i];
    if (x != y) d.detail.push_back({i, std::move(x), std::move(y)});
  }
  return d;
}

std::vector<std::size_t> NotebookDiff::flagged_cells() const {
  std::vector<std::size_t> out;
  for (const auto& c : cells) {
    if (c.verdict == Verdict::Different || c.verdict == Verdict::ReproducedMissing) out.push_back(c.index);
  }
  return out;
}

NotebookDiff diff_notebook(const nb::Notebook& original, const run::NotebookRunRecord& record) {
  NotebookDiff d;
  using K = run::TerminalStatus::Kind;
  switch (record.terminal_status.kind) {
    case K::HaltedOnError: d.reason = "execution halted"; return d;
    case K::TimedOut: d.reason = "execution timed out"; return d;
    case K::NotExecuted: d.reason = "not executed: " + record.terminal_status.reason; return d;
    case K::Completed: break;
  }
  std::map<std::size_t, const run::CellRecord*> by_index;
  for (const auto& c : record.cell_records) by_index[c.index] = &c;
  bool same = true;
  for (const auto& cell : original.cells) {
    if (cell.kind != nb::CellKind::Code) continue;
    auto it = by_index.find(cell.index);
    if (it == by_index.end()) {
      d.cells.push_back({cell.index, Verdict::ReproducedMissing, {}});
      same = false;
      continue;
    }
    auto cd = diff_cell(cell.outputs, it->second->result.outputs, cell.index);
    same = same && (cd.verdict == Verdict::Same || cd.verdict == Verdict::OriginalEmpty);
    d.cells.push_back(std::move(cd));
  }
  d.overall = same ? NotebookDiff::Overall::SameResults : NotebookDiff::Overall::DifferentResults;
  return d;
}

}  // namespace repro_lens::diff
