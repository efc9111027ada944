#include "repro_lens/notebook.hpp"

namespace repro_lens::nb {

namespace {

[[noreturn]] void schema(const std::string& msg) {
  throw ParseError(ParseErrorKind::SchemaViolation, msg);
}

// Multi-line strings may be stored as a list of lines; join them.
std::string joined_text(const Json& j, const char* what) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_array()) {
    std::string out;
    for (const auto& part : j) {
      if (!part.is_string()) schema(std::string(what) + ": list entries must be strings");
      out += part.get_ref<const std::string&>();
    }
    return out;
  }
  schema(std::string(what) + ": expected string or list of strings");
}

Json split_lines(const std::string& text) {
  Json lines = Json::array();
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl + 1 - start));
    start = nl + 1;
  }
  return lines;
}

Json object_or_empty(const Json& parent, const char* key, const char* what) {
  auto it = parent.find(key);
  if (it == parent.end() || it->is_null()) return Json::object();
  if (!it->is_object()) schema(std::string(what) + "." + key + " must be an object");
  return *it;
}

Json without(const Json& obj, std::initializer_list<const char*> keys) {
  Json out = obj;
  for (const char* k : keys) out.erase(k);
  return out;
}

std::optional<std::int64_t> execution_count_from(const Json& j, const char* what) {
  auto it = j.find("execution_count");
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) schema(std::string(what) + ": execution_count must be an integer");
  auto v = it->get<std::int64_t>();
  if (v < 1) schema(std::string(what) + ": execution_count must be >= 1");
  return v;
}

MimeBundle mime_bundle_from(const Json& j, const char* what) {
  auto it = j.find("data");
  if (it == j.end() || !it->is_object()) schema(std::string(what) + ": data must be an object");
  if (it->empty()) schema(std::string(what) + ": data must have at least one entry");
  MimeBundle bundle;
  for (const auto& [mime, payload] : it->items()) {
    if (payload.is_array()) {
      bool all_strings = true;
      for (const auto& p : payload) all_strings &= p.is_string();
      bundle[mime] = all_strings ? Json(joined_text(payload, what)) : payload;
    } else {
      bundle[mime] = payload;
    }
  }
  return bundle;
}

Json mime_bundle_to_json(const MimeBundle& bundle) {
  Json out = Json::object();
  for (const auto& [mime, payload] : bundle) out[mime] = payload;
  return out;
}

Cell cell_from_json(const Json& j, std::size_t index) {
  if (!j.is_object()) schema("cell " + std::to_string(index) + " is not an object");
  auto type_it = j.find("cell_type");
  if (type_it == j.end() || !type_it->is_string()) {
    schema("cell " + std::to_string(index) + " missing cell_type");
  }
  auto src_it = j.find("source");
  if (src_it == j.end()) schema("cell " + std::to_string(index) + " missing source");

  Cell cell;
  cell.index = index;
  const auto& type = type_it->get_ref<const std::string&>();
  if (type == "code") {
    cell.kind = CellKind::Code;
  } else if (type == "markdown") {
    cell.kind = CellKind::Markdown;
  } else if (type == "raw") {
    cell.kind = CellKind::Raw;
  } else {
    schema("cell " + std::to_string(index) + " has unknown cell_type '" + type + "'");
  }
  cell.source = joined_text(*src_it, "cell source");
  cell.metadata = object_or_empty(j, "metadata", "cell");
  if (auto id = j.find("id"); id != j.end()) {
    if (!id->is_string()) schema("cell id must be a string");
    cell.id = id->get<std::string>();
  }

  if (cell.kind == CellKind::Code) {
    cell.execution_count = execution_count_from(j, "code cell");
    auto outs = j.find("outputs");
    if (outs == j.end() || !outs->is_array()) {
      schema("code cell " + std::to_string(index) + " missing outputs list");
    }
    for (const auto& o : *outs) cell.outputs.push_back(output_from_json(o));
  } else {
    if (auto outs = j.find("outputs"); outs != j.end() && !(outs->is_array() && outs->empty())) {
      schema("non-code cell " + std::to_string(index) + " carries outputs");
    }
    if (auto ec = j.find("execution_count"); ec != j.end() && !ec->is_null()) {
      schema("non-code cell " + std::to_string(index) + " carries execution_count");
    }
  }
  cell.extra = without(j, {"cell_type", "source", "metadata", "id", "outputs", "execution_count"});
  // An empty outputs list on a markdown cell is tolerated but not kept.
  return cell;
}

Json cell_to_json(const Cell& cell) {
  Json j = cell.extra;
  j["cell_type"] = std::string(to_string(cell.kind));
  j["source"] = split_lines(cell.source);
  j["metadata"] = cell.metadata;
  if (cell.id) j["id"] = *cell.id;
  if (cell.kind == CellKind::Code) {
    j["execution_count"] = cell.execution_count ? Json(*cell.execution_count) : Json(nullptr);
    Json outs = Json::array();
    for (const auto& o : cell.outputs) outs.push_back(output_to_json(o));
    j["outputs"] = std::move(outs);
  }
  return j;
}

}  // namespace

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::Code: return "code";
    case CellKind::Markdown: return "markdown";
    case CellKind::Raw: return "raw";
  }
  return "code";
}

std::string_view to_string(StreamName name) {
  return name == StreamName::Stdout ? "stdout" : "stderr";
}

std::string_view to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::MalformedJson: return "MalformedJson";
    case ParseErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ParseErrorKind::SchemaViolation: return "SchemaViolation";
  }
  return "SchemaViolation";
}

Output output_from_json(const Json& j) {
  if (!j.is_object()) schema("output is not an object");
  auto type_it = j.find("output_type");
  if (type_it == j.end() || !type_it->is_string()) schema("output missing output_type");
  const auto& type = type_it->get_ref<const std::string&>();

  if (type == "stream") {
    StreamOutput s;
    auto name = j.find("name");
    if (name == j.end() || !name->is_string()) schema("stream output missing name");
    if (*name == "stdout") {
      s.name = StreamName::Stdout;
    } else if (*name == "stderr") {
      s.name = StreamName::Stderr;
    } else {
      schema("stream name must be stdout or stderr");
    }
    auto text = j.find("text");
    if (text == j.end()) schema("stream output missing text");
    s.text = joined_text(*text, "stream text");
    s.extra = without(j, {"output_type", "name", "text"});
    return s;
  }
  if (type == "execute_result") {
    ExecuteResultOutput r;
    r.data = mime_bundle_from(j, "execute_result");
    r.execution_count = execution_count_from(j, "execute_result");
    r.metadata = object_or_empty(j, "metadata", "execute_result");
    r.extra = without(j, {"output_type", "data", "execution_count", "metadata"});
    return r;
  }
  if (type == "display_data") {
    DisplayDataOutput d;
    d.data = mime_bundle_from(j, "display_data");
    d.metadata = object_or_empty(j, "metadata", "display_data");
    d.extra = without(j, {"output_type", "data", "metadata"});
    return d;
  }
  if (type == "error") {
    ErrorOutput e;
    auto ename = j.find("ename");
    if (ename == j.end() || !ename->is_string() || ename->get_ref<const std::string&>().empty()) {
      schema("error output needs a non-empty ename");
    }
    e.ename = ename->get<std::string>();
    if (auto ev = j.find("evalue"); ev != j.end()) {
      if (!ev->is_string()) schema("error evalue must be a string");
      e.evalue = ev->get<std::string>();
    }
    if (auto tb = j.find("traceback"); tb != j.end()) {
      if (!tb->is_array()) schema("error traceback must be a list");
      for (const auto& line : *tb) {
        if (!line.is_string()) schema("traceback entries must be strings");
        e.traceback.push_back(line.get<std::string>());
      }
    }
    e.extra = without(j, {"output_type", "ename", "evalue", "traceback"});
    return e;
  }
  schema("unknown output_type '" + type + "'");
}

Json output_to_json(const Output& out) {
  return std::visit(
      [](const auto& o) -> Json {
        using T = std::decay_t<decltype(o)>;
        Json j = o.extra;
        if constexpr (std::is_same_v<T, StreamOutput>) {
          j["output_type"] = "stream";
          j["name"] = std::string(to_string(o.name));
          j["text"] = split_lines(o.text);
        } else if constexpr (std::is_same_v<T, ExecuteResultOutput>) {
          j["output_type"] = "execute_result";
          j["data"] = mime_bundle_to_json(o.data);
          j["execution_count"] = o.execution_count ? Json(*o.execution_count) : Json(nullptr);
          j["metadata"] = o.metadata;
        } else if constexpr (std::is_same_v<T, DisplayDataOutput>) {
          j["output_type"] = "display_data";
          j["data"] = mime_bundle_to_json(o.data);
          j["metadata"] = o.metadata;
        } else {
          j["output_type"] = "error";
          j["ename"] = o.ename;
          j["evalue"] = o.evalue;
          j["traceback"] = o.traceback;
        }
        return j;
      },
      out);
}

Notebook parse_notebook(std::string_view raw, std::string path) {
  Json doc;
  try {
    doc = Json::parse(raw.begin(), raw.end());
  } catch (const Json::parse_error& e) {
    throw ParseError(ParseErrorKind::MalformedJson, e.what());
  }
  if (!doc.is_object()) schema("notebook document is not a JSON object");

  auto major = doc.find("nbformat");
  if (major == doc.end() || !major->is_number_integer()) {
    throw ParseError(ParseErrorKind::UnsupportedFormat, "missing nbformat");
  }
  if (major->get<int>() != 4) {
    throw ParseError(ParseErrorKind::UnsupportedFormat,
                     "unsupported nbformat " + std::to_string(major->get<int>()));
  }

  Notebook nb;
  nb.source_path = std::move(path);
  nb.format_major = 4;
  if (auto minor = doc.find("nbformat_minor"); minor != doc.end()) {
    if (!minor->is_number_integer()) schema("nbformat_minor must be an integer");
    nb.format_minor = minor->get<int>();
  } else {
    nb.format_minor = 0;
  }

  Json metadata = object_or_empty(doc, "metadata", "notebook");
  if (auto ks = metadata.find("kernelspec"); ks != metadata.end() && !ks->is_null()) {
    if (!ks->is_object()) schema("kernelspec must be an object");
    auto name = ks->find("name");
    if (name == ks->end() || !name->is_string() || name->get_ref<const std::string&>().empty()) {
      schema("kernelspec.name must be a non-empty string");
    }
    KernelSpecInfo spec;
    spec.name = name->get<std::string>();
    if (auto dn = ks->find("display_name"); dn != ks->end() && dn->is_string()) {
      spec.display_name = dn->get<std::string>();
    }
    spec.extra = without(*ks, {"name"});
    if (spec.display_name) spec.extra.erase("display_name");
    nb.kernel_spec = std::move(spec);
  }
  if (auto li = metadata.find("language_info"); li != metadata.end() && !li->is_null()) {
    if (!li->is_object()) schema("language_info must be an object");
    if (auto n = li->find("name"); n != li->end() && n->is_string()) {
      nb.language_name = n->get<std::string>();
    }
    if (auto v = li->find("version"); v != li->end() && v->is_string()) {
      nb.language_version = v->get<std::string>();
    }
    nb.language_info_extra = *li;
    if (nb.language_name) nb.language_info_extra.erase("name");
    if (nb.language_version) nb.language_info_extra.erase("version");
  }
  nb.metadata_extra = metadata;
  if (nb.kernel_spec) nb.metadata_extra.erase("kernelspec");
  if (metadata.contains("language_info") && metadata["language_info"].is_object()) {
    nb.metadata_extra.erase("language_info");
  }

  auto cells = doc.find("cells");
  if (cells == doc.end() || !cells->is_array()) schema("cells must be a list");
  nb.cells.reserve(cells->size());
  for (std::size_t i = 0; i < cells->size(); ++i) {
    nb.cells.push_back(cell_from_json((*cells)[i], i));
  }
  nb.document_extra = without(doc, {"nbformat", "nbformat_minor", "metadata", "cells"});
  return nb;
}

ValidityReport validate(const Notebook& nb) noexcept {
  ValidityReport r;
  r.has_valid_format =
      nb.format_major == 4 && nb.format_minor >= 0 && nb.format_minor <= kNewestKnownMinor;
  r.has_kernel_spec = nb.kernel_spec.has_value() && !nb.kernel_spec->name.empty();
  r.has_language_version = nb.language_version.has_value() && !nb.language_version->empty();
  r.overall_valid = r.has_valid_format && r.has_kernel_spec && r.has_language_version;
  return r;
}

std::string serialize_notebook(const Notebook& nb) {
  Json metadata = nb.metadata_extra.is_object() ? nb.metadata_extra : Json::object();
  if (nb.kernel_spec) {
    Json ks = nb.kernel_spec->extra.is_object() ? nb.kernel_spec->extra : Json::object();
    ks["name"] = nb.kernel_spec->name;
    if (nb.kernel_spec->display_name) ks["display_name"] = *nb.kernel_spec->display_name;
    metadata["kernelspec"] = std::move(ks);
  }
  bool has_language_info = nb.language_name || nb.language_version ||
                           (nb.language_info_extra.is_object() && !nb.language_info_extra.empty());
  if (has_language_info) {
    Json li = nb.language_info_extra.is_object() ? nb.language_info_extra : Json::object();
    if (nb.language_name) li["name"] = *nb.language_name;
    if (nb.language_version) li["version"] = *nb.language_version;
    metadata["language_info"] = std::move(li);
  }

  Json doc = nb.document_extra.is_object() ? nb.document_extra : Json::object();
  doc["nbformat"] = nb.format_major;
  doc["nbformat_minor"] = nb.format_minor;
  doc["metadata"] = std::move(metadata);
  Json cells = Json::array();
  for (const auto& c : nb.cells) cells.push_back(cell_to_json(c));
  doc["cells"] = std::move(cells);
  return doc.dump(1, ' ', false, Json::error_handler_t::replace) + "\n";
}

}  // namespace repro_lens::nb
