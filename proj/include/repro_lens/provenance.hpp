#pragma once

#include "repro_lens/notebook.hpp"
#include "repro_lens/run_orchestrator.hpp"

#include <set>
#include <string>
#include <utility>
#include <vector>

namespace repro_lens::prov {

namespace ns {
inline constexpr const char* rdf = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
inline constexpr const char* rdfs = "http://www.w3.org/2000/01/rdf-schema#";
inline constexpr const char* xsd = "http://www.w3.org/2001/XMLSchema#";
inline constexpr const char* prov = "http://www.w3.org/ns/prov#";
inline constexpr const char* rl = "urn:repro-lens:vocab:";
}  // namespace ns

struct Term {
  enum class Kind { Iri, Literal };
  Kind kind = Kind::Iri;
  std::string value;
  /// Literal datatype IRI; empty means xsd:string.
  std::string datatype;
  std::string lang;

  static Term iri(std::string v) { return {Kind::Iri, std::move(v), {}, {}}; }
  static Term literal(std::string v) { return {Kind::Literal, std::move(v), {}, {}}; }
  static Term typed(std::string v, std::string dt) { return {Kind::Literal, std::move(v), std::move(dt), {}}; }
  static Term integer(std::int64_t v);
  static Term date_time(util::Timestamp t);

  auto operator<=>(const Term&) const = default;
  bool operator==(const Term&) const = default;
};

struct Triple {
  Term subject;
  Term predicate;
  Term object;
  auto operator<=>(const Triple&) const = default;
  bool operator==(const Triple&) const = default;
};

struct Graph {
  std::set<Triple> triples;
  /// prefix -> namespace IRI, used only for serialization.
  std::vector<std::pair<std::string, std::string>> prefixes = {
      {"rdf", ns::rdf}, {"rdfs", ns::rdfs}, {"xsd", ns::xsd}, {"prov", ns::prov}, {"rl", ns::rl}};

  void add(const Term& s, const std::string& p, const Term& o) { triples.insert({s, Term::iri(p), o}); }
  void merge(const Graph& other) { triples.insert(other.triples.begin(), other.triples.end()); }
  std::size_t size() const { return triples.size(); }
};

/// `urn:repro-lens:<ref>:<path>[:<cell>][:run:<run-id>]`, components percent-encoded.
std::string notebook_iri(const std::string& ref, const std::string& path);
std::string step_iri(const std::string& ref, const std::string& path, std::size_t cell);
std::string run_iri(const std::string& ref, const std::string& path, const std::string& run_id);
std::string activity_iri(const std::string& ref, const std::string& path, std::size_t cell,
                         const std::string& run_id);

/// Outputs whose canonical form is larger than this become digest literals.
inline constexpr std::size_t kInlineOutputLimit = 64 * 1024;

/// The notebook as a plan: one plan node, one step per cell.
Graph export_prospective(const nb::Notebook& notebook, const std::string& ref);
/// What ran: one run node, one cell-execution activity per executed cell.
Graph export_retrospective(const run::NotebookRunRecord& record, const std::string& ref);
/// Both graphs for one notebook row (the plan part only when it parsed).
Graph export_notebook(const run::NotebookReport& row, const std::string& ref);
/// Every notebook plus the repository node.
Graph export_repository(const run::RepoRunReport& report);

std::string serialize_turtle(const Graph& g);

}  // namespace repro_lens::prov
