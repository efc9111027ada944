#pragma once

#include "repro_lens/notebook.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace repro_lens::ingest {

/// Declaration order is precedence order (most specific first).
enum class ManifestKind { EnvironmentYml, RequirementsTxt, Pipfile, SetupPy };

std::string_view to_string(ManifestKind kind);
std::optional<ManifestKind> manifest_kind_from_name(std::string_view file_name);
std::optional<ManifestKind> manifest_kind_from_string(std::string_view s);

struct ManifestRef {
  ManifestKind kind = ManifestKind::RequirementsTxt;
  std::string path;  // repo-relative, '/'-separated
  bool operator==(const ManifestRef&) const = default;
};

struct NotebookEntry {
  std::string path;
  std::uintmax_t size = 0;
  bool operator==(const NotebookEntry&) const = default;
};

struct RepositorySnapshot {
  std::string url;
  std::string ref;  // resolved commit hash
  std::filesystem::path root;
  std::vector<NotebookEntry> notebook_entries;
  std::vector<ManifestRef> manifest_entries;
};

/// host/owner/name, or a local directory for file:// URLs.
struct RepoUrl {
  std::string host;
  std::string owner;
  std::string name;
  std::filesystem::path local_path;

  bool is_local() const { return !local_path.empty(); }
  /// `https://host/owner/name` or `file:///abs/path`.
  std::string canonical() const;
};

/// Accepts `https://host/owner/name[.git][/]`, `http://...`, `host/owner/name`,
/// and `file:///absolute/dir`. Syntax only; nothing is contacted.
std::optional<RepoUrl> parse_repo_url(std::string_view url);

enum class FetchErrorKind { RepoNotFound, RateLimited, NetworkFailure, RefNotFound, UnsupportedHost };

std::string_view to_string(FetchErrorKind kind);

class FetchError : public std::runtime_error {
 public:
  FetchError(FetchErrorKind kind, const std::string& message,
             std::optional<long> retry_after_seconds = std::nullopt)
      : std::runtime_error(message), kind_(kind), retry_after_(retry_after_seconds) {}
  FetchErrorKind kind() const { return kind_; }
  std::optional<long> retry_after_seconds() const { return retry_after_; }

 private:
  FetchErrorKind kind_;
  std::optional<long> retry_after_;
};

struct HostingConfig {
  /// REST v3 API root; the archive and ref endpoints hang off it.
  std::string api_base = "https://api.github.com";
  /// Hostname whose repository URLs map onto api_base.
  std::string web_host = "github.com";
  std::optional<std::string> token;
  std::chrono::seconds timeout{60};

  /// Defaults plus `REPRO_LENS_TOKEN`.
  static HostingConfig from_env();
};

/// Materializes the repository under `<job_dir>/repo` and returns its snapshot.
/// Read-only against the remote. Throws FetchError.
RepositorySnapshot fetch_repository(const std::string& url, const std::optional<std::string>& ref,
                                    const std::filesystem::path& job_dir,
                                    const HostingConfig& config = HostingConfig::from_env());

/// Builds a snapshot for an already-materialized tree.
RepositorySnapshot snapshot_from_directory(const std::filesystem::path& root, std::string url,
                                           std::string ref);

struct ScanFailure {
  nb::ParseErrorKind kind = nb::ParseErrorKind::MalformedJson;
  std::string message;
  bool operator==(const ScanFailure&) const = default;
};

struct ScannedNotebook {
  std::string path;
  std::variant<nb::Notebook, ScanFailure> result;

  bool ok() const { return std::holds_alternative<nb::Notebook>(result); }
  const nb::Notebook& notebook() const { return std::get<nb::Notebook>(result); }
  const ScanFailure& failure() const { return std::get<ScanFailure>(result); }
};

/// Notebook files under root, lexicographic by path. Hidden directories
/// (including `.ipynb_checkpoints`) are skipped.
std::vector<NotebookEntry> list_notebook_files(const std::filesystem::path& root);

/// One entry per notebook file, in lexicographic path order. Never throws for
/// per-file problems.
std::vector<ScannedNotebook> scan_notebooks(const RepositorySnapshot& snapshot);

/// Manifests ordered by kind precedence, then shallower depth, then path.
std::vector<ManifestRef> discover_environment(const RepositorySnapshot& snapshot);

/// Stable digest of a directory tree (paths + contents), used as the ref of
/// local non-git sources.
std::string tree_digest(const std::filesystem::path& root);

}  // namespace repro_lens::ingest
