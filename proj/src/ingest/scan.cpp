#include "repro_lens/repo_ingest.hpp"

#include "repro_lens/util/digest.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace repro_lens::ingest {

namespace fs = std::filesystem;

namespace {

bool valid_segment(std::string_view s) {
  if (s.empty() || s == "." || s == "..") return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
  });
}

bool valid_host(std::string_view s) {
  if (s.empty() || s.find('.') == std::string_view::npos) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '.' || c == ':';
  });
}

bool hidden(const fs::path& name) {
  auto s = name.string();
  return !s.empty() && s[0] == '.';
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Walks `root` skipping hidden directories; calls fn(relative path, entry).
template <typename Fn>
void walk_visible(const fs::path& root, Fn&& fn) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) return;
  fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
  for (; !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
    const auto& entry = *it;
    if (entry.is_directory(ec) && !entry.is_symlink(ec)) {
      if (hidden(entry.path().filename())) it.disable_recursion_pending();
      continue;
    }
    if (!entry.is_regular_file(ec)) continue;
    fn(entry.path().lexically_relative(root).generic_string(), entry);
  }
}

}  // namespace

std::string_view to_string(ManifestKind kind) {
  switch (kind) {
    case ManifestKind::EnvironmentYml: return "EnvironmentYml";
    case ManifestKind::RequirementsTxt: return "RequirementsTxt";
    case ManifestKind::Pipfile: return "Pipfile";
    case ManifestKind::SetupPy: return "SetupPy";
  }
  return "RequirementsTxt";
}

std::optional<ManifestKind> manifest_kind_from_name(std::string_view file_name) {
  if (file_name == "environment.yml") return ManifestKind::EnvironmentYml;
  if (file_name == "requirements.txt") return ManifestKind::RequirementsTxt;
  if (file_name == "Pipfile") return ManifestKind::Pipfile;
  if (file_name == "setup.py") return ManifestKind::SetupPy;
  return std::nullopt;
}

std::optional<ManifestKind> manifest_kind_from_string(std::string_view s) {
  for (auto k : {ManifestKind::EnvironmentYml, ManifestKind::RequirementsTxt,
                 ManifestKind::Pipfile, ManifestKind::SetupPy}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

std::string_view to_string(FetchErrorKind kind) {
  switch (kind) {
    case FetchErrorKind::RepoNotFound: return "RepoNotFound";
    case FetchErrorKind::RateLimited: return "RateLimited";
    case FetchErrorKind::NetworkFailure: return "NetworkFailure";
    case FetchErrorKind::RefNotFound: return "RefNotFound";
    case FetchErrorKind::UnsupportedHost: return "UnsupportedHost";
  }
  return "NetworkFailure";
}

std::string RepoUrl::canonical() const {
  if (is_local()) return "file://" + local_path.generic_string();
  return "https://" + host + "/" + owner + "/" + name;
}

std::optional<RepoUrl> parse_repo_url(std::string_view url) {
  std::string s(url);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(0, 1);
  if (s.empty()) return std::nullopt;

  if (s.rfind("file://", 0) == 0) {
    fs::path p(s.substr(7));
    if (!p.is_absolute()) return std::nullopt;
    RepoUrl r;
    r.local_path = p.lexically_normal();
    if (!r.local_path.has_filename() && r.local_path.has_relative_path()) {
      r.local_path = r.local_path.parent_path();
    }
    return r;
  }

  if (s.rfind("https://", 0) == 0) {
    s.erase(0, 8);
  } else if (s.rfind("http://", 0) == 0) {
    s.erase(0, 7);
  } else if (s.find("://") != std::string::npos) {
    return std::nullopt;
  }
  while (!s.empty() && s.back() == '/') s.pop_back();

  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, '/')) parts.push_back(part);
  if (parts.size() != 3) return std::nullopt;
  RepoUrl r;
  r.host = parts[0];
  r.owner = parts[1];
  r.name = parts[2];
  if (r.name.size() > 4 && r.name.compare(r.name.size() - 4, 4, ".git") == 0) {
    r.name.resize(r.name.size() - 4);
  }
  std::transform(r.host.begin(), r.host.end(), r.host.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (!valid_host(r.host) || !valid_segment(r.owner) || !valid_segment(r.name)) {
    return std::nullopt;
  }
  return r;
}

HostingConfig HostingConfig::from_env() {
  HostingConfig c;
  if (const char* t = std::getenv("REPRO_LENS_TOKEN"); t && *t) c.token = std::string(t);
  return c;
}

std::vector<NotebookEntry> list_notebook_files(const fs::path& root) {
  std::vector<NotebookEntry> out;
  walk_visible(root, [&](const std::string& rel, const fs::directory_entry& e) {
    if (e.path().extension() == ".ipynb") {
      std::error_code ec;
      out.push_back({rel, e.file_size(ec)});
    }
  });
  std::sort(out.begin(), out.end(),
            [](const NotebookEntry& a, const NotebookEntry& b) { return a.path < b.path; });
  return out;
}

namespace {

std::vector<ManifestRef> find_manifests(const fs::path& root) {
  std::vector<ManifestRef> out;
  walk_visible(root, [&](const std::string& rel, const fs::directory_entry& e) {
    if (auto kind = manifest_kind_from_name(e.path().filename().string())) {
      out.push_back({*kind, rel});
    }
  });
  auto depth = [](const std::string& p) { return std::count(p.begin(), p.end(), '/'); };
  std::sort(out.begin(), out.end(), [&](const ManifestRef& a, const ManifestRef& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    if (depth(a.path) != depth(b.path)) return depth(a.path) < depth(b.path);
    return a.path < b.path;
  });
  return out;
}

}  // namespace

RepositorySnapshot snapshot_from_directory(const fs::path& root, std::string url, std::string ref) {
  RepositorySnapshot snap;
  snap.url = std::move(url);
  snap.ref = std::move(ref);
  snap.root = root;
  snap.notebook_entries = list_notebook_files(root);
  snap.manifest_entries = find_manifests(root);
  return snap;
}

std::vector<ScannedNotebook> scan_notebooks(const RepositorySnapshot& snapshot) {
  std::vector<ScannedNotebook> out;
  for (const auto& entry : list_notebook_files(snapshot.root)) {
    ScannedNotebook scanned{entry.path, ScanFailure{}};
    try {
      auto raw = read_file(snapshot.root / entry.path);
      scanned.result = nb::parse_notebook(raw, entry.path);
    } catch (const nb::ParseError& e) {
      scanned.result = ScanFailure{e.kind(), e.what()};
    } catch (const std::exception& e) {
      scanned.result = ScanFailure{nb::ParseErrorKind::MalformedJson, e.what()};
    }
    out.push_back(std::move(scanned));
  }
  return out;
}

std::vector<ManifestRef> discover_environment(const RepositorySnapshot& snapshot) {
  return find_manifests(snapshot.root);
}

std::string tree_digest(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  walk_visible(root, [&](const std::string& rel, const fs::directory_entry& e) {
    files.emplace_back(rel, util::sha256_hex(read_file(e.path())));
  });
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& [path, digest] : files) {
    acc += path;
    acc.push_back('\0');
    acc += digest;
    acc.push_back('\n');
  }
  return util::sha256_hex(acc);
}

}  // namespace repro_lens::ingest
