#include "repro_lens/repo_ingest.hpp"

#include "repro_lens/util/digest.hpp"
#include "repro_lens/util/process.hpp"

#include <httplib.h>

#include <cctype>
#include <ctime>
#include <fstream>

namespace repro_lens::ingest {

namespace fs = std::filesystem;

namespace {

struct ApiBase {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

ApiBase split_base(const std::string& base) {
  auto scheme_end = base.find("://");
  auto path_start = base.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) return {base, ""};
  std::string prefix = base.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base.substr(0, path_start), prefix};
}

bool is_full_hash(const std::string& s) {
  if (s.size() != 40 && s.size() != 64) return false;
  for (char c : s) {
    if (!std::isxdigit(static_cast<unsigned char>(c)) || std::isupper(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  return true;
}

std::string encode_ref(const std::string& ref) {
  std::string out;
  std::size_t start = 0;
  while (true) {
    auto slash = ref.find('/', start);
    out += util::url_encode(ref.substr(start, slash == std::string::npos ? slash : slash - start));
    if (slash == std::string::npos) break;
    out += '/';
    start = slash + 1;
  }
  return out;
}

class ApiClient {
 public:
  explicit ApiClient(const HostingConfig& config)
      : base_(split_base(config.api_base)), client_(base_.origin) {
    client_.set_follow_location(true);
    client_.set_connection_timeout(config.timeout);
    client_.set_read_timeout(config.timeout);
    headers_ = {{"User-Agent", "repro-lens"}, {"X-GitHub-Api-Version", "2022-11-28"}};
    if (config.token) headers_.emplace("Authorization", "Bearer " + *config.token);
  }

  httplib::Result get(const std::string& path, const std::string& accept) {
    auto headers = headers_;
    headers.emplace("Accept", accept);
    return client_.Get(base_.prefix + path, headers);
  }

  /// Streams a 200 body into `out`; returns the final status.
  int download(const std::string& path, const fs::path& out) {
    std::ofstream file(out, std::ios::binary | std::ios::trunc);
    if (!file) throw FetchError(FetchErrorKind::NetworkFailure, "cannot write " + out.string());
    int status = 0;
    auto headers = headers_;
    headers.emplace("Accept", "application/vnd.github+json");
    auto res = client_.Get(
        base_.prefix + path, headers,
        [&](const httplib::Response& r) {
          status = r.status;
          return true;
        },
        [&](const char* data, std::size_t len) {
          if (status == 200) file.write(data, static_cast<std::streamsize>(len));
          return static_cast<bool>(file);
        });
    if (!res) {
      throw FetchError(FetchErrorKind::NetworkFailure,
                       "archive download failed: " + httplib::to_string(res.error()));
    }
    return res->status;
  }

 private:
  ApiBase base_;
  httplib::Client client_;
  httplib::Headers headers_;
};

[[noreturn]] void raise_for(const httplib::Result& res, const std::string& what,
                            FetchErrorKind not_found_kind) {
  if (!res) {
    throw FetchError(FetchErrorKind::NetworkFailure,
                     what + ": " + httplib::to_string(res.error()));
  }
  int status = res->status;
  if (status == 404 || (status == 422 && not_found_kind == FetchErrorKind::RefNotFound)) {
    throw FetchError(not_found_kind, what + ": not found (HTTP " + std::to_string(status) + ")");
  }
  bool exhausted = res->get_header_value("X-RateLimit-Remaining") == "0";
  if (status == 429 || (status == 403 && (exhausted || res->has_header("Retry-After")))) {
    long retry = 60;
    if (res->has_header("Retry-After")) {
      retry = std::strtol(res->get_header_value("Retry-After").c_str(), nullptr, 10);
    } else if (res->has_header("X-RateLimit-Reset")) {
      long reset = std::strtol(res->get_header_value("X-RateLimit-Reset").c_str(), nullptr, 10);
      retry = std::max(0L, reset - static_cast<long>(std::time(nullptr)));
    }
    throw FetchError(FetchErrorKind::RateLimited, what + ": rate limited", retry);
  }
  throw FetchError(FetchErrorKind::NetworkFailure,
                   what + ": unexpected HTTP " + std::to_string(status));
}

void reset_dir(const fs::path& dir) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir);
}

void extract_archive(const fs::path& archive, const fs::path& dest, bool gzip, int strip) {
  std::vector<std::string> argv = {"tar", gzip ? "-xzf" : "-xf", archive.string(), "-C",
                                   dest.string(), "--no-same-owner"};
  if (strip > 0) argv.push_back("--strip-components=" + std::to_string(strip));
  auto r = util::run_command(argv);
  if (r.exit_code != 0) {
    throw FetchError(FetchErrorKind::NetworkFailure, "archive extraction failed: " + r.output);
  }
}

RepositorySnapshot fetch_local(const RepoUrl& url, const std::optional<std::string>& ref,
                               const fs::path& job_dir) {
  const fs::path& src = url.local_path;
  if (!fs::is_directory(src)) {
    throw FetchError(FetchErrorKind::RepoNotFound, "no such directory: " + src.string());
  }
  fs::path dest = job_dir / "repo";
  reset_dir(dest);

  bool is_git = fs::exists(src / ".git") && !util::find_executable("git").empty();
  if (is_git) {
    std::string spec = (ref ? *ref : std::string("HEAD")) + "^{commit}";
    auto rev = util::run_command({"git", "-C", src.string(), "rev-parse", "--verify", "--quiet", spec});
    std::string sha = rev.output.substr(0, rev.output.find_first_of("\r\n"));
    if (rev.exit_code != 0 || !is_full_hash(sha)) {
      throw FetchError(FetchErrorKind::RefNotFound, "cannot resolve ref " + spec);
    }
    fs::path tarball = job_dir / "archive.tar";
    auto ar = util::run_command(
        {"git", "-C", src.string(), "archive", "--format=tar", "-o", tarball.string(), sha});
    if (ar.exit_code != 0) {
      throw FetchError(FetchErrorKind::NetworkFailure, "git archive failed: " + ar.output);
    }
    extract_archive(tarball, dest, false, 0);
    return snapshot_from_directory(dest, url.canonical(), sha);
  }

  if (ref) {
    throw FetchError(FetchErrorKind::RefNotFound,
                     "ref '" + *ref + "' requested but " + src.string() + " is not a git checkout");
  }
  for (const auto& entry : fs::directory_iterator(src)) {
    if (entry.path().filename() == ".git") continue;
    fs::copy(entry.path(), dest / entry.path().filename(),
             fs::copy_options::recursive | fs::copy_options::copy_symlinks);
  }
  return snapshot_from_directory(dest, url.canonical(), tree_digest(dest));
}

}  // namespace

RepositorySnapshot fetch_repository(const std::string& url, const std::optional<std::string>& ref,
                                    const fs::path& job_dir, const HostingConfig& config) {
  auto parsed = parse_repo_url(url);
  if (!parsed) throw FetchError(FetchErrorKind::UnsupportedHost, "not a repository URL: " + url);
  fs::create_directories(job_dir);
  if (parsed->is_local()) return fetch_local(*parsed, ref, job_dir);
  if (parsed->host != config.web_host) {
    throw FetchError(FetchErrorKind::UnsupportedHost, "unsupported host " + parsed->host);
  }

  ApiClient api(config);
  const std::string repo_path = "/repos/" + parsed->owner + "/" + parsed->name;

  std::string target = ref.value_or("");
  if (target.empty()) {
    auto res = api.get(repo_path, "application/vnd.github+json");
    if (!res || res->status != 200) raise_for(res, "repository lookup", FetchErrorKind::RepoNotFound);
    try {
      target = nlohmann::json::parse(res->body).at("default_branch").get<std::string>();
    } catch (const std::exception& e) {
      throw FetchError(FetchErrorKind::NetworkFailure,
                       std::string("malformed repository metadata: ") + e.what());
    }
  }

  auto commit = api.get(repo_path + "/commits/" + encode_ref(target), "application/vnd.github.sha");
  if (!commit || commit->status != 200) {
    // Distinguish a missing repository from a missing ref.
    if (commit && (commit->status == 404 || commit->status == 422)) {
      auto repo = api.get(repo_path, "application/vnd.github+json");
      if (!repo || repo->status != 200) raise_for(repo, "repository lookup", FetchErrorKind::RepoNotFound);
    }
    raise_for(commit, "ref resolution", FetchErrorKind::RefNotFound);
  }
  std::string sha = commit->body;
  if (!sha.empty() && sha.front() == '{') {
    try {
      sha = nlohmann::json::parse(sha).at("sha").get<std::string>();
    } catch (const std::exception&) {
      sha.clear();
    }
  }
  while (!sha.empty() && std::isspace(static_cast<unsigned char>(sha.back()))) sha.pop_back();
  if (!is_full_hash(sha)) {
    throw FetchError(FetchErrorKind::NetworkFailure, "ref resolved to a malformed hash");
  }

  fs::path tarball = job_dir / "archive.tar.gz";
  int status = api.download(repo_path + "/tarball/" + sha, tarball);
  if (status != 200) {
    throw FetchError(status == 404 ? FetchErrorKind::RefNotFound : FetchErrorKind::NetworkFailure,
                     "archive download: HTTP " + std::to_string(status));
  }
  fs::path dest = job_dir / "repo";
  reset_dir(dest);
  extract_archive(tarball, dest, true, 1);
  return snapshot_from_directory(dest, parsed->canonical(), sha);
}

}  // namespace repro_lens::ingest
