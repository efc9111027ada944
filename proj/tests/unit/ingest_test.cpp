#include "fake_host.hpp"
#include "fixtures.hpp"

#include "repro_lens/repo_ingest.hpp"
#include "repro_lens/util/process.hpp"

#include <doctest.h>

using namespace repro_lens;
using ingest::FetchError;
using ingest::FetchErrorKind;
using ingest::ManifestKind;
namespace fs = std::filesystem;

namespace {

FetchErrorKind fetch_kind(const std::string& url, const std::optional<std::string>& ref, const fs::path& job,
                          const ingest::HostingConfig& cfg) {
  try {
    ingest::fetch_repository(url, ref, job, cfg);
  } catch (const FetchError& e) {
    return e.kind();
  }
  FAIL("fetch succeeded");
  return FetchErrorKind::NetworkFailure;
}

}  // namespace

TEST_CASE("repository url parsing") {
  auto u = ingest::parse_repo_url("https://GitHub.com/owner/repo.git/");
  REQUIRE(u);
  CHECK(u->host == "github.com");
  CHECK(u->owner == "owner");
  CHECK(u->name == "repo");
  CHECK(u->canonical() == "https://github.com/owner/repo");
  CHECK(ingest::parse_repo_url("github.com/a/b")->canonical() == "https://github.com/a/b");
  CHECK(ingest::parse_repo_url("http://example.org/a/b"));
  CHECK(ingest::parse_repo_url("file:///tmp/x/")->local_path == "/tmp/x");
  CHECK(ingest::parse_repo_url("file:///tmp/x/")->canonical() == "file:///tmp/x");
  CHECK_FALSE(ingest::parse_repo_url(""));
  CHECK_FALSE(ingest::parse_repo_url("not a url"));
  CHECK_FALSE(ingest::parse_repo_url("https://github.com/only-owner"));
  CHECK_FALSE(ingest::parse_repo_url("https://github.com/a/b/tree/main"));
  CHECK_FALSE(ingest::parse_repo_url("ftp://github.com/a/b"));
  CHECK_FALSE(ingest::parse_repo_url("file://relative/path"));
  CHECK_FALSE(ingest::parse_repo_url("https://github.com/../b"));
}

TEST_CASE("scanning the six-notebook fixture") {
  auto root = testkit::fixtures_dir() / "repos" / "six";
  auto snap = ingest::snapshot_from_directory(root, "file://" + root.string(), "r");
  std::vector<std::string> paths;
  for (const auto& e : snap.notebook_entries) paths.push_back(e.path);
  CHECK(paths == std::vector<std::string>{"analysis/arithmetic.ipynb", "analysis/strings.ipynb", "broken_syntax.ipynb",
                                          "clock.ipynb", "legacy_v3.ipynb", "needs_module.ipynb"});
  auto scanned = ingest::scan_notebooks(snap);
  REQUIRE(scanned.size() == 6);
  CHECK_FALSE(scanned[4].ok());
  CHECK(scanned[4].failure().kind == nb::ParseErrorKind::UnsupportedFormat);
  for (std::size_t i : {0, 1, 2, 3, 5}) CHECK(scanned[i].ok());
  REQUIRE(snap.manifest_entries.size() == 1);
  CHECK(snap.manifest_entries[0] == ingest::ManifestRef{ManifestKind::RequirementsTxt, "requirements.txt"});
}

TEST_CASE("hidden directories and checkpoints are skipped") {
  testkit::TempDir dir("scan");
  testkit::write_file(dir / "a.ipynb", testkit::notebook_json({}));
  testkit::write_file(dir / ".ipynb_checkpoints/a-checkpoint.ipynb", testkit::notebook_json({}));
  testkit::write_file(dir / ".hidden/b.ipynb", testkit::notebook_json({}));
  testkit::write_file(dir / "sub/c.ipynb", "{broken");
  testkit::write_file(dir / "notes.txt", "x");
  auto files = ingest::list_notebook_files(dir.path());
  REQUIRE(files.size() == 2);
  CHECK(files[0].path == "a.ipynb");
  CHECK(files[1].path == "sub/c.ipynb");
  auto snap = ingest::snapshot_from_directory(dir.path(), "u", "r");
  auto scanned = ingest::scan_notebooks(snap);
  CHECK(scanned[1].failure().kind == nb::ParseErrorKind::MalformedJson);
}

TEST_CASE("manifest discovery order") {
  testkit::TempDir dir("manifests");
  testkit::write_file(dir / "sub/deeper/requirements.txt", "numpy\n");
  testkit::write_file(dir / "requirements.txt", "pandas\n");
  testkit::write_file(dir / "setup.py", "from setuptools import setup\nsetup()\n");
  testkit::write_file(dir / "Pipfile", "[packages]\n");
  testkit::write_file(dir / "env/environment.yml", "dependencies: []\n");
  testkit::write_file(dir / ".venv/requirements.txt", "hidden\n");
  auto snap = ingest::snapshot_from_directory(dir.path(), "u", "r");
  auto m = ingest::discover_environment(snap);
  std::vector<std::string> paths;
  for (const auto& x : m) paths.push_back(x.path);
  CHECK(paths == std::vector<std::string>{"env/environment.yml", "requirements.txt", "sub/deeper/requirements.txt",
                                          "Pipfile", "setup.py"});
}

TEST_CASE("tree digest tracks content") {
  testkit::TempDir a("digest"), b("digest");
  for (auto* d : {&a, &b}) {
    testkit::write_file(*d / "x/y.txt", "same");
    testkit::write_file(*d / "z.ipynb", "{}");
  }
  CHECK(ingest::tree_digest(a.path()) == ingest::tree_digest(b.path()));
  testkit::write_file(b / "z.ipynb", "{ }");
  CHECK(ingest::tree_digest(a.path()) != ingest::tree_digest(b.path()));
}

TEST_CASE("local directories are copied") {
  testkit::TempDir src("src"), job("job");
  testkit::write_file(src / "n.ipynb", testkit::notebook_json({}));
  auto snap = ingest::fetch_repository("file://" + src.path().string(), std::nullopt, job.path());
  CHECK(snap.root == job / "repo");
  CHECK(snap.ref == ingest::tree_digest(src.path()));
  CHECK(snap.notebook_entries.size() == 1);
  CHECK(fetch_kind("file://" + src.path().string(), "main", job.path(), {}) == FetchErrorKind::RefNotFound);
  CHECK(fetch_kind("file:///definitely/not/here", std::nullopt, job.path(), {}) == FetchErrorKind::RepoNotFound);
  CHECK(fetch_kind("gitlab.com/a/b", std::nullopt, job.path(), {}) == FetchErrorKind::UnsupportedHost);
}

TEST_CASE("local git checkouts resolve refs") {
  if (util::find_executable("git").empty()) return;
  testkit::TempDir src("git"), job("job");
  std::map<std::string, std::string> env = {{"GIT_AUTHOR_NAME", "t"}, {"GIT_AUTHOR_EMAIL", "t@example.org"},
                                            {"GIT_COMMITTER_NAME", "t"}, {"GIT_COMMITTER_EMAIL", "t@example.org"}};
  auto git = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"git", "-C", src.path().string()});
    auto r = util::run_command(args, {}, std::chrono::seconds(30), env);
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    return r.output;
  };
  git({"init", "-q", "-b", "main"});
  testkit::write_file(src / "first.ipynb", testkit::notebook_json({}));
  git({"add", "."});
  git({"commit", "-q", "-m", "one"});
  std::string first = git({"rev-parse", "HEAD"}).substr(0, 40);
  testkit::write_file(src / "second.ipynb", testkit::notebook_json({}));
  git({"add", "."});
  git({"commit", "-q", "-m", "two"});

  auto head = ingest::fetch_repository("file://" + src.path().string(), std::nullopt, job / "a");
  CHECK(head.notebook_entries.size() == 2);
  auto old = ingest::fetch_repository("file://" + src.path().string(), first, job / "b");
  CHECK(old.ref == first);
  CHECK(old.notebook_entries.size() == 1);
  CHECK_FALSE(fs::exists(old.root / ".git"));
  CHECK(fetch_kind("file://" + src.path().string(), "no-such-branch", job / "c", {}) == FetchErrorKind::RefNotFound);
}

TEST_CASE("hosted repositories come from the archive endpoint") {
  testkit::TempDir tree("host"), job("job");
  testkit::write_file(tree / "owner-repo-aaaaaaa/nb/one.ipynb", testkit::notebook_json({}));
  testkit::write_file(tree / "owner-repo-aaaaaaa/requirements.txt", "numpy\n");
  testkit::FakeHost host(tree / "owner-repo-aaaaaaa");
  auto cfg = host.config();
  cfg.token = "sekrit";

  auto snap = ingest::fetch_repository("https://github.com/owner/repo", std::nullopt, job.path(), cfg);
  CHECK(snap.ref == host.sha);
  CHECK(snap.url == "https://github.com/owner/repo");
  REQUIRE(snap.notebook_entries.size() == 1);
  CHECK(snap.notebook_entries[0].path == "nb/one.ipynb");
  CHECK(snap.manifest_entries.size() == 1);
  CHECK(host.seen_auth.find("sekrit") != std::string::npos);

  CHECK(fetch_kind("https://github.com/owner/repo", "nope", job.path(), cfg) == FetchErrorKind::RefNotFound);
  CHECK(fetch_kind("https://github.com/owner/other", std::nullopt, job.path(), cfg) == FetchErrorKind::RepoNotFound);
  CHECK(fetch_kind("https://example.org/owner/repo", std::nullopt, job.path(), cfg) == FetchErrorKind::UnsupportedHost);

  host.rate_limited = true;
  try {
    ingest::fetch_repository("https://github.com/owner/repo", std::nullopt, job.path(), cfg);
    FAIL("expected rate limit");
  } catch (const FetchError& e) {
    CHECK(e.kind() == FetchErrorKind::RateLimited);
    CHECK(e.retry_after_seconds() == 42);
  }
}

TEST_CASE("unreachable hosts are network failures") {
  testkit::TempDir job("job");
  ingest::HostingConfig cfg;
  cfg.api_base = "http://127.0.0.1:9";
  cfg.timeout = std::chrono::seconds(2);
  CHECK(fetch_kind("https://github.com/o/r", std::nullopt, job.path(), cfg) == FetchErrorKind::NetworkFailure);
}
