// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include "fixtures.hpp"
#include "generators.hpp"
#include "oracles.hpp"

#include "repro_lens/analytics.hpp"
#include "repro_lens/diff_engine.hpp"
#include "repro_lens/kernel/wire.hpp"
#include "repro_lens/provenance.hpp"
#include "repro_lens/run_orchestrator.hpp"
#include "repro_lens/util/process.hpp"

#include <httplib.h>
#include <json.hpp>

#include <signal.h>

#include <array>
#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

using namespace repro_lens;
using Json = nlohmann::json;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr auto kMockBudget = 30s;
constexpr auto kRealBudget = 5min;
constexpr int kNormalizationLists = 1000;
constexpr int kVerdictPairs = 2000;
constexpr std::size_t kMinRoundTrip = 20;
constexpr int kHmacVectors = 200;
constexpr int kTamperTrials = 200;
constexpr int kNoisySeeds = 12;
constexpr int kNoisyCells = 25;
constexpr int kImportCells = 1000;
constexpr auto kDurabilityJobWait = 60s;

const std::string kCli = REPRO_LENS_CLI;

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

fs::path six_fixture() { return testkit::fixtures_dir() / "repos" / "six"; }

// Artifacts of one CLI run, shared by later criteria.
struct CliRun {
  std::string label;
  fs::path out;
  Json report;
  run::RepoRunReport run;
  double seconds = 0;
};
std::vector<CliRun> g_runs;

bool host_has_ipykernel() {
  auto python = util::find_executable("python3");
  if (python.empty()) return false;
  return util::run_command({python.string(), "-c", "import ipykernel"}, {}, 60s).exit_code == 0;
}

CliRun cli_run(const std::string& label, const fs::path& root, bool mock, std::chrono::seconds budget) {
  CliRun r;
  r.label = label;
  r.out = root / "out";
  std::vector<std::string> argv = {kCli,          "run",   "file://" + six_fixture().string(),
                                   "--out",       r.out.string(), "--workdir",
                                   (root / "work").string(), "--parallel", "2"};
  if (mock) argv.push_back("--mock");
  auto start = std::chrono::steady_clock::now();
  auto res = util::run_command(argv, {}, budget + 30s);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  require(res.exit_code == 0, label + " run exited " + std::to_string(res.exit_code) + ": " + res.output);
  r.report = Json::parse(testkit::read_file(r.out / "report.json"));
  r.run = run::report_from_json(Json::parse(testkit::read_file(r.out / "run.json")));
  return r;
}

std::string check_partition(const CliRun& r) {
  const auto& s = r.report.at("summary");
  const auto& o = s.at("outcomes");
  int same = o.at("same_results"), different = o.at("different_results"), exception = o.at("exception"),
      not_executed = o.at("not_executed");
  std::ostringstream desc;
  desc << r.label << " same=" << same << " different=" << different << " exception=" << exception
       << " not_executed=" << not_executed << " " << s.at("exception_kinds").dump();
  require(same == 2 && different == 1 && exception == 2 && not_executed == 1, "partition " + desc.str());
  require(same + different + exception + not_executed == 6, "partition does not sum to 6");
  require(s.at("exception_kinds") == Json{{"ModuleNotFoundError", 1}, {"SyntaxError", 1}},
          "exception kinds " + s.at("exception_kinds").dump());
  bool legacy_ok = false;
  for (const auto& row : r.report.at("notebooks")) {
    if (row.at("path") == "legacy_v3.ipynb") {
      legacy_ok = row["outcome"]["category"] == "NotExecuted" && row["outcome"].value("reason", "") == "invalid nbformat";
    }
  }
  require(legacy_ok, "legacy_v3.ipynb is not NotExecuted(invalid nbformat)");
  return desc.str();
}

std::string end_to_end(testkit::TempDir& scratch) {
  std::ostringstream detail;
  auto mock = cli_run("mock", scratch / "mock", true, kMockBudget);
  std::string d = check_partition(mock);
  require(mock.seconds < std::chrono::duration<double>(kMockBudget).count(),
          "mock run took " + std::to_string(mock.seconds) + "s");
  detail << d << " in " << std::fixed << std::setprecision(2) << mock.seconds << "s";
  g_runs.push_back(std::move(mock));
  if (host_has_ipykernel()) {
    auto real = cli_run("real", scratch / "real", false, kRealBudget);
    d = check_partition(real);
    require(real.seconds < std::chrono::duration<double>(kRealBudget).count(),
            "real run took " + std::to_string(real.seconds) + "s");
    detail << "; " << d << " in " << real.seconds << "s";
    g_runs.push_back(std::move(real));
  } else {
    detail << "; real kernel not available, mock only";
  }
  return detail.str();
}

std::string diff_localization() {
  require(!g_runs.empty(), "no end-to-end run to inspect");
  auto original = nb::parse_notebook(testkit::read_file(six_fixture() / "clock.ipynb"), "clock.ipynb");
  // The injected cell is the one reading the wall clock.
  std::optional<std::size_t> injected;
  for (const auto& c : original.cells) {
    if (c.source.find("time.time()") != std::string::npos) injected = c.index;
  }
  require(injected.has_value(), "fixture has no clock cell");
  std::ostringstream detail;
  for (const auto& r : g_runs) {
    const run::NotebookRunRecord* rec = nullptr;
    Json row;
    for (std::size_t i = 0; i < r.run.notebooks.size(); ++i) {
      if (r.run.notebooks[i].path == "clock.ipynb") {
        rec = &*r.run.notebooks[i].record;
        row = r.report["notebooks"][i];
      }
    }
    require(rec != nullptr, r.label + ": clock.ipynb missing");
    // Brute force: every code cell against its record, by naive string rendering.
    std::set<std::size_t> expected;
    for (const auto& c : original.cells) {
      if (c.kind != nb::CellKind::Code) continue;
      auto it = std::find_if(rec->cell_records.begin(), rec->cell_records.end(),
                             [&](const run::CellRecord& cr) { return cr.index == c.index; });
      require(it != rec->cell_records.end(), r.label + ": cell " + std::to_string(c.index) + " not executed");
      if (oracle::naive_verdict(c.outputs, it->result.outputs) != "Same") expected.insert(c.index);
    }
    require(expected == std::set<std::size_t>{*injected}, r.label + ": oracle disagrees with the fixture design");
    std::set<std::size_t> flagged;
    std::size_t same = 0;
    for (const auto& cell : row["diff"]["cells"]) {
      if (cell["verdict"] == "Same") {
        ++same;
      } else {
        flagged.insert(cell["index"].get<std::size_t>());
      }
    }
    require(row["diff"]["overall"] == "DifferentResults", r.label + ": overall " + row["diff"]["overall"].dump());
    require(flagged == expected, r.label + ": flagged cells differ from the oracle");
    auto recomputed = diff::diff_notebook(original, *rec).flagged_cells();
    require(std::set<std::size_t>(recomputed.begin(), recomputed.end()) == expected, r.label + ": recomputed flags differ");
    if (detail.tellp() > 0) detail << "; ";
    detail << r.label << " flagged {" << *injected << "} with " << same << " cells Same";
  }
  return detail.str();
}

std::string normalization() {
  std::mt19937_64 rng(20240611);
  for (int i = 0; i < kNormalizationLists; ++i) {
    auto outs = testkit::random_text_outputs(rng);
    auto once = diff::normalize_outputs(outs);
    require(diff::normalize_outputs(once) == once, "idempotence failed on list " + std::to_string(i));
    require(diff::diff_cell(outs, outs, 0).verdict == diff::Verdict::Same, "reflexivity failed on list " + std::to_string(i));
  }
  int agree = 0;
  std::map<std::string, int> seen;
  for (int i = 0; i < kVerdictPairs; ++i) {
    auto a = testkit::random_text_outputs(rng);
    auto b = testkit::variant_of(rng, a);
    auto expected = oracle::naive_verdict(a, b);
    ++seen[expected];
    agree += std::string(diff::to_string(diff::diff_cell(a, b, 0).verdict)) == expected;
  }
  require(agree == kVerdictPairs, "oracle agreement " + std::to_string(agree) + "/" + std::to_string(kVerdictPairs));
  return std::to_string(kNormalizationLists) + " lists idempotent+reflexive; " + std::to_string(agree) + "/" +
         std::to_string(kVerdictPairs) + " verdicts agree (Same " + std::to_string(seen["Same"]) + ", Different " +
         std::to_string(seen["Different"]) + ", OriginalEmpty " + std::to_string(seen["OriginalEmpty"]) + ")";
}

std::string round_trip() {
  auto files = testkit::roundtrip_corpus();
  require(files.size() >= kMinRoundTrip, "corpus has only " + std::to_string(files.size()) + " notebooks");
  std::size_t failures = 0;
  std::string first_failure;
  for (const auto& f : files) {
    std::string raw = testkit::read_file(f);
    bool ok = false;
    try {
      auto a = nb::parse_notebook(raw, f.filename().string());
      auto written = nb::serialize_notebook(a);
      auto b = nb::parse_notebook(written, f.filename().string());
      ok = a == b && nb::serialize_notebook(b) == written &&
           testkit::canonical_notebook(Json::parse(written)) == testkit::canonical_notebook(Json::parse(raw));
    } catch (const std::exception&) {
    }
    if (!ok) {
      ++failures;
      if (first_failure.empty()) first_failure = f.filename().string();
    }
  }
  require(failures == 0, std::to_string(failures) + " failures, first " + first_failure);
  return std::to_string(files.size()) + " notebooks, 0 failures";
}

std::string random_bytes(std::mt19937_64& rng, std::size_t max_len) {
  std::string s(std::uniform_int_distribution<std::size_t>(0, max_len)(rng), '\0');
  for (auto& c : s) c = static_cast<char>(rng() & 0xff);
  return s;
}

std::string wire_protocol() {
  std::mt19937_64 rng(99);
  for (int i = 0; i < kHmacVectors; ++i) {
    std::string key = random_bytes(rng, 128) + "k";
    std::array<std::string, 4> frames;
    for (auto& f : frames) f = random_bytes(rng, 256);
    require(kernel::sign_message(key, frames) == oracle::hmac_sha256_hex(key, frames[0] + frames[1] + frames[2] + frames[3]),
            "signature mismatch on vector " + std::to_string(i));
  }
  int detected = 0;
  for (int i = 0; i < kTamperTrials; ++i) {
    std::string key = random_bytes(rng, 64) + "k";
    std::array<std::string, 4> frames = {random_bytes(rng, 80) + "h", random_bytes(rng, 80) + "p",
                                         random_bytes(rng, 80) + "m", random_bytes(rng, 80) + "c"};
    auto sig = kernel::sign_message(key, frames);
    auto tampered = frames;
    auto& f = tampered[rng() % 4];
    f[rng() % f.size()] ^= static_cast<char>(1 + rng() % 255);
    detected += !kernel::verify_signature(key, tampered, sig);
  }
  require(detected == kTamperTrials, "tamper detected " + std::to_string(detected) + "/" + std::to_string(kTamperTrials));

  std::size_t leaks = 0, foreign = 0;
  testkit::TempDir dir("wire");
  auto env = testkit::mock_env();
  kernel::SessionOptions so;
  so.startup_timeout = 5s;
  so.interrupt_grace = 200ms;
  so.shutdown_grace = 200ms;
  for (int seed = 1; seed <= kNoisySeeds; ++seed) {
    kernel::MockKernelOptions opts;
    opts.noise = true;
    opts.noise_seed = static_cast<std::uint64_t>(seed);
    kernel::MockKernelLauncher launcher(opts);
    auto s = kernel::start_kernel(launcher, env, {"python3", "Python 3", nb::Json::object()}, dir.path(), so);
    for (int i = 0; i < kNoisyCells; ++i) {
      std::string tag = std::to_string(seed * 1000 + i);
      auto r = s->execute("print(" + tag + ")\n" + tag, 5s);
      bool clean = r.outputs.size() == 2 &&
                   std::holds_alternative<nb::StreamOutput>(r.outputs[0]) &&
                   std::get<nb::StreamOutput>(r.outputs[0]).text == tag + "\n" &&
                   std::holds_alternative<nb::ExecuteResultOutput>(r.outputs[1]) &&
                   std::get<nb::ExecuteResultOutput>(r.outputs[1]).data.at("text/plain") == tag;
      leaks += !clean;
    }
    foreign += s->unattributed_messages();
    s->shutdown();
  }
  require(foreign > 0, "noise generator injected no foreign traffic");
  require(leaks == 0, std::to_string(leaks) + " executions returned foreign or missing outputs");
  return std::to_string(kHmacVectors) + " HMAC vectors match; " + std::to_string(detected) + "/" +
         std::to_string(kTamperTrials) + " tampers detected; 0 leaks over " + std::to_string(kNoisySeeds * kNoisyCells) +
         " noisy executions (" + std::to_string(foreign) + " foreign messages dropped)";
}

std::string provenance(testkit::TempDir& scratch) {
  // Every fixture tree through the mock pipeline, plus the CLI runs above.
  std::vector<run::RepoRunReport> reports;
  for (const auto& r : g_runs) reports.push_back(r.run);
  for (const fs::path& root : {six_fixture(), testkit::fixtures_dir() / "roundtrip"}) {
    auto backend = std::make_shared<env::RecordingProvisioner>();
    env::EnvironmentManager envs(scratch / "prov-work", backend);
    kernel::MockKernelLauncher launcher;
    run::OrchestratorOptions o;
    o.cell_timeout = 5s;
    run::Orchestrator orch(envs, launcher, o);
    reports.push_back(orch.reproduce_repository(ingest::snapshot_from_directory(root, "file://" + root.string(), "fixture")));
  }
  const std::string activity = std::string(prov::ns::prov) + "Activity";
  const std::string rdf_type = std::string(prov::ns::rdf) + "type";
  fs::path ttl_dir = scratch / "ttl";
  std::size_t files = 0, triples = 0, activities = 0;
  auto check_graph = [&](const prov::Graph& g, const std::string& name, std::optional<std::size_t> executed) {
    auto text = prov::serialize_turtle(g);
    std::set<oracle::RdfTriple> parsed;
    try {
      parsed = oracle::parse_turtle(text);
    } catch (const std::exception& e) {
      throw Failure(name + " does not re-parse: " + e.what());
    }
    require(parsed == testkit::as_rdf(g), name + " triple set changed in the round trip");
    if (executed) {
      std::size_t n = 0;
      for (const auto& [s, p, o] : parsed) n += p.value == rdf_type && o.value == activity;
      require(n == *executed, name + ": " + std::to_string(n) + " activities for " + std::to_string(*executed) + " cells");
      activities += n;
    }
    std::string stem = std::to_string(files++);
    testkit::write_file(ttl_dir / (stem + ".ttl"), text);
    testkit::write_file(ttl_dir / (stem + ".nt"), oracle::to_ntriples(parsed));
    triples += parsed.size();
  };
  for (const auto& report : reports) {
    std::size_t total = 0;
    for (const auto& row : report.notebooks) {
      std::size_t executed = row.record ? row.record->cell_records.size() : 0;
      total += executed;
      check_graph(prov::export_notebook(row, report.ref), row.path, executed);
    }
    check_graph(prov::export_repository(report), "repository", total);
  }
  // The files the CLI wrote must parse too.
  std::size_t written = 0;
  for (const auto& r : g_runs) {
    for (const auto& e : fs::recursive_directory_iterator(r.out / "prov")) {
      if (e.path().extension() != ".ttl") continue;
      try {
        oracle::parse_turtle(testkit::read_file(e.path()));
      } catch (const std::exception& ex) {
        throw Failure(e.path().string() + " does not re-parse: " + ex.what());
      }
      ++written;
    }
  }
  std::string rdflib = "rdflib not installed";
  if (auto python = util::find_executable("python3"); !python.empty()) {
    auto res = util::run_command({python.string(), REPRO_LENS_TEST_SCRIPTS "/check_turtle.py", ttl_dir.string()}, {}, 300s);
    if (res.exit_code != 77) {
      require(res.exit_code == 0, "rdflib check failed: " + res.output);
      rdflib = "rdflib isomorphic on all";
    }
  }
  return std::to_string(files) + " graphs (" + std::to_string(triples) + " triples, " + std::to_string(activities) +
         " activities = executed cells) round-trip; " + std::to_string(written) + " CLI files re-parse; " + rdflib;
}

std::string analytics_oracles() {
  std::mt19937_64 rng(31337);
  int agree = 0;
  for (int i = 0; i < kImportCells; ++i) {
    auto cell = oracle::generate_import_cell(rng);
    agree += analytics::extract_imports(cell.source) == cell.imports;
  }
  require(agree == kImportCells, "imports agree on " + std::to_string(agree) + "/" + std::to_string(kImportCells));
  using K = analytics::ExceptionKind::Kind;
  const std::vector<std::pair<std::string, K>> listed = {{"ImportError", K::ImportError},
                                                         {"ModuleNotFoundError", K::ModuleNotFoundError},
                                                         {"FileNotFoundError", K::FileNotFoundError},
                                                         {"IOError", K::IOError},
                                                         {"SyntaxError", K::SyntaxError}};
  for (const auto& [name, kind] : listed) {
    require(analytics::exception_kind_from_ename(name).kind == kind, name + " misclassified");
  }
  for (std::string other : {"ZeroDivisionError", "KeyError", "OSError", "importerror"}) {
    require(analytics::exception_kind_from_ename(other).kind == K::Other, other + " is not Other");
  }
  return std::to_string(agree) + "/" + std::to_string(kImportCells) + " generated cells agree; 5 listed enames map, unlisted map to Other";
}

// --- durability -------------------------------------------------------------

struct Server {
  util::ChildProcess child;
  int port = 0;
};

Server start_server(const fs::path& workdir, const fs::path& log) {
  util::SpawnOptions so;
  so.log_file = log;
  auto child = util::ChildProcess::spawn(
      {kCli, "serve", "--mock", "--port", "0", "--workers", "1", "--workdir", workdir.string()}, so);
  static const std::regex listening(R"(listening on http://127\.0\.0\.1:(\d+))");
  auto deadline = std::chrono::steady_clock::now() + 20s;
  while (std::chrono::steady_clock::now() < deadline) {
    std::smatch m;
    std::string text = fs::exists(log) ? testkit::read_file(log) : "";
    if (std::regex_search(text, m, listening)) return Server{std::move(child), std::stoi(m[1])};
    require(child.running(), "server exited early: " + text);
    std::this_thread::sleep_for(50ms);
  }
  throw Failure("server did not start");
}

Json get_json(httplib::Client& cli, const std::string& path, int expect = 200) {
  auto r = cli.Get(path);
  require(static_cast<bool>(r), "GET " + path + " failed");
  require(r->status == expect, "GET " + path + " returned " + std::to_string(r->status) + ": " + r->body);
  return Json::parse(r->body);
}

std::string submit(httplib::Client& cli, const std::string& url) {
  auto r = cli.Post("/api/jobs", Json{{"url", url}}.dump(), "application/json");
  require(r && r->status == 202, "submit " + url + " failed");
  return Json::parse(r->body).at("job_id");
}

std::string wait_state(httplib::Client& cli, const std::string& id, const std::set<std::string>& wanted) {
  auto deadline = std::chrono::steady_clock::now() + kDurabilityJobWait;
  std::string state;
  while (std::chrono::steady_clock::now() < deadline) {
    state = get_json(cli, "/api/jobs/" + id).at("state");
    if (wanted.count(state)) return state;
    std::this_thread::sleep_for(50ms);
  }
  throw Failure("job " + id + " stuck in " + state);
}

std::size_t check_journals(const fs::path& jobs) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(jobs)) {
    auto journal = e.path() / "journal.jsonl";
    if (!fs::exists(journal)) continue;
    std::string text = testkit::read_file(journal);
    require(!text.empty() && text.back() == '\n', journal.string() + " ends mid-record");
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      require(Json::accept(line), journal.string() + " has an unparseable record");
    }
    ++n;
  }
  return n;
}

std::string durability(testkit::TempDir& scratch) {
  fs::path work = scratch / "durable";
  fs::path slow = scratch / "slow-repo", quick = scratch / "quick-repo";
  testkit::write_file(slow / "slow.ipynb", testkit::notebook_json({{"import time\ntime.sleep(60)"}, {"print('late')"}}));
  testkit::write_file(quick / "quick.ipynb", testkit::notebook_json({{"print(1)", {testkit::stream_json("1\n")}, 1}}));

  std::string done_id, slow_id, queued_id, done_bytes;
  {
    auto server = start_server(work, scratch / "serve-1.log");
    httplib::Client cli("127.0.0.1", server.port);
    done_id = submit(cli, "file://" + six_fixture().string());
    require(wait_state(cli, done_id, {"Completed", "Failed"}) == "Completed", "first job failed");
    auto r = cli.Get("/api/jobs/" + done_id + "/report");
    require(r && r->status == 200, "report unavailable before the crash");
    done_bytes = r->body;
    slow_id = submit(cli, "file://" + slow.string());
    wait_state(cli, slow_id, {"Executing"});
    queued_id = submit(cli, "file://" + quick.string());
    require(get_json(cli, "/api/jobs/" + queued_id).at("state") == "Queued", "second job did not queue");
    server.child.kill_and_reap();
  }

  auto server = start_server(work, scratch / "serve-2.log");
  httplib::Client cli("127.0.0.1", server.port);
  std::size_t journals = check_journals(work / "jobs");
  auto slow_status = get_json(cli, "/api/jobs/" + slow_id);
  require(slow_status.at("state") == "Failed", "interrupted job is " + slow_status.at("state").get<std::string>());
  auto slow_report = cli.Get("/api/jobs/" + slow_id + "/report");
  require(slow_report && slow_report->status == 409, "interrupted job report is not 409");
  require(wait_state(cli, queued_id, {"Completed", "Failed"}) == "Completed", "queued job did not resume");
  auto resumed = get_json(cli, "/api/jobs/" + queued_id + "/report");
  require(resumed.at("schema_version") == 1, "resumed report schema");
  auto again = cli.Get("/api/jobs/" + done_id + "/report");
  require(again && again->status == 200 && again->body == done_bytes, "completed report changed across the restart");
  auto fresh = submit(cli, "file://" + quick.string());
  require(wait_state(cli, fresh, {"Completed", "Failed"}) == "Completed", "new submission after restart failed");
  check_journals(work / "jobs");
  server.child.signal(SIGTERM);
  server.child.wait_for(10s);
  return std::to_string(journals) + " journals parse after SIGKILL; in-flight job Failed (" +
         slow_status.value("error", "") + "); queued job resumed; completed report byte-identical (" +
         std::to_string(done_bytes.size()) + " bytes)";
}

}  // namespace

int main() {
  ::signal(SIGPIPE, SIG_IGN);
  testkit::TempDir scratch("acceptance");
  std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
      {"end-to-end fixture", [&] { return end_to_end(scratch); }},
      {"diff localization", diff_localization},
      {"normalization properties", normalization},
      {"notebook round-trip", round_trip},
      {"wire protocol", wire_protocol},
      {"provenance", [&] { return provenance(scratch); }},
      {"analytics oracles", analytics_oracles},
      {"durability", [&] { return durability(scratch); }},
  };
  int failures = 0;
  for (const auto& [name, body] : criteria) {
    std::string line;
    try {
      line = "PASS " + name + ": " + body();
    } catch (const std::exception& e) {
      ++failures;
      line = "FAIL " + name + ": " + e.what();
    }
    std::cout << line << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures;
}
