#include "repro_lens/env_manager.hpp"

#include "repro_lens/util/digest.hpp"
#include "repro_lens/util/process.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace repro_lens::env {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<ingest::ManifestKind> kind_of(const InstallStep& step) {
  return ingest::manifest_kind_from_name(fs::path(step.manifest_path).filename().string());
}

}  // namespace

VenvProvisioner::VenvProvisioner() {
  if (const char* extra = std::getenv("REPRO_LENS_PIP_ARGS")) {
    std::istringstream in(extra);
    std::string arg;
    while (in >> arg) pip_args_.push_back(arg);
  }
}

std::vector<InterpreterInfo> VenvProvisioner::available_interpreters() {
  std::call_once(discovered_, [this] {
    std::vector<std::string> names = {"python3", "python"};
    for (int minor = 0; minor <= 20; ++minor) names.push_back("python3." + std::to_string(minor));
    std::set<fs::path> seen;
    for (const auto& name : names) {
      auto exe = util::find_executable(name);
      if (exe.empty()) continue;
      std::error_code ec;
      auto canonical = fs::canonical(exe, ec);
      if (ec || !seen.insert(canonical).second) continue;
      auto r = util::run_command(
          {exe.string(), "-c", "import sys; print('%d.%d.%d' % sys.version_info[:3])"}, {},
          std::chrono::seconds(20));
      if (r.exit_code != 0) continue;
      if (auto v = Version::parse(r.output)) interpreters_.push_back({*v, exe});
    }
  });
  return interpreters_;
}

fs::path VenvProvisioner::create_environment(const fs::path& env_dir, const InterpreterInfo& base,
                                             std::string& log) {
  // System site-packages keep the host's kernel machinery importable.
  auto r = util::run_command({base.path.string(), "-m", "venv", "--system-site-packages",
                              (env_dir / "venv").string()},
                             {}, std::chrono::minutes(5));
  log += r.output;
  if (r.exit_code != 0) throw std::runtime_error("venv creation exited " + std::to_string(r.exit_code));
  return env_dir / "venv" / "bin" / "python";
}

StepResult VenvProvisioner::run_step(const fs::path& env_dir, const fs::path& interpreter,
                                     const InstallStep& step, const fs::path& repo_root) {
  fs::path manifest = repo_root / step.manifest_path;
  std::vector<std::string> argv = {interpreter.string(), "-m", "pip", "install",
                                   "--disable-pip-version-check", "--no-input"};
  argv.insert(argv.end(), pip_args_.begin(), pip_args_.end());

  switch (step.tool) {
    case ToolKind::PipRequirements:
      argv.insert(argv.end(), {"-r", manifest.string()});
      break;
    case ToolKind::SetupPy:
      argv.push_back(manifest.parent_path().string());
      break;
    case ToolKind::CondaEnvironment:
    case ToolKind::Pipenv: {
      auto kind = kind_of(step);
      std::vector<std::string> reqs;
      try {
        reqs = manifest_requirements(kind.value_or(ingest::ManifestKind::RequirementsTxt),
                                     read_text(manifest));
      } catch (const std::exception& e) {
        return {1, std::string("cannot read manifest: ") + e.what() + "\n"};
      }
      if (reqs.empty()) return {0, "no installable requirements\n"};
      fs::path converted = env_dir / ("requirements-" + util::sha256_hex(step.manifest_path).substr(0, 12) + ".txt");
      std::ofstream out(converted, std::ios::trunc);
      for (const auto& r : reqs) out << r << "\n";
      out.close();
      argv.insert(argv.end(), {"-r", converted.string()});
      break;
    }
  }
  auto r = util::run_command(argv, manifest.parent_path(), std::chrono::minutes(30));
  return {r.timed_out ? 124 : r.exit_code, r.output};
}

RecordingProvisioner::RecordingProvisioner(std::vector<Version> available,
                                           std::set<std::string> missing_packages)
    : available_(std::move(available)), missing_(std::move(missing_packages)) {}

std::vector<InterpreterInfo> RecordingProvisioner::available_interpreters() {
  std::vector<InterpreterInfo> out;
  for (const auto& v : available_) out.push_back({v, "/simulated/python" + v.major_minor()});
  return out;
}

fs::path RecordingProvisioner::create_environment(const fs::path& env_dir, const InterpreterInfo& base,
                                                  std::string& log) {
  std::lock_guard lock(mu_);
  ++created_;
  log += "simulated environment from " + base.path.string() + "\n";
  return env_dir / "bin" / "python";
}

StepResult RecordingProvisioner::run_step(const fs::path&, const fs::path&, const InstallStep& step,
                                          const fs::path& repo_root) {
  {
    std::lock_guard lock(mu_);
    steps_.push_back(step);
  }
  auto kind = kind_of(step);
  std::vector<std::string> reqs;
  try {
    reqs = manifest_requirements(kind.value_or(ingest::ManifestKind::RequirementsTxt),
                                 read_text(repo_root / step.manifest_path));
  } catch (const std::exception& e) {
    return {1, std::string("cannot read manifest: ") + e.what() + "\n"};
  }
  std::string log;
  for (const auto& r : reqs) {
    auto name = requirement_name(r);
    if (missing_.count(name)) {
      log += "ERROR: No matching distribution found for " + r + "\n";
      return {1, log};
    }
    log += "installed " + r + "\n";
  }
  return {0, log};
}

std::size_t RecordingProvisioner::environments_created() const {
  std::lock_guard lock(mu_);
  return created_;
}

std::size_t RecordingProvisioner::steps_executed() const {
  std::lock_guard lock(mu_);
  return steps_.size();
}

std::vector<InstallStep> RecordingProvisioner::executed_steps() const {
  std::lock_guard lock(mu_);
  return steps_;
}

}  // namespace repro_lens::env
