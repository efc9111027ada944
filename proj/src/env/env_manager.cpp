#include "repro_lens/env_manager.hpp"

#include "repro_lens/util/digest.hpp"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

namespace repro_lens::env {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string read_or_empty(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> requirements_txt(std::string_view content) {
  std::vector<std::string> out;
  std::istringstream in{std::string(content)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos &&
                                    (hash == 0 || std::isspace(static_cast<unsigned char>(line[hash - 1])))) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty() || line[0] == '-') continue;
    out.push_back(line);
  }
  return out;
}

// conda match spec "numpy=1.19.2=py37_0" / "conda-forge::numpy>=1.2" -> pip specifier.
std::string conda_to_pip(std::string spec) {
  if (auto ch = spec.find("::"); ch != std::string::npos) spec.erase(0, ch + 2);
  spec = trim(spec);
  auto op = spec.find_first_of("=<>!~ ");
  if (op == std::string::npos) return spec;
  std::string name = trim(spec.substr(0, op));
  std::string rest = trim(spec.substr(op));
  if (rest.size() >= 1 && rest[0] == '=' && (rest.size() < 2 || rest[1] != '=')) {
    // Single '=' is conda's version pin; a second '=' introduces the build string.
    std::string version = rest.substr(1);
    if (auto build = version.find('='); build != std::string::npos) version.erase(build);
    version = trim(version);
    if (version.empty()) return name;
    return name + "==" + version;
  }
  return name + rest;
}

std::vector<std::string> environment_yml(std::string_view content) {
  std::vector<std::string> out;
  YAML::Node root = YAML::Load(std::string(content));
  YAML::Node deps = root["dependencies"];
  if (!deps || !deps.IsSequence()) return out;
  for (const auto& dep : deps) {
    if (dep.IsScalar()) {
      std::string pip_spec = conda_to_pip(dep.as<std::string>());
      std::string name = requirement_name(pip_spec);
      if (name == "python" || name == "pip") continue;
      out.push_back(pip_spec);
    } else if (dep.IsMap() && dep["pip"] && dep["pip"].IsSequence()) {
      for (const auto& p : dep["pip"]) {
        if (p.IsScalar()) out.push_back(trim(p.as<std::string>()));
      }
    }
  }
  return out;
}

std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> pipfile(std::string_view content) {
  std::vector<std::string> out;
  std::istringstream in{std::string(content)};
  std::string line;
  bool in_packages = false;
  static const std::regex version_in_table(R"re(version\s*=\s*["']([^"']*)["'])re");
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      in_packages = (line == "[packages]");
      continue;
    }
    if (!in_packages) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string name = unquote(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::string version;
    if (!value.empty() && value.front() == '{') {
      std::smatch m;
      if (std::regex_search(value, m, version_in_table)) version = m[1];
    } else {
      version = unquote(value);
    }
    if (version == "*" || version.empty()) {
      out.push_back(name);
    } else {
      out.push_back(name + version);
    }
  }
  return out;
}

std::vector<std::string> setup_py(std::string_view content) {
  std::vector<std::string> out;
  std::string text(content);
  static const std::regex block(R"(install_requires\s*=\s*\[([^\]]*)\])");
  static const std::regex literal(R"re(["']([^"']+)["'])re");
  std::smatch m;
  if (!std::regex_search(text, m, block)) return out;
  std::string body = m[1];
  for (std::sregex_iterator it(body.begin(), body.end(), literal), end; it != end; ++it) {
    out.push_back(trim((*it)[1].str()));
  }
  return out;
}

}  // namespace

std::optional<Version> Version::parse(std::string_view text) {
  std::string s = trim(text);
  if (!s.empty() && (s[0] == 'v' || s[0] == 'V')) s.erase(0, 1);
  int parts[3] = {0, 0, 0};
  int count = 0;
  std::size_t i = 0;
  while (count < 3) {
    if (i >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i]))) break;
    long v = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
      v = v * 10 + (s[i] - '0');
      if (v > 100000) return std::nullopt;
      ++i;
    }
    parts[count++] = static_cast<int>(v);
    if (i < s.size() && s[i] == '.') {
      ++i;
    } else {
      break;
    }
  }
  if (count < 2) return std::nullopt;
  Version out{parts[0], parts[1], std::nullopt};
  if (count == 3) out.patch = parts[2];
  return out;
}

std::string Version::to_string() const {
  std::string s = major_minor();
  if (patch) s += "." + std::to_string(*patch);
  return s;
}

std::string Version::major_minor() const {
  return std::to_string(major) + "." + std::to_string(minor);
}

std::string_view to_string(ToolKind kind) {
  switch (kind) {
    case ToolKind::CondaEnvironment: return "conda-environment";
    case ToolKind::PipRequirements: return "pip-requirements";
    case ToolKind::Pipenv: return "pipenv";
    case ToolKind::SetupPy: return "setup-py";
  }
  return "pip-requirements";
}

ToolKind tool_for(ingest::ManifestKind kind) {
  switch (kind) {
    case ingest::ManifestKind::EnvironmentYml: return ToolKind::CondaEnvironment;
    case ingest::ManifestKind::RequirementsTxt: return ToolKind::PipRequirements;
    case ingest::ManifestKind::Pipfile: return ToolKind::Pipenv;
    case ingest::ManifestKind::SetupPy: return ToolKind::SetupPy;
  }
  return ToolKind::PipRequirements;
}

std::string requirement_name(std::string_view specifier) {
  std::string s = trim(specifier);
  std::size_t end = 0;
  while (end < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[end]);
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      ++end;
    } else {
      break;
    }
  }
  std::string name = s.substr(0, end);
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return name;
}

std::vector<std::string> manifest_requirements(ingest::ManifestKind kind, std::string_view content) {
  switch (kind) {
    case ingest::ManifestKind::RequirementsTxt: return requirements_txt(content);
    case ingest::ManifestKind::EnvironmentYml: return environment_yml(content);
    case ingest::ManifestKind::Pipfile: return pipfile(content);
    case ingest::ManifestKind::SetupPy: return setup_py(content);
  }
  return {};
}

EnvironmentPlan plan_environment(const std::vector<ingest::ManifestRef>& manifests,
                                 const nb::Notebook& notebook,
                                 const ingest::RepositorySnapshot& snapshot,
                                 const PlanDefaults& defaults) {
  EnvironmentPlan plan;
  plan.repo_root = snapshot.root;
  std::optional<Version> declared;
  if (notebook.language_version) declared = Version::parse(*notebook.language_version);
  if (declared) {
    plan.interpreter_version = Version{declared->major, declared->minor, std::nullopt};
  } else {
    plan.default_interpreter = true;
    plan.interpreter_version =
        Version{defaults.default_interpreter.major, defaults.default_interpreter.minor, std::nullopt};
  }

  plan.manifests = manifests;
  std::stable_sort(plan.manifests.begin(), plan.manifests.end(),
                   [](const ingest::ManifestRef& a, const ingest::ManifestRef& b) {
                     return a.kind < b.kind;
                   });
  for (const auto& m : plan.manifests) plan.install_steps.push_back({tool_for(m.kind), m.path});

  std::string key = "ref=" + snapshot.ref + "\ninterpreter=" + plan.interpreter_version.major_minor() + "\n";
  for (const auto& m : plan.manifests) {
    key += std::string(ingest::to_string(m.kind)) + "\t" + m.path + "\t" +
           util::sha256_hex(read_or_empty(snapshot.root / m.path)) + "\n";
  }
  plan.env_id = util::sha256_hex(key).substr(0, 32);
  return plan;
}

EnvironmentManager::EnvironmentManager(fs::path workdir, std::shared_ptr<Provisioner> provisioner)
    : envs_root_(std::move(workdir) / "envs"), provisioner_(std::move(provisioner)) {}

std::shared_ptr<std::mutex> EnvironmentManager::lock_for(const std::string& env_id) {
  std::lock_guard guard(map_mu_);
  auto& slot = locks_[env_id];
  if (!slot) slot = std::make_shared<std::mutex>();
  return slot;
}

std::optional<Version> EnvironmentManager::default_interpreter() {
  std::optional<Version> best;
  for (const auto& info : provisioner_->available_interpreters()) {
    if (info.version.major != kHostDefaultMajor) continue;
    if (!best || info.version > *best) best = info.version;
  }
  return best;
}

PlanDefaults EnvironmentManager::plan_defaults() {
  PlanDefaults d;
  if (auto v = default_interpreter()) d.default_interpreter = *v;
  return d;
}

namespace {

constexpr const char* kMarker = "repro-lens-env.json";

// ": <last non-empty line>" of a tool log, or nothing.
std::string last_line(const std::string& log) {
  auto end = log.find_last_not_of(" \t\r\n");
  if (end == std::string::npos) return {};
  auto start = log.rfind('\n', end);
  start = start == std::string::npos ? 0 : start + 1;
  return ": " + log.substr(start, end - start + 1);
}

nlohmann::json handle_to_json(const EnvironmentHandle& h) {
  return {{"env_id", h.env_id},
          {"interpreter_path", h.interpreter_path.string()},
          {"actual_interpreter_version", h.actual_interpreter_version.to_string()},
          {"interpreter_fallback", h.interpreter_fallback},
          {"installed_packages", h.installed_packages},
          {"provision_log", h.provision_log}};
}

std::optional<EnvironmentHandle> load_marker(const fs::path& env_dir) {
  std::ifstream in(env_dir / kMarker);
  if (!in) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(in);
    EnvironmentHandle h;
    h.env_id = j.at("env_id").get<std::string>();
    h.env_dir = env_dir;
    h.interpreter_path = j.at("interpreter_path").get<std::string>();
    auto v = Version::parse(j.at("actual_interpreter_version").get<std::string>());
    if (!v) return std::nullopt;
    h.actual_interpreter_version = *v;
    h.interpreter_fallback = j.value("interpreter_fallback", false);
    h.installed_packages = j.value("installed_packages", std::vector<std::string>{});
    h.provision_log = j.value("provision_log", std::string{});
    h.satisfied = true;
    return h;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

EnvironmentHandle EnvironmentManager::provision(const EnvironmentPlan& plan) {
  auto lock = lock_for(plan.env_id);
  std::lock_guard guard(*lock);
  {
    std::lock_guard map_guard(map_mu_);
    if (auto it = cache_.find(plan.env_id); it != cache_.end()) return it->second;
  }
  fs::path env_dir = envs_root_ / plan.env_id;
  if (auto cached = load_marker(env_dir)) {
    std::lock_guard map_guard(map_mu_);
    cache_[plan.env_id] = *cached;
    return *cached;
  }

  std::string log;
  auto interpreters = provisioner_->available_interpreters();
  const InterpreterInfo* chosen = nullptr;
  for (const auto& info : interpreters) {
    if (info.version.same_minor(plan.interpreter_version) &&
        (!chosen || info.version > chosen->version)) {
      chosen = &info;
    }
  }
  bool fallback = false;
  if (!chosen) {
    // Nearest same-major minor; ties go to the newer one.
    int best_distance = 0;
    for (const auto& info : interpreters) {
      if (info.version.major != plan.interpreter_version.major) continue;
      int d = std::abs(info.version.minor - plan.interpreter_version.minor);
      if (!chosen || d < best_distance || (d == best_distance && info.version > chosen->version)) {
        chosen = &info;
        best_distance = d;
      }
    }
    if (!chosen) {
      throw EnvError(EnvErrorKind::InterpreterUnavailable,
                     "no interpreter with major version " +
                         std::to_string(plan.interpreter_version.major) + " is available");
    }
    fallback = true;
    log += "interpreter " + plan.interpreter_version.major_minor() + " unavailable; using " +
           chosen->version.to_string() + "\n";
  }

  std::error_code ec;
  fs::remove_all(env_dir, ec);
  fs::create_directories(env_dir);
  fs::path interpreter;
  try {
    interpreter = provisioner_->create_environment(env_dir, *chosen, log);
  } catch (const std::exception& e) {
    throw EnvError(EnvErrorKind::ProvisionFailed,
                   std::string("environment creation failed: ") + e.what(), std::nullopt, log);
  }

  std::vector<std::string> packages;
  for (const auto& step : plan.install_steps) {
    log += "$ " + std::string(to_string(step.tool)) + " " + step.manifest_path + "\n";
    StepResult r = provisioner_->run_step(env_dir, interpreter, step, plan.repo_root);
    log += r.log;
    if (!r.log.empty() && r.log.back() != '\n') log += "\n";
    if (r.exit_code != 0) {
      throw EnvError(EnvErrorKind::ProvisionFailed,
                     "install step failed: " + std::string(to_string(step.tool)) + " " +
                         step.manifest_path + " (exit " + std::to_string(r.exit_code) + ")" + last_line(r.log),
                     step, log);
    }
    auto kind = std::find_if(plan.manifests.begin(), plan.manifests.end(),
                             [&](const auto& m) { return m.path == step.manifest_path; });
    if (kind != plan.manifests.end()) {
      try {
        for (const auto& req : manifest_requirements(kind->kind, read_or_empty(plan.repo_root / kind->path))) {
          auto name = requirement_name(req);
          if (!name.empty()) packages.push_back(name);
        }
      } catch (const std::exception&) {
        // Already installed successfully; the package list is informational.
      }
    }
  }

  EnvironmentHandle handle;
  handle.env_id = plan.env_id;
  handle.env_dir = env_dir;
  handle.interpreter_path = interpreter;
  handle.actual_interpreter_version = chosen->version;
  handle.satisfied = true;
  handle.interpreter_fallback = fallback;
  handle.provision_log = log;
  handle.installed_packages = std::move(packages);

  std::ofstream out(env_dir / kMarker, std::ios::trunc);
  out << handle_to_json(handle).dump(2) << "\n";
  out.close();

  std::lock_guard map_guard(map_mu_);
  cache_[plan.env_id] = handle;
  return handle;
}

}  // namespace repro_lens::env
