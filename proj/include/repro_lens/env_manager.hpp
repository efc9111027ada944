#pragma once

#include "repro_lens/notebook.hpp"
#include "repro_lens/repo_ingest.hpp"

#include <compare>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace repro_lens::env {

/// Interpreter version. Planning works at major.minor; patch is informational.
struct Version {
  int major = 3;
  int minor = 0;
  std::optional<int> patch;

  /// "3.7.3" / "3.7" -> Version. Leading 'v' and trailing tags ("3.8.5rc1") tolerated.
  static std::optional<Version> parse(std::string_view text);
  std::string to_string() const;  // "major.minor[.patch]"
  std::string major_minor() const;

  bool same_minor(const Version& o) const { return major == o.major && minor == o.minor; }
  std::strong_ordering operator<=>(const Version& o) const {
    if (auto c = major <=> o.major; c != 0) return c;
    if (auto c = minor <=> o.minor; c != 0) return c;
    return patch.value_or(0) <=> o.patch.value_or(0);
  }
  bool operator==(const Version& o) const = default;
};

enum class ToolKind { CondaEnvironment, PipRequirements, Pipenv, SetupPy };

std::string_view to_string(ToolKind kind);
ToolKind tool_for(ingest::ManifestKind kind);

struct InstallStep {
  ToolKind tool = ToolKind::PipRequirements;
  std::string manifest_path;
  bool operator==(const InstallStep&) const = default;
};

struct EnvironmentPlan {
  Version interpreter_version;
  /// True when the notebook declared no usable language_version.
  bool default_interpreter = false;
  std::vector<ingest::ManifestRef> manifests;
  std::vector<InstallStep> install_steps;
  std::string env_id;
  std::filesystem::path repo_root;
  bool operator==(const EnvironmentPlan&) const = default;
};

struct EnvironmentHandle {
  std::string env_id;
  std::filesystem::path env_dir;
  std::filesystem::path interpreter_path;
  Version actual_interpreter_version;
  bool satisfied = false;
  /// Requested major.minor was unavailable; a same-major neighbour was used.
  bool interpreter_fallback = false;
  std::string provision_log;
  /// Distribution names requested by the manifests, as installed.
  std::vector<std::string> installed_packages;
};

enum class EnvErrorKind { InterpreterUnavailable, ProvisionFailed };

class EnvError : public std::runtime_error {
 public:
  EnvError(EnvErrorKind kind, const std::string& message, std::optional<InstallStep> step = {},
           std::string log = {})
      : std::runtime_error(message), kind_(kind), step_(std::move(step)), log_(std::move(log)) {}
  EnvErrorKind kind() const { return kind_; }
  const std::optional<InstallStep>& failing_step() const { return step_; }
  const std::string& log() const { return log_; }

 private:
  EnvErrorKind kind_;
  std::optional<InstallStep> step_;
  std::string log_;
};

struct PlanDefaults {
  /// Used when the notebook has no parseable language_version.
  Version default_interpreter{3, 0, std::nullopt};
};

/// Pure and total. Install steps follow the manifest precedence order; the
/// requested interpreter is the notebook's language_version cut to major.minor.
EnvironmentPlan plan_environment(const std::vector<ingest::ManifestRef>& manifests,
                                 const nb::Notebook& notebook,
                                 const ingest::RepositorySnapshot& snapshot,
                                 const PlanDefaults& defaults = {});

/// Requirement names/specifiers declared by a manifest, in declaration order.
/// Interpreter pins (`python=3.7`) and the `pip` meta-dependency are dropped.
std::vector<std::string> manifest_requirements(ingest::ManifestKind kind, std::string_view content);

/// Bare distribution name of a requirement specifier ("numpy>=1.2" -> "numpy").
std::string requirement_name(std::string_view specifier);

struct InterpreterInfo {
  Version version;
  std::filesystem::path path;
};

struct StepResult {
  int exit_code = 0;
  std::string log;
};

/// Backend that actually builds environments. Implementations must be safe to
/// call concurrently for distinct environment directories.
class Provisioner {
 public:
  virtual ~Provisioner() = default;
  virtual std::vector<InterpreterInfo> available_interpreters() = 0;
  /// Creates an empty isolated environment; returns its interpreter path.
  virtual std::filesystem::path create_environment(const std::filesystem::path& env_dir,
                                                   const InterpreterInfo& base,
                                                   std::string& log) = 0;
  virtual StepResult run_step(const std::filesystem::path& env_dir,
                              const std::filesystem::path& interpreter, const InstallStep& step,
                              const std::filesystem::path& repo_root) = 0;
};

/// Real backend: `python -m venv` environments populated with pip. Extra pip
/// arguments can be supplied through `REPRO_LENS_PIP_ARGS` (whitespace separated).
class VenvProvisioner final : public Provisioner {
 public:
  VenvProvisioner();
  std::vector<InterpreterInfo> available_interpreters() override;
  std::filesystem::path create_environment(const std::filesystem::path& env_dir,
                                           const InterpreterInfo& base, std::string& log) override;
  StepResult run_step(const std::filesystem::path& env_dir, const std::filesystem::path& interpreter,
                      const InstallStep& step, const std::filesystem::path& repo_root) override;

 private:
  std::vector<std::string> pip_args_;
  std::once_flag discovered_;
  std::vector<InterpreterInfo> interpreters_;
};

/// Test double: records every call and never touches the network. Steps fail
/// when their manifest names a package listed in `missing_packages`.
class RecordingProvisioner final : public Provisioner {
 public:
  explicit RecordingProvisioner(std::vector<Version> available = {{3, 6, 15}, {3, 7, 17}, {3, 8, 18},
                                                                   {3, 9, 18}, {3, 10, 13}, {3, 11, 8},
                                                                   {3, 12, 3}},
                                std::set<std::string> missing_packages = {});

  std::vector<InterpreterInfo> available_interpreters() override;
  std::filesystem::path create_environment(const std::filesystem::path& env_dir,
                                           const InterpreterInfo& base, std::string& log) override;
  StepResult run_step(const std::filesystem::path& env_dir, const std::filesystem::path& interpreter,
                      const InstallStep& step, const std::filesystem::path& repo_root) override;

  std::size_t environments_created() const;
  std::size_t steps_executed() const;
  std::vector<InstallStep> executed_steps() const;

 private:
  std::vector<Version> available_;
  std::set<std::string> missing_;
  mutable std::mutex mu_;
  std::size_t created_ = 0;
  std::vector<InstallStep> steps_;
};

/// Owns the environment cache under `<workdir>/envs/<env_id>`.
class EnvironmentManager {
 public:
  EnvironmentManager(std::filesystem::path workdir, std::shared_ptr<Provisioner> provisioner);

  /// Idempotent per env_id: an existing satisfied environment is reused without
  /// re-running steps. Throws EnvError.
  EnvironmentHandle provision(const EnvironmentPlan& plan);

  /// Newest interpreter sharing the host default's major version.
  std::optional<Version> default_interpreter();

  PlanDefaults plan_defaults();

  Provisioner& provisioner() { return *provisioner_; }
  const std::filesystem::path& envs_root() const { return envs_root_; }

 private:
  std::shared_ptr<std::mutex> lock_for(const std::string& env_id);

  std::filesystem::path envs_root_;
  std::shared_ptr<Provisioner> provisioner_;
  std::mutex map_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
  std::map<std::string, EnvironmentHandle> cache_;
};

/// Major version of the analysis host's default interpreter.
inline constexpr int kHostDefaultMajor = 3;

}  // namespace repro_lens::env
