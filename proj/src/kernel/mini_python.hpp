#pragma once

// A deliberately small Python subset used by the in-process mock kernel.
// Anything outside the subset raises NotImplementedError rather than
// guessing at semantics.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace repro_lens::kernel::mini {

struct PyException {
  std::string ename;
  std::string evalue;
};

/// Thrown out of the interpreter when the host requests an interrupt.
struct Interrupted {};

struct Value;
using ValuePtr = std::shared_ptr<Value>;

struct NoneV {};
struct ModuleV { std::string name; };
struct FuncV { std::string name; };
struct MethodV { ValuePtr self; std::string name; };
struct ExcTypeV { std::string name; };
struct ExcV { std::string ename; std::string evalue; };
struct FileV { std::string content; };
struct RangeV { std::int64_t start, stop, step; };
struct ListV {
  std::shared_ptr<std::vector<Value>> items;
  bool tuple = false;
};

struct Value : std::variant<NoneV, bool, std::int64_t, double, std::string, ListV, ModuleV, FuncV,
                            MethodV, ExcTypeV, ExcV, FileV, RangeV> {
  using variant::variant;
};

std::string repr(const Value& v);
std::string str(const Value& v);
/// CPython's float repr (shortest round-trip digits, 'r' formatting rules).
std::string float_repr(double d);

struct Host {
  std::function<void(bool to_stderr, const std::string& text)> write;
  std::function<std::string(const std::string& prompt)> input;
  /// Interruptible sleep; must throw Interrupted when interrupted.
  std::function<void(std::chrono::milliseconds)> sleep;
  /// Polled inside busy loops; true means stop with Interrupted.
  std::function<bool()> interrupted;
};

class Interpreter {
 public:
  Interpreter(std::filesystem::path cwd, std::set<std::string> importable, std::uint64_t seed);

  /// Runs one cell. Returns the repr of a trailing expression statement whose
  /// value is not None. Throws PyException or Interrupted.
  std::optional<std::string> run(const std::string& code, Host& host);

  static const std::set<std::string>& stdlib_modules();

 private:
  friend class Evaluator;
  std::filesystem::path cwd_;
  std::set<std::string> importable_;
  std::map<std::string, Value> globals_;
  std::mt19937_64 rng_;
};

}  // namespace repro_lens::kernel::mini
