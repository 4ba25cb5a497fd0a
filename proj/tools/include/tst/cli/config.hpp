#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tst::cli {

/// Bad configuration or command line (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyInfo {
  std::string key;  // "section.name"
  std::string fallback;
  std::string help;
};

/// Every accepted key with its built-in default, in help order.
const std::vector<KeyInfo>& known_keys();
bool is_known_key(std::string_view key);

using Settings = std::map<std::string, std::string>;

/// Sectioned key/value text:
///
///   # comment (';' works too)
///   [train]
///   epochs = 50
///
/// Keys outside a section, unknown keys and malformed lines are rejected.
Settings parse_ini(std::istream& in, const std::string& source = "<config>");
Settings read_ini(const std::filesystem::path& path);
void write_ini(const Settings& settings, std::ostream& out);

/// "section.key=value" from a --set flag.
std::pair<std::string, std::string> parse_assignment(std::string_view text);

/// Layered settings: built-in defaults < preset < config file < environment
/// < command line. Lookups fall through the layers top-down.
class Config {
 public:
  enum class Layer { Defaults, Preset, File, Env, Cli };

  Config();

  void set(Layer layer, const std::string& key, const std::string& value);
  void merge(Layer layer, const Settings& values);
  /// Clears a layer (used when the preset is resolved late).
  void reset(Layer layer);

  /// Reads TST_OUTPUT_DIR and TST_THREADS from the process environment.
  void load_env();

  std::string get(const std::string& key) const;
  bool is_set_above_defaults(const std::string& key) const;
  std::string str(const std::string& key) const { return get(key); }
  long long integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Every key with its effective value.
  Settings effective() const;

 private:
  std::map<Layer, Settings> layers_;
};

}  // namespace tst::cli
