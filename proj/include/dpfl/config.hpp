#pragma once

// Flat key-value configuration with one section per module, stored as INI.
// Keys are addressed as "section.key". A resolved config written back out
// parses to the same values, which is what the run manifests rely on.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpfl/common.hpp"

namespace dpfl {

class Config {
 public:
  /// Throws ConfigError with the line number on malformed input.
  static Config parse_ini(const std::string& text);
  /// Reads an INI file, or the "config" object of a manifest.json.
  static Config load(const std::filesystem::path& path);
  static Config from_json(const nlohmann::json& j);

  std::optional<std::string> find(const std::string& key) const;
  void set(const std::string& key, std::string value);
  std::vector<std::string> keys() const;
  std::set<std::string> sections() const;
  bool empty() const { return values_.empty(); }

  std::string to_ini() const;
  nlohmann::json to_json() const;
  /// 16 hex digits hashed from the INI text.
  std::string id() const;

  friend bool operator==(const Config&, const Config&) = default;

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

/// Parsers used by ConfigBinder; throw ConfigError naming `key`.
double parse_double(const std::string& key, const std::string& text);
std::int64_t parse_int(const std::string& key, const std::string& text);
std::uint64_t parse_uint(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::vector<double> parse_double_list(const std::string& key, const std::string& text);
std::vector<int> parse_int_list(const std::string& key, const std::string& text);

/// Visits the fields of a config struct either to read them from a Config
/// (missing keys keep their defaults) or to write them into one. The same
/// bind() function therefore defines both directions.
class ConfigBinder {
 public:
  static ConfigBinder reader(const Config& source);
  static ConfigBinder writer();

  bool reading() const { return source_ != nullptr; }

  void field(const std::string& key, double& v);
  void field(const std::string& key, int& v);
  void field(const std::string& key, std::uint64_t& v);  // also std::size_t
  void field(const std::string& key, bool& v);
  void field(const std::string& key, std::string& v);
  void field(const std::string& key, std::vector<double>& v);
  void field(const std::string& key, std::vector<int>& v);

  template <typename E, typename ToString, typename Parse>
  void choice(const std::string& key, E& v, ToString to, Parse parse) {
    if (reading()) {
      if (auto text = lookup(key)) {
        try {
          v = parse(*text);
        } catch (const ConfigError& e) {
          throw ConfigError("config key '" + key + "': " + e.what());
        }
      }
    } else {
      out_.set(key, to(v));
    }
  }

  /// Reader only: rejects keys that no field consumed within the sections
  /// this binder touched, and sections outside `known_sections`.
  void finish(const std::set<std::string>& known_sections) const;
  const Config& result() const { return out_; }

 private:
  explicit ConfigBinder(const Config* source) : source_(source) {}
  std::optional<std::string> lookup(const std::string& key);

  const Config* source_ = nullptr;
  std::set<std::string> consumed_;
  std::set<std::string> touched_sections_;
  Config out_;
};

/// Sections any subcommand may carry in a shared config file.
const std::set<std::string>& known_sections();

/// Seed precedence: explicit override, then DPFL_SEED, then the config value.
std::uint64_t resolve_seed(std::uint64_t configured, std::optional<std::uint64_t> override_seed);

/// Reads a config struct with a bind(ConfigBinder&) member.
template <typename T>
T read_config(const Config& source) {
  T value;
  ConfigBinder b = ConfigBinder::reader(source);
  value.bind(b);
  b.finish(known_sections());
  return value;
}

template <typename T>
Config write_config(T value) {
  ConfigBinder b = ConfigBinder::writer();
  value.bind(b);
  return b.result();
}

}  // namespace dpfl
