#include "dpfl/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dpfl/csv.hpp"

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t fields bind as uint64");

namespace dpfl {
namespace pt = boost::property_tree;

namespace {

std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() ||
      key.find('.', dot + 1) != std::string::npos) {
    throw ConfigError("config key '" + key + "' must have the form section.name");
  }
  return {key.substr(0, dot), key.substr(dot + 1)};
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      parts.push_back(trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!trim(current).empty() || !parts.empty()) parts.push_back(trim(current));
  return parts;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw, const char* what) {
  const std::string text = trim(raw);
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc() || ptr != last) {
    throw ConfigError("config key '" + key + "': expected " + what + ", got '" + raw + "'");
  }
  return value;
}

}  // namespace

Config Config::parse_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("malformed config at line " + std::to_string(e.line()) + ": " +
                      e.message());
  }
  Config cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' is outside any [section]");
    }
    for (const auto& [name, leaf] : body) {
      cfg.set(section + "." + name, leaf.data());
    }
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(buffer.str());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
    if (j.contains("config")) return from_json(j.at("config"));
    return from_json(j);
  }
  return parse_ini(buffer.str());
}

Config Config::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config JSON must be an object of sections");
  Config cfg;
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [name, value] : body.items()) {
      const std::string key = section + "." + name;
      if (!value.is_string()) throw ConfigError("config key '" + key + "' must be a string");
      cfg.set(key, value.get<std::string>());
    }
  }
  return cfg;
}

std::optional<std::string> Config::find(const std::string& key) const {
  const auto [section, name] = split_key(key);
  auto s = values_.find(section);
  if (s == values_.end()) return std::nullopt;
  auto v = s->second.find(name);
  if (v == s->second.end()) return std::nullopt;
  return v->second;
}

void Config::set(const std::string& key, std::string value) {
  const auto [section, name] = split_key(key);
  values_[section][name] = trim(value);
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  for (const auto& [section, body] : values_) {
    for (const auto& [name, value] : body) out.push_back(section + "." + name);
  }
  return out;
}

std::set<std::string> Config::sections() const {
  std::set<std::string> out;
  for (const auto& [section, body] : values_) out.insert(section);
  return out;
}

std::string Config::to_ini() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, body] : values_) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    for (const auto& [name, value] : body) out << name << " = " << value << '\n';
  }
  return out.str();
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [section, body] : values_) {
    for (const auto& [name, value] : body) j[section][name] = value;
  }
  return j;
}

std::string Config::id() const {
  const std::uint64_t h = derive_seed(0, to_ini(), {}, 0);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  const double v = parse_number<double>(key, text, "a number");
  if (!std::isfinite(v)) throw ConfigError("config key '" + key + "': value must be finite");
  return v;
}

std::int64_t parse_int(const std::string& key, const std::string& text) {
  return parse_number<std::int64_t>(key, text, "an integer");
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  return parse_number<std::uint64_t>(key, text, "a nonnegative integer");
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const std::string& part : split_list(text)) out.push_back(parse_double(key, part));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const std::string& part : split_list(text)) {
    const std::int64_t v = parse_int(key, part);
    if (v < INT32_MIN || v > INT32_MAX) {
      throw ConfigError("config key '" + key + "': value out of range");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

ConfigBinder ConfigBinder::reader(const Config& source) { return ConfigBinder(&source); }
ConfigBinder ConfigBinder::writer() { return ConfigBinder(nullptr); }

std::optional<std::string> ConfigBinder::lookup(const std::string& key) {
  consumed_.insert(key);
  touched_sections_.insert(key.substr(0, key.find('.')));
  return source_->find(key);
}

void ConfigBinder::field(const std::string& key, double& v) {
  if (!reading()) return out_.set(key, format_number(v));
  if (auto t = lookup(key)) v = parse_double(key, *t);
}

void ConfigBinder::field(const std::string& key, int& v) {
  if (!reading()) return out_.set(key, std::to_string(v));
  if (auto t = lookup(key)) {
    const std::int64_t x = parse_int(key, *t);
    if (x < INT32_MIN || x > INT32_MAX) {
      throw ConfigError("config key '" + key + "': value out of range");
    }
    v = static_cast<int>(x);
  }
}

void ConfigBinder::field(const std::string& key, std::uint64_t& v) {
  if (!reading()) return out_.set(key, std::to_string(v));
  if (auto t = lookup(key)) v = parse_uint(key, *t);
}

void ConfigBinder::field(const std::string& key, bool& v) {
  if (!reading()) return out_.set(key, v ? "true" : "false");
  if (auto t = lookup(key)) v = parse_bool(key, *t);
}

void ConfigBinder::field(const std::string& key, std::string& v) {
  if (!reading()) return out_.set(key, v);
  if (auto t = lookup(key)) v = *t;
}

void ConfigBinder::field(const std::string& key, std::vector<double>& v) {
  if (!reading()) {
    std::string text;
    for (std::size_t i = 0; i < v.size(); ++i) text += (i ? ", " : "") + format_number(v[i]);
    return out_.set(key, text);
  }
  if (auto t = lookup(key)) v = parse_double_list(key, *t);
}

void ConfigBinder::field(const std::string& key, std::vector<int>& v) {
  if (!reading()) {
    std::string text;
    for (std::size_t i = 0; i < v.size(); ++i) text += (i ? ", " : "") + std::to_string(v[i]);
    return out_.set(key, text);
  }
  if (auto t = lookup(key)) v = parse_int_list(key, *t);
}

void ConfigBinder::finish(const std::set<std::string>& known) const {
  if (!reading()) return;
  for (const std::string& section : source_->sections()) {
    if (!known.count(section)) throw ConfigError("unknown config section [" + section + "]");
  }
  for (const std::string& key : source_->keys()) {
    const std::string section = key.substr(0, key.find('.'));
    if (touched_sections_.count(section) && !consumed_.count(key)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

const std::set<std::string>& known_sections() {
  static const std::set<std::string> sections = {
      "data", "model", "train", "attack", "run", "phase", "finetune", "freeze", "bounds"};
  return sections;
}

std::uint64_t resolve_seed(std::uint64_t configured, std::optional<std::uint64_t> override_seed) {
  if (override_seed) return *override_seed;
  if (const char* env = std::getenv("DPFL_SEED"); env != nullptr && *env != '\0') {
    return parse_uint("DPFL_SEED", env);
  }
  return configured;
}

}  // namespace dpfl
