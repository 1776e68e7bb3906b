#include "spackle/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "spackle/errors.hpp"

namespace spackle {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_config_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file: " + file.string());
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + text + "'");
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": duplicate key '" +
                        key + "'");
    }
  }
  return kv;
}

void write_config_snapshot(const std::filesystem::path& file, const std::string& command,
                           const KeyValues& resolved) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config snapshot: " + file.string());
  out << "command=" << command << "\n";
  for (const auto& [key, value] : resolved) {
    out << key << "=" << value << "\n";
  }
}

std::string get_string(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing required key '" + key + "'");
  return it->second;
}

std::int64_t get_int(const KeyValues& kv, const std::string& key) {
  const std::string v = get_string(kv, key);
  std::int64_t out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

double get_double(const KeyValues& kv, const std::string& key) {
  const std::string v = get_string(kv, key);
  double out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool get_bool(const KeyValues& kv, const std::string& key) {
  const std::string v = get_string(kv, key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::uint64_t get_seed(const KeyValues& kv, const std::string& key) {
  const std::string v = get_string(kv, key);
  std::uint64_t out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

std::vector<std::string> get_string_list(const KeyValues& kv, const std::string& key) {
  const std::string v = get_string(kv, key);
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("key '" + key + "': expected a comma-separated list");
  return out;
}

std::vector<double> get_double_list(const KeyValues& kv, const std::string& key) {
  std::vector<double> out;
  for (const std::string& item : get_string_list(kv, key)) {
    double value{};
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("key '" + key + "': expected numbers, got '" + item + "'");
    }
    out.push_back(value);
  }
  return out;
}

}  // namespace spackle
