#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace spackle {

// Flat UTF-8 key=value configuration. '#' starts a comment, blank lines are
// skipped, keys are snake_case. The ordered map keeps snapshots byte-stable.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_config_file(const std::filesystem::path& file);

// Writes `command=<command>` followed by the resolved keys in sorted order;
// the file is itself a valid config file, so a run can be replayed from it.
void write_config_snapshot(const std::filesystem::path& file, const std::string& command,
                           const KeyValues& resolved);

// typed accessors; all throw ConfigError with the key named
std::string get_string(const KeyValues& kv, const std::string& key);
std::int64_t get_int(const KeyValues& kv, const std::string& key);
double get_double(const KeyValues& kv, const std::string& key);
bool get_bool(const KeyValues& kv, const std::string& key);
std::uint64_t get_seed(const KeyValues& kv, const std::string& key);
std::vector<double> get_double_list(const KeyValues& kv, const std::string& key);
std::vector<std::string> get_string_list(const KeyValues& kv, const std::string& key);

}  // namespace spackle
