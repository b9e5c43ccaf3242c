#include "ciper/config.hpp"

#include "ciper/common.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ciper {

namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int precision = 1; precision <= 17; ++precision) {
    char trial[40];
    std::snprintf(trial, sizeof trial, "%.*g", precision, v);
    if (std::strtod(trial, nullptr) == v) return trial;
  }
  return buf;
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto comment = raw.find_first_of("#;");
    const std::string line = trim(std::string_view(raw).substr(0, comment));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(full)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + full);
    cfg.entries_[full] = trim(std::string_view(line).substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::optional<std::string> Config::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void Config::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

void Config::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v->c_str(), &end);
  if (end == v->c_str() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": '" + *v + "' is not a number");
  return d;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  char* end = nullptr;
  errno = 0;
  const long long i = std::strtoll(v->c_str(), &end, 10);
  if (end == v->c_str() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": '" + *v + "' is not an integer");
  return i;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(key + ": '" + *v + "' is not a boolean");
}

std::vector<int> Config::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<int> out;
  for (const auto& item : split(*v, ',')) {
    char* end = nullptr;
    const long i = std::strtol(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0') throw ConfigError(key + ": '" + item + "' is not an integer");
    out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key, const std::vector<double>& fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : split(*v, ',')) {
    char* end = nullptr;
    const double d = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') throw ConfigError(key + ": '" + item + "' is not a number");
    out.push_back(d);
  }
  return out;
}

std::vector<std::string> Config::get_string_list(const std::string& key,
                                                 const std::vector<std::string>& fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  return split(*v, ',');
}

void Config::require_known(const std::vector<std::string>& known) const {
  for (const auto& [key, value] : entries_)
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
}

std::string Config::dump() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, value] : entries_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      sections[""].emplace_back(key, value);
    } else {
      sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), value);
    }
  }
  std::string out;
  for (const auto& [section, items] : sections) {
    if (!section.empty()) {
      if (!out.empty()) out += "\n";
      out += "[" + section + "]\n";
    }
    for (const auto& [k, v] : items) out += k + " = " + v + "\n";
  }
  return out;
}

}  // namespace ciper
