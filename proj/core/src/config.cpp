#include "rflab/config.hpp"

#include <fstream>
#include <sstream>

#include "rflab/errors.hpp"

namespace rflab {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_string(buffer.str(), path);
}

ConfigMap ConfigMap::parse_string(const std::string& text,
                                  const std::string& origin) {
  ConfigMap cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": empty section name");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full))
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": duplicate key " + full);
    cfg.values_[full] = value;
    cfg.order_.push_back(full);
  }
  return cfg;
}

bool ConfigMap::has(const std::string& key) const {
  return values_.count(key) > 0;
}

const std::string& ConfigMap::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("config: missing key " + key + " (" + origin_ + ")");
  return it->second;
}

std::string ConfigMap::get_string(const std::string& key) const {
  return raw(key);
}

std::int64_t ConfigMap::get_int(const std::string& key) const {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(raw(key), &used);
    if (used != raw(key).size()) throw std::invalid_argument("junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " is not an integer: " + raw(key));
  }
}

std::uint64_t ConfigMap::get_u64(const std::string& key) const {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(raw(key), &used);
    if (used != raw(key).size()) throw std::invalid_argument("junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " is not an unsigned integer: " +
                      raw(key));
  }
}

double ConfigMap::get_double(const std::string& key) const {
  try {
    std::size_t used = 0;
    const double v = std::stod(raw(key), &used);
    if (used != raw(key).size()) throw std::invalid_argument("junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " is not a number: " + raw(key));
  }
}

bool ConfigMap::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: " + key + " is not a boolean: " + v);
}

std::vector<double> ConfigMap::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(raw(key));
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const std::string t = cell;
    try {
      out.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " has a non-numeric element: " + t);
    }
  }
  if (out.empty()) throw ConfigError("config: " + key + " is an empty list");
  return out;
}

std::vector<int> ConfigMap::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const double v : get_double_list(key)) {
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
      throw ConfigError("config: " + key + " has a non-integer element");
    out.push_back(i);
  }
  return out;
}

}  // namespace rflab
