#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rflab {

/// Flat key = value configuration text with [section] headers, full-line
/// # or ; comments, and comma-separated lists. Keys are addressed as
/// "section.key".
class ConfigMap {
public:
  static ConfigMap parse_file(const std::string& path);
  static ConfigMap parse_string(const std::string& text,
                                const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  /// All "section.key" entries, in file order.
  const std::vector<std::string>& keys() const { return order_; }

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::string origin_;

  const std::string& raw(const std::string& key) const;
};

}  // namespace rflab
