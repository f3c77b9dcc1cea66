#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace aqm {

/// Flat key=value document. Keys keep insertion order; setting an existing
/// key overwrites it in place.
class ResultRecord {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, int value);
  void set(const std::string& key, bool value);
  void set(const std::string& key, std::optional<double> value);

  std::optional<std::string> get(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  /// Appends every entry of `other` under `prefix`.
  void merge(const ResultRecord& other, const std::string& prefix = "");
  void write(std::ostream& os) const;
  std::string str() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_number(double v);

}  // namespace aqm
