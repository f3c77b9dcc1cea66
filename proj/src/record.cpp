#include "aqm/record.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace aqm {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void ResultRecord::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos) throw std::invalid_argument("bad record key");
  if (value.find('\n') != std::string::npos) throw std::invalid_argument("record values are single-line");
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
  if (it != entries_.end())
    it->second = value;
  else
    entries_.emplace_back(key, value);
}

void ResultRecord::set(const std::string& key, double value) { set(key, format_number(value)); }
void ResultRecord::set(const std::string& key, int value) { set(key, std::to_string(value)); }
void ResultRecord::set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
void ResultRecord::set(const std::string& key, std::optional<double> value) {
  set(key, value ? format_number(*value) : std::string("none"));
}

std::optional<std::string> ResultRecord::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

void ResultRecord::merge(const ResultRecord& other, const std::string& prefix) {
  for (const auto& [k, v] : other.entries_) set(prefix + k, v);
}

void ResultRecord::write(std::ostream& os) const {
  for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
}

std::string ResultRecord::str() const {
  std::ostringstream os;
  write(os);
  return os.str();
}

}  // namespace aqm
