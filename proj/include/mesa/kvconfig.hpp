#pragma once

// Flat "dotted.key = value" text documents. Lines starting with '#' are
// comments; keys are unique; order of first appearance is preserved so that
// serialization is byte-stable.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mesa {

class KvDoc {
 public:
  static KvDoc parse(std::string_view text);
  static KvDoc load(const std::string& path);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  void set(std::string key, std::string value);

  // Typed accessors; throw kInvalidConfig naming the key on parse failure.
  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  long long get_int(std::string_view key, long long fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  const std::vector<std::string>& keys() const { return order_; }
  std::string serialize() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
  std::vector<std::string> order_;
};

std::string format_real(double v);  // %.17g, shortest exact round trip

}  // namespace mesa
