#include "mesa/kvconfig.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mesa/errors.hpp"

namespace mesa {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

KvDoc KvDoc::parse(std::string_view text) {
  KvDoc doc;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::kInvalidConfig,
           "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      fail(ErrorKind::kInvalidConfig, "line " + std::to_string(line_no) + ": empty key");
    }
    if (doc.has(key)) fail(ErrorKind::kInvalidConfig, "duplicate key '" + key + "'");
    doc.set(std::move(key), std::move(value));
  }
  return doc;
}

KvDoc KvDoc::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool KvDoc::has(std::string_view key) const { return values_.find(key) != values_.end(); }

std::optional<std::string> KvDoc::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void KvDoc::set(std::string key, std::string value) {
  auto it = values_.find(key);
  if (it == values_.end()) {
    order_.push_back(key);
    values_.emplace(std::move(key), std::move(value));
  } else {
    it->second = std::move(value);
  }
}

std::string KvDoc::get_string(std::string_view key, std::string fallback) const {
  auto v = get(key);
  return v ? *v : std::move(fallback);
}

double KvDoc::get_double(std::string_view key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  errno = 0;
  char* end = nullptr;
  double out = std::strtod(v->c_str(), &end);
  if (end == v->c_str() || *end != '\0' || errno == ERANGE) {
    fail(ErrorKind::kInvalidConfig, "key '" + std::string(key) + "': not a real number: '" + *v + "'");
  }
  return out;
}

long long KvDoc::get_int(std::string_view key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  errno = 0;
  char* end = nullptr;
  long long out = std::strtoll(v->c_str(), &end, 10);
  if (end == v->c_str() || *end != '\0' || errno == ERANGE) {
    fail(ErrorKind::kInvalidConfig, "key '" + std::string(key) + "': not an integer: '" + *v + "'");
  }
  return out;
}

bool KvDoc::get_bool(std::string_view key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  fail(ErrorKind::kInvalidConfig, "key '" + std::string(key) + "': not a boolean: '" + *v + "'");
}

std::string KvDoc::serialize() const {
  std::string out;
  for (const auto& k : order_) {
    out += k;
    out += " = ";
    out += values_.at(k);
    out += '\n';
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace mesa
