// SPDX-License-Identifier: Apache-2.0
#include "ocvp/core/kv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ocvp::core {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_int_strict(const std::string& s, int64_t& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

bool parse_double_strict(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

bool looks_numeric(const std::string& s) {
  double d;
  return parse_double_strict(s, d);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void KvMap::set_int(const std::string& key, int64_t v) { set(key, std::to_string(v)); }
void KvMap::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void KvMap::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

std::optional<std::string> KvMap::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KvMap::get_string(const std::string& key, const std::string& fallback,
                              std::vector<std::string>*) const {
  auto v = get(key);
  return v ? *v : fallback;
}

int64_t KvMap::get_int(const std::string& key, int64_t fallback, std::vector<std::string>* errors) const {
  auto v = get(key);
  if (!v) return fallback;
  int64_t out;
  if (!parse_int_strict(*v, out)) {
    if (errors) errors->push_back(key + ": expected integer, got '" + *v + "'");
    return fallback;
  }
  return out;
}

double KvMap::get_double(const std::string& key, double fallback, std::vector<std::string>* errors) const {
  auto v = get(key);
  if (!v) return fallback;
  double out;
  if (!parse_double_strict(*v, out)) {
    if (errors) errors->push_back(key + ": expected number, got '" + *v + "'");
    return fallback;
  }
  return out;
}

bool KvMap::get_bool(const std::string& key, bool fallback, std::vector<std::string>* errors) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  if (errors) errors->push_back(key + ": expected bool, got '" + *v + "'");
  return fallback;
}

std::string KvMap::canonical_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : entries_) {
    std::string value = v;
    // numeric values are re-serialized so 0.50 and 0.5 hash identically
    if (looks_numeric(v)) {
      int64_t iv;
      if (parse_int_strict(v, iv)) {
        value = std::to_string(iv);
      } else {
        double dv;
        parse_double_strict(v, dv);
        value = format_double(dv);
      }
    }
    out << k << " = " << value << "\n";
  }
  return out.str();
}

KvMap parse_kv(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config parse: line " + std::to_string(lineno) + ": missing '='");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config parse: line " + std::to_string(lineno) + ": empty key");
    kv.set(key, value);
  }
  return kv;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config parse: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str());
}

}  // namespace ocvp::core
