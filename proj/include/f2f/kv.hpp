#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "f2f/common.hpp"

// Flat key=value text files: one pair per line, '#' comments and blank lines
// allowed, keys namespaced by dotted prefixes (world., train., ...). Readers
// consume keys with take_*; whatever remains unconsumed is an unknown key and
// gets rejected, so config typos fail loudly.

namespace f2f::kv {

using Map = std::map<std::string, std::string>;

inline Map parse(std::istream& in, const std::string& origin) {
  Map m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos || line[a] == '#') continue;
    size_t eq = line.find('=', a);
    if (eq == std::string::npos)
      throw DataError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    size_t b = line.find_last_not_of(" \t\r");
    std::string key = line.substr(a, eq - a);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string val = line.substr(eq + 1, b - eq);
    size_t va = val.find_first_not_of(" \t");
    val = (va == std::string::npos) ? "" : val.substr(va);
    if (key.empty()) throw DataError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!m.emplace(key, val).second)
      throw DataError(origin + ": duplicate key '" + key + "'");
  }
  return m;
}

inline Map read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open: " + path);
  return parse(f, path);
}

inline void write_file(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& entries,
                       const std::string& header = "") {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  if (!header.empty()) f << "# " << header << "\n";
  for (const auto& [k, v] : entries) f << k << "=" << v << "\n";
  if (!f) throw DataError("short write: " + path);
}

inline bool has(const Map& m, const std::string& key) { return m.count(key) != 0; }

inline std::string take_str(Map& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw DataError("missing required key '" + key + "'");
  std::string v = it->second;
  m.erase(it);
  return v;
}

inline std::string take_str(Map& m, const std::string& key, const std::string& dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  std::string v = it->second;
  m.erase(it);
  return v;
}

inline int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw DataError("key '" + key + "': not an integer: '" + v + "'");
  }
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw DataError("key '" + key + "': not a number: '" + v + "'");
  }
}

inline int64_t take_int(Map& m, const std::string& key) { return parse_int(take_str(m, key), key); }
inline int64_t take_int(Map& m, const std::string& key, int64_t dflt) {
  return has(m, key) ? take_int(m, key) : dflt;
}
inline double take_double(Map& m, const std::string& key) {
  return parse_double(take_str(m, key), key);
}
inline double take_double(Map& m, const std::string& key, double dflt) {
  return has(m, key) ? take_double(m, key) : dflt;
}

inline bool take_bool(Map& m, const std::string& key, bool dflt) {
  if (!has(m, key)) return dflt;
  const std::string v = take_str(m, key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw DataError("key '" + key + "': not a boolean: '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<int>(parse_int(item, key)));
  return out;
}

inline std::vector<int> take_int_list(Map& m, const std::string& key,
                                      const std::vector<int>& dflt) {
  if (!has(m, key)) return dflt;
  return parse_int_list(take_str(m, key), key);
}

inline void reject_unknown(const Map& m, const std::string& origin) {
  if (m.empty()) return;
  std::string keys;
  for (const auto& [k, _] : m) keys += (keys.empty() ? "" : ", ") + k;
  throw DataError(origin + ": unknown key(s): " + keys);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace f2f::kv
