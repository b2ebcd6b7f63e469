#include "reconformer/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "reconformer/errors.hpp"

namespace reconformer {

namespace {

const char* const kWhere = "cli::config";

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, kWhere, "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

KeyValueConfig KeyValueConfig::from_text(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    std::size_t eq = stripped.find('=');
    require(eq != std::string::npos, ErrorKind::Config, kWhere,
            "line " + std::to_string(lineno) + " is not 'key = value': " + stripped);
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    require(!key.empty(), ErrorKind::Config, kWhere,
            "empty key at line " + std::to_string(lineno));
    cfg.set(key, value);
  }
  return cfg;
}

bool KeyValueConfig::has(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void KeyValueConfig::set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
void KeyValueConfig::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void KeyValueConfig::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

const std::string& KeyValueConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  fail(ErrorKind::Config, kWhere, "missing required key '" + key + "'");
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  try {
    return std::stoll(get(key));
  } catch (const std::exception&) {
    fail(ErrorKind::Config, kWhere, "key '" + key + "' is not an integer: " + get(key));
  }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    fail(ErrorKind::Config, kWhere, "key '" + key + "' is not an unsigned integer: " + get(key));
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    fail(ErrorKind::Config, kWhere, "key '" + key + "' is not a number: " + get(key));
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::Config, kWhere, "key '" + key + "' is not a boolean: " + v);
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    std::string t = trim(item);
    if (t.empty()) continue;
    try {
      out.push_back(std::stoi(t));
    } catch (const std::exception&) {
      fail(ErrorKind::Config, kWhere, "key '" + key + "' has a non-integer entry: " + t);
    }
  }
  return out;
}

void KeyValueConfig::apply_override(const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::Usage, kWhere,
          "override must be key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string KeyValueConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : entries_) out << k << " = " << v << "\n";
  return out.str();
}

void KeyValueConfig::write_file(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::Io, kWhere, "cannot write '" + path + "'");
  out << serialize();
  require(out.good(), ErrorKind::Io, kWhere, "write failed for '" + path + "'");
}

}  // namespace reconformer
