#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace reconformer {

// Shortest round-trip decimal representation (std::to_chars).
std::string format_double(double v);

// Line-oriented "key = value" file. '#' starts a comment, blank lines are
// ignored, insertion order is preserved so echoed configs diff cleanly.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::string& path);
  static KeyValueConfig from_text(const std::string& text);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, long long v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  const std::string& get(const std::string& key) const;  // config error if absent
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  // Applies a "key=value" override string.
  void apply_override(const std::string& assignment);

  std::string serialize() const;
  void write_file(const std::string& path) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace reconformer
