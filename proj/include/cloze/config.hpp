#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cloze {

/// key=value settings. Files hold one pair per line; `#` starts a comment.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Keys that were never read through a getter; used to reject typos.
  std::vector<std::string> unread() const;
  const std::map<std::string, std::string>& all() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> read_;
};

KeyValues parse_key_values(const std::string& text);
/// Whitespace-separated pairs on one line.
KeyValues parse_key_values_inline(const std::string& text);
KeyValues load_key_values(const std::string& path);

}  // namespace cloze
