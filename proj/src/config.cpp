#include "cloze/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cloze/tensor.hpp"

namespace cloze {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void add_pair(KeyValues& kv, const std::string& item, const std::string& where) {
  const auto eq = item.find('=');
  if (eq == std::string::npos) throw ContractError("expected key=value, got '" + item + "'" + where);
  const std::string key = trim(item.substr(0, eq));
  if (key.empty()) throw ContractError("empty key in '" + item + "'" + where);
  kv.set(key, trim(item.substr(eq + 1)));
}

}  // namespace

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  read_[key] = true;
  return it == values_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  read_[key] = true;
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ContractError("setting " + key + " is not a number: '" + it->second + "'");
  }
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  read_[key] = true;
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ContractError("setting " + key + " is not a non-negative integer: '" + s + "'");
  return v;
}

std::size_t KeyValues::get_size(const std::string& key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  const std::string v = get_string(key, fallback ? "true" : "false");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError("setting " + key + " is not a boolean: '" + v + "'");
}

std::vector<std::string> KeyValues::unread() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    add_pair(kv, line, " (line " + std::to_string(lineno) + ")");
  }
  return kv;
}

KeyValues parse_key_values_inline(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string item;
  while (in >> item) add_pair(kv, item, "");
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

}  // namespace cloze
