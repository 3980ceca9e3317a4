#pragma once

// Config files are either JSON or a flat TOML subset:
//
//   # comment
//   seed = 7
//   [pipeline]
//   na_column_threshold = 0.30
//   tukey_columns = ["screen_minutes", "steps_total"]
//
// Supported values: quoted strings, integers, floats, booleans and single-line
// arrays of those. Section headers and dotted keys nest. Both formats load
// into the same nlohmann::json tree.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "somnus/error.hpp"

namespace somnus {

using json = nlohmann::json;

namespace config_detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

inline std::vector<std::string> split_path(std::string_view key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    auto part = trim(key.substr(start, dot == std::string_view::npos ? key.size() - start : dot - start));
    if (part.empty()) throw Error(Errc::kInvalidConfig, "empty key segment", std::string(key));
    parts.emplace_back(part);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

inline json parse_scalar(std::string_view text, int line_no) {
  text = trim(text);
  auto fail = [&] {
    return Error(Errc::kInvalidConfig, "cannot parse value on line " + std::to_string(line_no),
                 std::string(text));
  };
  if (text.empty()) throw fail();
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') throw fail();
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) {
        ++i;
        out.push_back(text[i] == 'n' ? '\n' : text[i]);
      } else {
        out.push_back(text[i]);
      }
    }
    return out;
  }
  if (text == "true") return true;
  if (text == "false") return false;
  const bool looks_float = text.find_first_of(".eE") != std::string_view::npos;
  if (!looks_float) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec == std::errc() && ptr == text.data() + text.size()) return v;
  }
  double d = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), d);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw fail();
  return d;
}

inline json parse_value(std::string_view text, int line_no) {
  text = trim(text);
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') {
      throw Error(Errc::kInvalidConfig, "unterminated array on line " + std::to_string(line_no));
    }
    json arr = json::array();
    auto body = text.substr(1, text.size() - 2);
    std::string current;
    bool in_string = false;
    for (char c : body) {
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        if (!trim(current).empty()) arr.push_back(parse_scalar(current, line_no));
        current.clear();
      } else {
        current.push_back(c);
      }
    }
    if (!trim(current).empty()) arr.push_back(parse_scalar(current, line_no));
    return arr;
  }
  return parse_scalar(text, line_no);
}

}  // namespace config_detail

inline json parse_flat_toml(std::string_view text) {
  using namespace config_detail;
  json root = json::object();
  std::vector<std::string> section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto stripped = strip_comment(raw);
    auto line = trim(stripped);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw Error(Errc::kInvalidConfig, "bad section header on line " + std::to_string(line_no));
      }
      section = split_path(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::kInvalidConfig, "expected key = value on line " + std::to_string(line_no));
    }
    auto path = section;
    for (auto& p : split_path(line.substr(0, eq))) path.push_back(std::move(p));
    json* node = &root;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      node = &(*node)[path[i]];
      if (!node->is_null() && !node->is_object()) {
        throw Error(Errc::kInvalidConfig, "key used as both table and value", path[i]);
      }
    }
    (*node)[path.back()] = parse_value(line.substr(eq + 1), line_no);
  }
  return root;
}

inline json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIo, "cannot open config file", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return json::parse(buffer.str());
    } catch (const json::exception& e) {
      throw Error(Errc::kInvalidConfig, e.what(), path.string());
    }
  }
  return parse_flat_toml(buffer.str());
}

// Section lookup that treats a missing section as empty.
inline const json& config_section(const json& root, const std::string& name) {
  static const json kEmpty = json::object();
  if (!root.is_object()) return kEmpty;
  auto it = root.find(name);
  if (it == root.end()) return kEmpty;
  if (!it->is_object()) throw Error(Errc::kInvalidConfig, "section is not a table", name);
  return *it;
}

// Rejects keys not listed in `allowed`.
inline void expect_known_keys(const json& section, std::initializer_list<std::string_view> allowed,
                              std::string_view where) {
  if (!section.is_object()) return;
  for (auto it = section.begin(); it != section.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw Error(Errc::kInvalidConfig, "unknown key in [" + std::string(where) + "]", it.key());
    }
  }
}

template <typename T>
T config_value(const json& section, const std::string& key, T fallback) {
  auto it = section.find(key);
  if (it == section.end()) return fallback;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (it->is_number() && it->template get<double>() < 0) {
      throw Error(Errc::kInvalidConfig, "value must be non-negative", key);
    }
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::kInvalidConfig, "wrong type for key", key);
  }
}

}  // namespace somnus
