#pragma once

// Minimal "key = value" text format with optional [section] headers and '#'
// comments. Shared by device, architecture and test-vector files.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dynlat::kv {

struct Section {
  std::string name;  // empty for the implicit leading section
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;

  std::optional<std::string> find(std::string_view key) const;
  // Throws kParseError naming the section when the key is absent.
  const std::string& require(std::string_view key) const;
  bool has(std::string_view key) const { return find(key).has_value(); }
};

struct Document {
  Section preamble;
  std::vector<Section> sections;
};

Document parse(std::string_view text);
Document parse_file(const std::string& path);

std::int64_t to_int(std::string_view value, std::string_view what);
double to_double(std::string_view value, std::string_view what);
bool to_bool(std::string_view value, std::string_view what);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

}  // namespace dynlat::kv
