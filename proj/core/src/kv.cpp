#include "dynlat/kv.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dynlat/error.hpp"

namespace dynlat::kv {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::optional<std::string> Section::find(std::string_view key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& Section::require(std::string_view key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  throw Error(ErrorCode::kParseError,
              "missing key '" + std::string(key) + "' in section '" + name + "' (line " +
                  std::to_string(line) + ")");
}

Document parse(std::string_view text) {
  Document doc;
  Section* current = &doc.preamble;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw Error(ErrorCode::kParseError, "unterminated section header at line " + std::to_string(line_no));
      }
      doc.sections.push_back(Section{std::string(trim(line.substr(1, line.size() - 2))), line_no, {}});
      current = &doc.sections.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kParseError, "expected 'key = value' at line " + std::to_string(line_no));
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::kParseError, "empty key at line " + std::to_string(line_no));
    current->entries.emplace_back(std::string(key), std::string(value));
  }
  return doc;
}

Document parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::int64_t to_int(std::string_view value, std::string_view what) {
  std::int64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::kParseError, std::string(what) + ": not an integer: '" + std::string(value) + "'");
  }
  return out;
}

double to_double(std::string_view value, std::string_view what) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::kParseError, std::string(what) + ": not a number: '" + std::string(value) + "'");
  }
  return out;
}

bool to_bool(std::string_view value, std::string_view what) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw Error(ErrorCode::kParseError, std::string(what) + ": not a boolean: '" + std::string(value) + "'");
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

}  // namespace dynlat::kv
