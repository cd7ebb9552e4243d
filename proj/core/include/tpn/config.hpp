#pragma once

// Flat "key = value" configuration files. '#' starts a comment, blank lines
// are ignored, keys may contain letters, digits, '_', '-' and '.', and values
// may be wrapped in double quotes.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace tpn {

struct ConfigFile {
  std::map<std::string, std::string> values;
  std::string source;  // for error messages

  bool has(const std::string& key) const { return values.count(key) != 0; }
};

// Throws FormatError on malformed lines, duplicate keys or invalid UTF-8.
ConfigFile parse_config(std::string_view text, const std::string& source = "<config>");
ConfigFile load_config(const std::filesystem::path& path);

}  // namespace tpn
