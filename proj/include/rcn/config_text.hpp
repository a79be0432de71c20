#pragma once

#include <map>
#include <string>
#include <vector>

namespace rcn {

/// Flat key=value configuration; std::map keeps keys sorted, which makes
/// format_key_values canonical.
using KeyValues = std::map<std::string, std::string>;

/// Parses "key=value" lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed. `origin` names the
/// source in error messages.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "config");
KeyValues read_key_values_file(const std::string& path);
std::string format_key_values(const KeyValues& kv);

/// Typed lookups; a missing key returns the fallback, a malformed value throws
/// ConfigError naming the key.
int kv_int(const KeyValues& kv, const std::string& key, int fallback);
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

}  // namespace rcn
