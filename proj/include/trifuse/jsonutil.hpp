#pragma once

#include <charconv>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "trifuse/errors.hpp"

namespace trifuse {

using Json = nlohmann::json;

// Shortest round-trip representation; keeps written files byte-stable.
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Unknown keys are rejected so config typos fail loudly.
inline void check_keys(const Json& obj, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw UsageError("unknown key \"" + it.key() + "\" in " + where);
  }
}

Json read_json_file(const std::filesystem::path& path);

// Write-temp-then-rename so partially written artifacts are never observed.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

inline void write_json_atomic(const std::filesystem::path& path, const Json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace trifuse
