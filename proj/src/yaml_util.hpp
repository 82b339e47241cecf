#pragma once

#include <yaml-cpp/yaml.h>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scriptdrive::detail {

// Strict accessors for the structured-text files: unknown keys and
// wrong scalar types are reported with the file origin and line.

inline std::string where(const std::string& origin, const YAML::Node& node) {
  const YAML::Mark mark = node.Mark();
  if (mark.is_null()) {
    return origin;
  }
  return origin + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
}

template <typename Error>
void require_map(const YAML::Node& node, const std::string& origin, std::string_view what) {
  if (!node || !node.IsMap()) {
    throw Error(where(origin, node) + ": " + std::string(what) + " must be a mapping");
  }
}

template <typename Error>
void reject_unknown_keys(const YAML::Node& node, const std::string& origin,
                         std::initializer_list<std::string_view> allowed) {
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool known = false;
    for (auto a : allowed) {
      known = known || key == a;
    }
    if (!known) {
      throw Error(where(origin, kv.first) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T, typename Error>
T get(const YAML::Node& parent, const char* key, const std::string& origin) {
  const YAML::Node node = parent[key];
  if (!node) {
    throw Error(where(origin, parent) + ": missing key '" + key + "'");
  }
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw Error(where(origin, node) + ": invalid value for '" + key + "'");
  }
}

template <typename T, typename Error>
T get_or(const YAML::Node& parent, const char* key, T fallback, const std::string& origin) {
  if (!parent[key]) {
    return fallback;
  }
  return get<T, Error>(parent, key, origin);
}

}  // namespace scriptdrive::detail
