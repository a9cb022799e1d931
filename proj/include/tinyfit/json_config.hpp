#pragma once

#include <string>

#include <json.hpp>

namespace tinyfit {

/// Parse a JSON document; syntax errors raise Errc::BadConfig with the
/// 1-based line in details["line"].
nlohmann::json parse_json_config(const std::string& text);
nlohmann::json load_json_config(const std::string& path);

/// Throws BadConfig naming the first key of `obj` not listed in `known`.
void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> known,
                         const std::string& where = "");

/// Assigns obj[key] to out when present; a type mismatch raises BadConfig.
template <class T>
void read_config_key(const nlohmann::json& obj, std::string_view key, T& out, const std::string& where = "");

}  // namespace tinyfit

#include "tinyfit/error.hpp"

namespace tinyfit {

template <class T>
void read_config_key(const nlohmann::json& obj, std::string_view key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    const std::string name = where + std::string(key);
    throw Error(Errc::BadConfig, "wrong type for config key " + name, {{"key", name}});
  }
}

}  // namespace tinyfit
