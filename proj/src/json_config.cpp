#include "tinyfit/json_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace tinyfit {

nlohmann::json parse_json_config(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t end = std::min(text.size(), e.byte == 0 ? std::size_t{0} : e.byte - 1);
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(end), '\n');
    throw Error(Errc::BadConfig, "config parse error at line " + std::to_string(line) + ": " + e.what(),
                {{"line", std::to_string(line)}});
  }
}

nlohmann::json load_json_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open config " + path, {{"path", path}});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_config(ss.str());
}

void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> known,
                         const std::string& where) {
  if (!obj.is_object()) throw Error(Errc::BadConfig, "expected an object at " + (where.empty() ? "top level" : where));
  for (const auto& [k, v] : obj.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw Error(Errc::BadConfig, "unknown config key " + where + k, {{"key", where + k}});
}

}  // namespace tinyfit
