#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include "hwplan/errors.hpp"
#include "json.hpp"

namespace hwplan::detail {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
      throw InvalidArgument("unknown key '" + it.key() + "' in " + where);
    }
  }
}

}  // namespace hwplan::detail
