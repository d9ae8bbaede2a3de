#pragma once

#include <optional>
#include <string>

#include "json.hpp"

namespace fbeval {

// Structural validation against a small JSON-Schema subset:
//   type (string or list of strings), properties, required, items, enum,
//   minimum, maximum, minItems, maxItems, anyOf, additionalProperties (bool).
// Returns a message describing the first violation, or nullopt when valid.
std::optional<std::string> validate_schema(const nlohmann::json& value, const nlohmann::json& schema,
                                           const std::string& path = "$");

}  // namespace fbeval
