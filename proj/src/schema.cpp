#include "fbeval/schema.hpp"

#include <cmath>

namespace fbeval {

namespace {

bool has_type(const nlohmann::json& value, const std::string& type) {
    if (type == "object") return value.is_object();
    if (type == "array") return value.is_array();
    if (type == "string") return value.is_string();
    if (type == "boolean") return value.is_boolean();
    if (type == "null") return value.is_null();
    if (type == "number") return value.is_number();
    if (type == "integer") {
        if (value.is_number_integer()) return true;
        if (value.is_number_float()) {
            const double d = value.get<double>();
            return std::isfinite(d) && std::floor(d) == d;
        }
        return false;
    }
    return false;
}

}  // namespace

std::optional<std::string> validate_schema(const nlohmann::json& value, const nlohmann::json& schema,
                                           const std::string& path) {
    if (!schema.is_object()) return std::nullopt;

    if (auto it = schema.find("anyOf"); it != schema.end()) {
        std::string reasons;
        for (const auto& option : *it) {
            auto err = validate_schema(value, option, path);
            if (!err) return std::nullopt;
            if (!reasons.empty()) reasons += "; ";
            reasons += *err;
        }
        return path + ": matches no alternative (" + reasons + ")";
    }

    if (auto it = schema.find("type"); it != schema.end()) {
        bool ok = false;
        if (it->is_string()) {
            ok = has_type(value, it->get<std::string>());
        } else {
            for (const auto& t : *it) ok = ok || has_type(value, t.get<std::string>());
        }
        if (!ok) return path + ": expected type " + it->dump() + ", got " + value.type_name();
    }

    if (auto it = schema.find("enum"); it != schema.end()) {
        bool found = false;
        for (const auto& allowed : *it) found = found || allowed == value;
        if (!found) return path + ": value " + value.dump() + " not in " + it->dump();
    }

    if (value.is_number()) {
        const double d = value.get<double>();
        if (auto it = schema.find("minimum"); it != schema.end() && d < it->get<double>()) {
            return path + ": " + value.dump() + " is below minimum " + it->dump();
        }
        if (auto it = schema.find("maximum"); it != schema.end() && d > it->get<double>()) {
            return path + ": " + value.dump() + " is above maximum " + it->dump();
        }
    }

    if (value.is_object()) {
        if (auto it = schema.find("required"); it != schema.end()) {
            for (const auto& key : *it) {
                if (!value.contains(key.get<std::string>())) {
                    return path + ": missing required key '" + key.get<std::string>() + "'";
                }
            }
        }
        const auto props = schema.find("properties");
        if (props != schema.end()) {
            for (const auto& [key, sub] : props->items()) {
                if (auto v = value.find(key); v != value.end()) {
                    if (auto err = validate_schema(*v, sub, path + "." + key)) return err;
                }
            }
        }
        if (auto it = schema.find("additionalProperties"); it != schema.end() && it->is_boolean() && !it->get<bool>()) {
            for (const auto& [key, _] : value.items()) {
                if (props == schema.end() || !props->contains(key)) {
                    return path + ": unexpected key '" + key + "'";
                }
            }
        }
    }

    if (value.is_array()) {
        if (auto it = schema.find("minItems"); it != schema.end() && value.size() < it->get<std::size_t>()) {
            return path + ": expected at least " + it->dump() + " items";
        }
        if (auto it = schema.find("maxItems"); it != schema.end() && value.size() > it->get<std::size_t>()) {
            return path + ": expected at most " + it->dump() + " items";
        }
        if (auto it = schema.find("items"); it != schema.end()) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                if (auto err = validate_schema(value[i], *it, path + "[" + std::to_string(i) + "]")) return err;
            }
        }
    }
    return std::nullopt;
}

}  // namespace fbeval
