#pragma once

#include <charconv>
#include <cstdlib>
#include <string>

#include <json.hpp>

namespace ndesteer::detail {

// JSON number holding the shortest decimal that round-trips the f32 value.
inline nlohmann::json f32_json(float v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return nlohmann::json(std::strtod(std::string(buf, res.ptr).c_str(), nullptr));
}

}  // namespace ndesteer::detail
