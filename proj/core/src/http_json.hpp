#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

namespace ndesteer::detail {

// Blocking JSON POST. Returns the parsed body of a 200 response.
nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body,
                         std::chrono::milliseconds timeout);

}  // namespace ndesteer::detail
