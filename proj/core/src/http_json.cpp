#include "http_json.hpp"

#include <httplib.h>

#include "ndesteer/errors.hpp"

namespace ndesteer::detail {

namespace {

struct SplitUrl {
    std::string base;
    std::string path;
};

SplitUrl split_url(const std::string& endpoint) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos || endpoint.compare(0, scheme, "http") != 0) {
        throw NetworkError("endpoint must be an http:// URL: '" + endpoint + "'");
    }
    const auto slash = endpoint.find('/', scheme + 3);
    if (slash == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, slash), endpoint.substr(slash)};
}

}  // namespace

nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body,
                         std::chrono::milliseconds timeout) {
    const SplitUrl url = split_url(endpoint);
    httplib::Client client(url.base);
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout - sec);
    client.set_connection_timeout(sec.count(), usec.count());
    client.set_read_timeout(sec.count(), usec.count());
    client.set_write_timeout(sec.count(), usec.count());

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(url.path, body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        const auto elapsed = std::chrono::steady_clock::now() - start;
        if (err == httplib::Error::ConnectionTimeout ||
            (err == httplib::Error::Read && elapsed >= timeout * 9 / 10)) {
            throw TimeoutError("request to " + endpoint + " timed out after " +
                               std::to_string(timeout.count()) + " ms");
        }
        throw NetworkError("request to " + endpoint + " failed: " + httplib::to_string(err));
    }
    if (res->status != 200) {
        throw ProtocolError("request to " + endpoint + " returned status " + std::to_string(res->status));
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError("malformed JSON body from " + endpoint + ": " + e.what());
    }
}

}  // namespace ndesteer::detail
