#include "ndesteer/diagnostics.hpp"

#include <cstdio>
#include <mutex>
#include <string>
#include <utility>

namespace ndesteer {

namespace {

std::mutex g_mutex;
WarningHandler g_handler;

}  // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(g_mutex);
    return std::exchange(g_handler, std::move(handler));
}

void warn(std::string_view message) {
    std::lock_guard lock(g_mutex);
    if (g_handler) {
        g_handler(message);
        return;
    }
    std::fprintf(stderr, "warning: %.*s\n", static_cast<int>(message.size()), message.data());
}

}  // namespace ndesteer
