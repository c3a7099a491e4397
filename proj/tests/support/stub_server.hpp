#pragma once

#include <httplib.h>

#include <functional>
#include <string>
#include <thread>

namespace testing {

// Local HTTP server answering POST `path` with `handler`, for client tests.
class stub_server {
public:
    using handler_fn = std::function<void(const httplib::Request&, httplib::Response&)>;

    stub_server(const std::string& path, handler_fn handler) {
        server_.Post(path, [handler](const httplib::Request& req, httplib::Response& res) { handler(req, res); });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        url_ = "http://127.0.0.1:" + std::to_string(port_) + path;
    }
    ~stub_server() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    stub_server(const stub_server&) = delete;
    stub_server& operator=(const stub_server&) = delete;

    const std::string& url() const { return url_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::string url_;
};

}  // namespace testing
