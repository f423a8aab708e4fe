#pragma once

// Process-wide offline switch and the small HTTP layer shared by the chat
// and embedding clients. Every network operation in the library passes
// through ensure_online(), so arming offline mode makes any attempt throw.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>

#ifdef DEISAM_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"
#include "json.hpp"

#include "deisam/error.hpp"

namespace deisam::net {

namespace detail {
inline std::atomic<bool>& offline_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}
inline std::atomic<std::size_t>& attempt_counter() {
    static std::atomic<std::size_t> n{0};
    return n;
}
}  // namespace detail

inline void set_offline(bool on) { detail::offline_flag().store(on); }
inline bool offline() { return detail::offline_flag().load(); }

/// Number of network operations attempted so far, blocked ones included.
inline std::size_t attempts() { return detail::attempt_counter().load(); }

inline void ensure_online(const std::string& what) {
    detail::attempt_counter().fetch_add(1);
    if (offline()) throw offline_violation("network access (" + what + ") attempted in offline mode");
}

/// Arms offline mode for the lifetime of the object.
class offline_scope {
public:
    offline_scope() : previous_(offline()) { set_offline(true); }
    ~offline_scope() { set_offline(previous_); }
    offline_scope(const offline_scope&) = delete;
    offline_scope& operator=(const offline_scope&) = delete;

private:
    bool previous_;
};

struct Url {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline Url split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw input_error("endpoint URL needs a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{8000};

    std::chrono::milliseconds delay(int attempt) const {
        double ms = static_cast<double>(initial_backoff.count());
        for (int i = 0; i < attempt; ++i) ms *= multiplier;
        ms = std::min(ms, static_cast<double>(max_backoff.count()));
        return std::chrono::milliseconds(static_cast<long long>(ms));
    }
};

inline std::string api_key_from_env(const std::string& var) {
    if (var.empty()) return {};
    const char* v = std::getenv(var.c_str());
    if (!v || !*v) throw auth_error("environment variable " + var + " is not set");
    return v;
}

/// POSTs JSON with retries on transport failures, 408, 429 and 5xx.
inline nlohmann::json post_json(const std::string& url, const nlohmann::json& body, const std::string& api_key,
                                std::chrono::seconds timeout, const RetryPolicy& retry) {
    const Url u = split_url(url);
    std::string last_error;
    bool timed_out = false;
    for (int attempt = 0; attempt <= retry.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(retry.delay(attempt - 1));
        ensure_online("POST " + url);
        httplib::Client client(u.origin);
        if (!client.is_valid()) throw service_error("unsupported endpoint '" + u.origin + "'");
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(u.path, headers, body.dump(), "application/json");
        if (!res) {
            timed_out = res.error() == httplib::Error::ConnectionTimeout || res.error() == httplib::Error::Read;
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403)
            throw auth_error("endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
        if (res->status == 408 || res->status == 429 || res->status >= 500) {
            timed_out = res->status == 408;
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300)
            throw service_error("HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw service_error(std::string("malformed response body: ") + e.what());
        }
    }
    const std::string msg = "request to " + url + " failed after " + std::to_string(retry.max_retries + 1) +
                            " attempts: " + last_error;
    if (timed_out) throw timeout_error(msg);
    throw service_error(msg);
}

}  // namespace deisam::net
