#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "deisam/embedding_client.hpp"
#include "deisam/net.hpp"
#include "deisam/rulegen.hpp"

using namespace deisam;

namespace {

// Local HTTP server answering from a scripted list of status codes; the last
// entry repeats.
class ScriptedServer {
public:
    explicit ScriptedServer(std::vector<int> statuses, std::string body = "{}")
        : statuses_(std::move(statuses)), body_(std::move(body)) {
        server_.Post(".*", [this](const httplib::Request& req, httplib::Response& res) {
            const std::size_t i = hits_++;
            last_body_ = req.body;
            last_auth_ = req.get_header_value("Authorization");
            res.status = statuses_[std::min(i, statuses_.size() - 1)];
            res.set_content(body_, "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~ScriptedServer() {
        server_.stop();
        thread_.join();
    }

    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }
    std::size_t hits() const { return hits_; }
    std::string last_body() const { return last_body_; }
    std::string last_auth() const { return last_auth_; }

private:
    httplib::Server server_;
    std::vector<int> statuses_;
    std::string body_;
    std::atomic<std::size_t> hits_{0};
    std::string last_body_, last_auth_;
    int port_ = 0;
    std::thread thread_;
};

net::RetryPolicy fast(int retries) {
    net::RetryPolicy p;
    p.max_retries = retries;
    p.initial_backoff = std::chrono::milliseconds(1);
    return p;
}

}  // namespace

TEST(Net, OfflineScopeBlocksAndCounts) {
    EXPECT_FALSE(net::offline());
    {
        net::offline_scope off;
        EXPECT_TRUE(net::offline());
        const auto before = net::attempts();
        EXPECT_THROW(net::post_json("http://127.0.0.1:1/x", {}, "", std::chrono::seconds(1), fast(0)),
                     offline_violation);
        EXPECT_THROW(fetch_embeddings({"boat"}, EmbeddingServiceConfig{}), offline_violation);
        EXPECT_EQ(net::attempts(), before + 2);
    }
    EXPECT_FALSE(net::offline());
}

TEST(Net, OfflineViolationIsInternal) {
    net::offline_scope off;
    try {
        net::ensure_online("x");
        FAIL();
    } catch (const deisam::error& e) {
        EXPECT_EQ(e.cls(), error_class::internal);
    }
}

TEST(Net, SplitUrl) {
    EXPECT_EQ(net::split_url("https://api.example.com/v1/chat").origin, "https://api.example.com");
    EXPECT_EQ(net::split_url("https://api.example.com/v1/chat").path, "/v1/chat");
    EXPECT_EQ(net::split_url("http://h:80").path, "/");
    EXPECT_THROW(net::split_url("api.example.com"), input_error);
}

TEST(Net, BackoffDoublesAndCaps) {
    net::RetryPolicy p;
    EXPECT_EQ(p.delay(0).count(), 500);
    EXPECT_EQ(p.delay(1).count(), 1000);
    EXPECT_EQ(p.delay(2).count(), 2000);
    EXPECT_EQ(p.delay(10).count(), 8000);
}

TEST(Net, RetriesTransientFailures) {
    ScriptedServer s({503, 429, 200}, R"({"ok": true})");
    const auto res = net::post_json(s.url("/x"), {{"a", 1}}, "k", std::chrono::seconds(5), fast(3));
    EXPECT_TRUE(res["ok"].get<bool>());
    EXPECT_EQ(s.hits(), 3u);
    EXPECT_EQ(s.last_auth(), "Bearer k");
    EXPECT_EQ(nlohmann::json::parse(s.last_body())["a"], 1);
}

TEST(Net, GivesUpAfterMaxRetries) {
    ScriptedServer s({500});
    EXPECT_THROW(net::post_json(s.url("/x"), {}, "", std::chrono::seconds(5), fast(2)), service_error);
    EXPECT_EQ(s.hits(), 3u);
}

TEST(Net, RequestTimeoutStatus) {
    ScriptedServer s({408});
    EXPECT_THROW(net::post_json(s.url("/x"), {}, "", std::chrono::seconds(5), fast(1)), timeout_error);
}

TEST(Net, AuthFailureIsNotRetried) {
    ScriptedServer s({401});
    EXPECT_THROW(net::post_json(s.url("/x"), {}, "bad", std::chrono::seconds(5), fast(3)), auth_error);
    EXPECT_EQ(s.hits(), 1u);
}

TEST(Net, ClientErrorsAndBadBodies) {
    ScriptedServer bad_request({400});
    EXPECT_THROW(net::post_json(bad_request.url("/x"), {}, "", std::chrono::seconds(5), fast(3)), service_error);
    EXPECT_EQ(bad_request.hits(), 1u);
    ScriptedServer garbage({200}, "not json");
    EXPECT_THROW(net::post_json(garbage.url("/x"), {}, "", std::chrono::seconds(5), fast(0)), service_error);
}

TEST(Net, UnreachableEndpoint) {
    int port;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    EXPECT_THROW(net::post_json("http://127.0.0.1:" + std::to_string(port) + "/x", {}, "", std::chrono::seconds(1),
                                fast(1)),
                 service_error);
}

TEST(Net, MissingApiKey) {
    EXPECT_THROW(net::api_key_from_env("DEISAM_TEST_SURELY_UNSET_VAR"), auth_error);
    EXPECT_EQ(net::api_key_from_env(""), "");
}

TEST(Net, ChatClientAgainstLocalServer) {
    ScriptedServer s({200}, R"({"choices": [{"message": {"role": "assistant", "content": "target(X):-cond1(X)."}}]})");
    RulegenConfig cfg;
    cfg.endpoint_url = s.url("/v1/chat/completions");
    cfg.api_key_env_var = "";
    cfg.initial_backoff = std::chrono::milliseconds(1);
    HttpChatClient client(cfg);
    EXPECT_EQ(client.complete({{"user", "hi"}}), "target(X):-cond1(X).");
    const auto sent = nlohmann::json::parse(s.last_body());
    EXPECT_EQ(sent["model"], "gpt-3.5-turbo");
    EXPECT_EQ(sent["messages"][0]["content"], "hi");
}

TEST(Net, EmbeddingClientAgainstLocalServer) {
    ScriptedServer s({200}, R"({"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]})");
    EmbeddingServiceConfig cfg;
    cfg.endpoint_url = s.url("/v1/embeddings");
    cfg.api_key_env_var = "";
    const auto store = fetch_embeddings({"boat", "barge"}, cfg);
    EXPECT_EQ(store.at("boat"), (std::vector<double>{1, 0}));
    EXPECT_EQ(store.at("barge"), (std::vector<double>{0, 1}));

    ScriptedServer short_reply({200}, R"({"data": []})");
    cfg.endpoint_url = short_reply.url("/v1/embeddings");
    EXPECT_THROW(fetch_embeddings({"boat"}, cfg), service_error);
}
