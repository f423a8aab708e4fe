#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "json.hpp"

#include "deisam/error.hpp"
#include "deisam/net.hpp"
#include "deisam/unifier.hpp"

namespace deisam {

struct EmbeddingServiceConfig {
    std::string endpoint_url = "https://api.openai.com/v1/embeddings";
    std::string model_name = "text-embedding-ada-002";
    std::string api_key_env_var = "OPENAI_API_KEY";
    int max_retries = 3;
    std::chrono::seconds timeout{30};
    std::chrono::milliseconds initial_backoff{500};
};

/// Embeds terms through an OpenAI-style embeddings endpoint:
/// {"model", "input": [terms]} -> {"data": [{"index", "embedding"}]}.
inline EmbeddingStore fetch_embeddings(const std::vector<std::string>& terms, const EmbeddingServiceConfig& cfg) {
    EmbeddingStore store;
    if (terms.empty()) return store;
    net::ensure_online("embedding service");
    const std::string key = net::api_key_from_env(cfg.api_key_env_var);
    net::RetryPolicy retry;
    retry.max_retries = cfg.max_retries;
    retry.initial_backoff = cfg.initial_backoff;
    const auto res = net::post_json(cfg.endpoint_url, {{"model", cfg.model_name}, {"input", terms}}, key,
                                    cfg.timeout, retry);
    try {
        const auto& data = res.at("data");
        if (data.size() != terms.size())
            throw service_error("embedding service returned " + std::to_string(data.size()) + " vectors for " +
                                std::to_string(terms.size()) + " terms");
        for (std::size_t i = 0; i < data.size(); ++i) {
            const std::size_t idx = data[i].value("index", i);
            if (idx >= terms.size()) throw service_error("embedding index out of range");
            store.add(terms[idx], data[i].at("embedding").get<std::vector<double>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw service_error(std::string("malformed embedding response: ") + e.what());
    }
    return store;
}

}  // namespace deisam
