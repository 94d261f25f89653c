#include "toolcoach/external_policy.hpp"

#include <cstdlib>
#include <iostream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "toolcoach/errors.hpp"

namespace toolcoach {

using nlohmann::json;

namespace {

struct SplitUrl {
    std::string base;  // scheme://host[:port]
    std::string path;  // leading '/', never empty
};

SplitUrl split_url(const std::string& url) {
    const size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint url '" + url + "' has no scheme");
    }
    // This build ships without TLS; the client would be silently unusable.
    if (url.substr(0, scheme_end) != "http") {
        throw ConfigError("endpoint url '" + url + "' must use http (TLS is not compiled in)");
    }
    const size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

ExternalEndpoint endpoint_from_env(std::string model_id) {
    const char* url = std::getenv("ENDPOINT_URL");
    if (!url || !*url) {
        throw ConfigError("ENDPOINT_URL environment variable is not set");
    }
    ExternalEndpoint endpoint;
    endpoint.url = url;
    if (const char* key = std::getenv("API_KEY")) endpoint.api_key = key;
    endpoint.model_id = std::move(model_id);
    return endpoint;
}

ExternalChatPolicy::ExternalChatPolicy(ExternalEndpoint endpoint, SamplingParams sampling)
    : Policy("external:" + endpoint.model_id, sampling), endpoint_(std::move(endpoint)) {
    if (endpoint_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    split_url(endpoint_.url);  // validate eagerly
}

std::string ExternalChatPolicy::generate(const std::string& prompt, uint64_t) {
    const SplitUrl target = split_url(endpoint_.url);

    json request;
    request["model"] = endpoint_.model_id;
    request["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
    request["temperature"] = sampling_.temperature;
    request["max_tokens"] = sampling_.max_new_tokens;
    const std::string body = request.dump();

    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
    }

    std::string last_error;
    auto backoff = endpoint_.initial_backoff;
    for (int attempt = 1; attempt <= endpoint_.max_attempts; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Client client(target.base);
        client.set_read_timeout(60, 0);
        auto result = client.Post(target.path, headers, body, "application/json");
        if (!result) {
            last_error = "connection failure: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status < 200 || result->status >= 300) {
            last_error = "HTTP " + std::to_string(result->status);
            continue;
        }
        json response = json::parse(result->body, nullptr, false);
        if (response.is_discarded()) {
            last_error = "unparseable response body";
            continue;
        }
        try {
            return response.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            last_error = std::string("unexpected response shape: ") + e.what();
            continue;
        }
    }
    throw TransportError("chat completion failed after " + std::to_string(endpoint_.max_attempts) +
                         " attempts (" + last_error + ")");
}

}  // namespace toolcoach
