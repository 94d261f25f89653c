#pragma once

#include <chrono>
#include <string>

#include "toolcoach/policy.hpp"

namespace toolcoach {

/// Connection settings for a chat-completion HTTP endpoint.
struct ExternalEndpoint {
    std::string url;  // full URL including path, e.g. http://host:8080/v1/chat/completions
    std::string api_key;
    std::string model_id;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};  // doubled per retry
};

/// Build an endpoint from ENDPOINT_URL and API_KEY environment variables.
/// @throws ConfigError when ENDPOINT_URL is unset.
ExternalEndpoint endpoint_from_env(std::string model_id);

/**
 * Client for an external chat-completion API (teacher, judge or generator
 * models). Request: model id, message list, temperature, max tokens.
 * Response: the assistant message text.
 *
 * Generate-only: scoring and updates raise CapabilityError. Transport and
 * HTTP failures surface as TransportError after bounded retries.
 */
class ExternalChatPolicy : public Policy {
public:
    explicit ExternalChatPolicy(ExternalEndpoint endpoint, SamplingParams sampling = {});

    bool trainable() const override { return false; }
    std::string generate(const std::string& prompt, uint64_t seed) override;

    const ExternalEndpoint& endpoint() const { return endpoint_; }

private:
    ExternalEndpoint endpoint_;
};

}  // namespace toolcoach
