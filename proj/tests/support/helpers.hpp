#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "toolcoach/agent.hpp"
#include "toolcoach/policy.hpp"
#include "toolcoach/rng.hpp"
#include "toolcoach/trace.hpp"

namespace toolcoach::testing {

/// Test double that records every prompt passed to generate.
class RecordingPolicy : public Policy {
public:
    explicit RecordingPolicy(std::shared_ptr<Policy> inner)
        : Policy("recording:" + inner->backend_id(), inner->sampling()), inner_(std::move(inner)) {}

    bool trainable() const override { return inner_->trainable(); }

    std::string generate(const std::string& prompt, uint64_t seed) override {
        prompts.push_back(prompt);
        return inner_->generate(prompt, seed);
    }

    std::vector<std::string> prompts;

private:
    std::shared_ptr<Policy> inner_;
};

/// Central finite differences of an objective at the policy's current
/// parameters. Evaluates once first so every context row is materialized.
inline std::vector<double> finite_difference_grad(TinyPolicy& policy, const Objective& objective,
                                                  double h = 1e-5) {
    policy.eval_objective(objective);
    const std::vector<double> params = policy.flat_params();
    std::vector<double> grad(params.size(), 0.0);
    for (size_t k = 0; k < params.size(); ++k) {
        std::vector<double> bumped = params;
        bumped[k] = params[k] + h;
        policy.set_flat_params(bumped);
        const double plus = policy.eval_objective(objective);
        bumped[k] = params[k] - h;
        policy.set_flat_params(bumped);
        const double minus = policy.eval_objective(objective);
        grad[k] = (plus - minus) / (2.0 * h);
    }
    policy.set_flat_params(params);
    return grad;
}

/// max_k |a_k - b_k| / max(1e-8, |a_k|, |b_k|); ignores entries where both
/// sides are tiny.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (size_t k = 0; k < a.size(); ++k) {
        const double scale = std::max({1e-8, std::fabs(a[k]), std::fabs(b[k])});
        if (std::fabs(a[k]) < 1e-10 && std::fabs(b[k]) < 1e-10) continue;
        worst = std::max(worst, std::fabs(a[k] - b[k]) / scale);
    }
    return worst;
}

/// Registry with one echo tool; enough for toy episodes.
inline ToolRegistry make_toy_registry() {
    ToolRegistry registry;
    ToolSpec spec;
    spec.name = "lookup";
    spec.description = "Look up a key.";
    spec.args = {{"key", ToolArg::Type::string, "the key", true}};
    registry.register_tool(spec, [](const ToolArgs& args) { return "ok:" + args.get_string("key"); });
    return registry;
}

inline std::string random_text(std::mt19937_64& rng, size_t max_len) {
    static const std::string alphabet =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,;:!?'\"()[]{}<>-_/\\\n\t";
    std::uniform_int_distribution<size_t> len_dist(0, max_len);
    std::uniform_int_distribution<size_t> char_dist(0, alphabet.size() - 1);
    std::string out;
    const size_t len = len_dist(rng);
    for (size_t i = 0; i < len; ++i) out += alphabet[char_dist(rng)];
    return out;
}

/// A structurally valid random trace: parsed fields derive from the raw
/// completion, tool outputs exist iff tool code does, and only the last
/// turn may answer.
inline Trace make_random_trace(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> turn_count(1, 4);
    std::uniform_int_distribution<int> coin(0, 1);

    Trace trace;
    trace.query_id = "q" + std::to_string(rng() % 100000);
    trace.query = "query " + std::to_string(rng() % 1000);
    const int turns = turn_count(rng);
    for (int t = 0; t < turns; ++t) {
        Turn turn;
        turn.prompt_for_model = "PROMPT " + std::to_string(t) + "\n" + random_text(rng, 80);
        const bool last = t == turns - 1;
        if (last && coin(rng)) {
            turn.model_completion = "FINAL: answer " + std::to_string(rng() % 1000);
        } else {
            // A thought plus a tool call; the fenced block keeps markers out
            // of the free text.
            turn.model_completion = "step " + std::to_string(t) + "\n```\nlookup(key=\"k" +
                                    std::to_string(rng() % 100) + "\")\n```";
        }
        turn.parsed_completion = parse_completion(turn.model_completion);
        if (turn.parsed_completion.tool_code) {
            turn.tool_output = "out " + std::to_string(rng() % 1000);
        }
        trace.turns.push_back(std::move(turn));
    }
    trace.terminated = trace.turns.back().parsed_completion.final_answer
                           ? Trace::Terminated::answered
                           : Trace::Terminated::max_turns;
    return trace;
}

}  // namespace toolcoach::testing
