#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "toolcoach/autodiff.hpp"

namespace toolcoach {

struct SamplingParams {
    double temperature = 1.0;
    int max_new_tokens = 256;
    uint64_t seed = 0;
};

/// Per-token log-probabilities of a completion under a policy.
/// mask is true exactly on trainable completion tokens.
struct TokenScore {
    std::vector<int> token_ids;
    std::vector<double> logprobs;  // nats, finite, <= 0
    std::vector<bool> mask;

    size_t masked_count() const;
    double masked_sum() const;
};

/// Differentiable scoring interface handed to objectives at evaluation
/// time. token_logprobs returns one Var per *masked* completion token.
class DiffScorer {
public:
    virtual ~DiffScorer() = default;
    virtual std::vector<diff::Var> token_logprobs(const std::string& prompt,
                                                  const std::string& completion) = 0;
};

/// A differentiable scalar: built against the updating policy's parameters
/// when it is evaluated, so one objective can be re-evaluated at perturbed
/// parameters (finite differences) or stepped (gradient descent).
using Objective = std::function<diff::Var(diff::Tape&, DiffScorer&)>;

/**
 * Abstract policy: generate, score, snapshot, update.
 *
 * generate and score_completion are safe for concurrent callers;
 * apply_update requires exclusive access. Snapshots are immutable.
 */
class Policy {
public:
    virtual ~Policy() = default;

    const std::string& backend_id() const { return backend_id_; }
    const SamplingParams& sampling() const { return sampling_; }
    void set_temperature(double t) { sampling_.temperature = t; }
    void set_seed(uint64_t seed) { sampling_.seed = seed; }

    virtual bool trainable() const = 0;

    /// Produce a completion for `prompt`. `seed` drives sampling and is
    /// ignored at temperature 0; determinism contract: fixed (prompt, seed,
    /// temperature) implies a fixed completion.
    virtual std::string generate(const std::string& prompt, uint64_t seed) = 0;
    std::string generate(const std::string& prompt) { return generate(prompt, sampling_.seed); }

    /// @throws CapabilityError when the backend cannot score.
    virtual TokenScore score_completion(const std::string& prompt,
                                        const std::string& completion) const;

    /// Frozen deep copy whose scores never change under source updates.
    /// @throws CapabilityError for backends without parameters.
    virtual std::shared_ptr<Policy> snapshot_reference() const;

    /// One gradient-descent step on `objective`; returns the pre-step value.
    /// @throws CapabilityError (not trainable), NumericalError (non-finite
    /// gradient; parameters unchanged).
    virtual double apply_update(const Objective& objective, double learning_rate);

    /// Evaluate an objective at the current parameters without stepping.
    virtual double eval_objective(const Objective& objective) const;

protected:
    Policy(std::string backend_id, SamplingParams sampling)
        : backend_id_(std::move(backend_id)), sampling_(sampling) {}

    std::string backend_id_;
    SamplingParams sampling_;
};

/// Deterministic lookup-table policy: first rule whose needle occurs in the
/// prompt wins; otherwise the fallback completion. Not trainable, not
/// scoreable.
class ScriptedPolicy : public Policy {
public:
    using Rule = std::pair<std::string, std::string>;  // (needle, completion)
    using Rules = std::vector<Rule>;

    ScriptedPolicy(Rules rules, std::string fallback, std::string backend_id = "scripted");

    bool trainable() const override { return false; }
    std::string generate(const std::string& prompt, uint64_t seed) override;

private:
    std::vector<Rule> rules_;
    std::string fallback_;
};

/// Policy backed by an arbitrary callable; used for scripted judges,
/// retrievers and generators. Counts generate calls.
class CallbackPolicy : public Policy {
public:
    using Fn = std::function<std::string(const std::string& prompt)>;

    explicit CallbackPolicy(Fn fn, std::string backend_id = "callback");

    bool trainable() const override { return false; }
    std::string generate(const std::string& prompt, uint64_t seed) override;
    int call_count() const { return calls_; }

private:
    Fn fn_;
    int calls_ = 0;
};

/**
 * Trainable tabular softmax policy over K completion templates.
 *
 * Each prompt maps to a context class (by default the text of its
 * "QUERY: ..." line); each context class owns a logits row of length K.
 * A completion is a single token: the index of the template it equals.
 * Rows are zero-initialized on first use.
 */
class TinyPolicy : public Policy {
public:
    using ContextFn = std::function<std::string(const std::string& prompt)>;

    explicit TinyPolicy(std::vector<std::string> templates, SamplingParams sampling = {},
                        ContextFn context_fn = nullptr, std::string backend_id = "tiny");

    bool trainable() const override { return !frozen_; }
    std::string generate(const std::string& prompt, uint64_t seed) override;
    TokenScore score_completion(const std::string& prompt,
                                const std::string& completion) const override;
    std::shared_ptr<Policy> snapshot_reference() const override;
    double apply_update(const Objective& objective, double learning_rate) override;
    double eval_objective(const Objective& objective) const override;

    /// Pre-step objective value and the gradient aligned with flat_params().
    std::pair<double, std::vector<double>> value_and_grad(const Objective& objective) const;

    const std::vector<std::string>& templates() const { return templates_; }
    size_t vocab_size() const { return templates_.size(); }

    /// Softmax distribution over templates for a context class (temperature 1).
    std::vector<double> distribution(const std::string& context) const;

    /// Context classes with materialized logits rows, sorted.
    std::vector<std::string> context_classes() const;

    /// Parameters flattened in (sorted context class) x (template index)
    /// order. set_flat_params requires the same row layout.
    std::vector<double> flat_params() const;
    void set_flat_params(const std::vector<double>& params);

    std::string context_class_of(const std::string& prompt) const { return context_fn_(prompt); }

    /// Checkpoint payload (single-line JSON) and its inverse.
    std::string serialize_params() const;
    void load_params(const std::string& payload);

private:
    struct Scorer;

    std::vector<double>& row(const std::string& context) const;
    int template_index(const std::string& completion) const;

    std::vector<std::string> templates_;
    ContextFn context_fn_;
    mutable std::map<std::string, std::vector<double>> logits_;  // ordered: deterministic layout
    bool frozen_ = false;
};

/// Softmax of a logits row; sums to 1 within 1e-12.
std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace toolcoach
