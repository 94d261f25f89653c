#include "toolcoach/policy.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/rng.hpp"

namespace toolcoach {

using nlohmann::json;

size_t TokenScore::masked_count() const {
    size_t n = 0;
    for (bool m : mask) n += m ? 1 : 0;
    return n;
}

double TokenScore::masked_sum() const {
    double s = 0.0;
    for (size_t i = 0; i < logprobs.size(); ++i) {
        if (mask[i]) s += logprobs[i];
    }
    return s;
}

TokenScore Policy::score_completion(const std::string&, const std::string&) const {
    throw CapabilityError("backend '" + backend_id_ + "' does not support score_completion");
}

std::shared_ptr<Policy> Policy::snapshot_reference() const {
    throw CapabilityError("backend '" + backend_id_ + "' has no parameters to snapshot");
}

double Policy::apply_update(const Objective&, double) {
    throw CapabilityError("backend '" + backend_id_ + "' rejects update operations");
}

double Policy::eval_objective(const Objective&) const {
    throw CapabilityError("backend '" + backend_id_ + "' cannot evaluate objectives");
}

ScriptedPolicy::ScriptedPolicy(Rules rules, std::string fallback, std::string backend_id)
    : Policy(std::move(backend_id), SamplingParams{0.0, 256, 0}),
      rules_(std::move(rules)),
      fallback_(std::move(fallback)) {}

std::string ScriptedPolicy::generate(const std::string& prompt, uint64_t) {
    for (const Rule& rule : rules_) {
        if (prompt.find(rule.first) != std::string::npos) return rule.second;
    }
    return fallback_;
}

CallbackPolicy::CallbackPolicy(Fn fn, std::string backend_id)
    : Policy(std::move(backend_id), SamplingParams{0.0, 256, 0}), fn_(std::move(fn)) {}

std::string CallbackPolicy::generate(const std::string& prompt, uint64_t) {
    ++calls_;
    return fn_(prompt);
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - m);
        sum += out[k];
    }
    for (double& p : out) p /= sum;
    return out;
}

namespace {

// Default context class: the text of the prompt's "QUERY: ..." line, so
// logits are shared across turns of the same query.
std::string default_context(const std::string& prompt) {
    constexpr std::string_view marker = "QUERY: ";
    size_t pos = 0;
    while (pos <= prompt.size()) {
        if (prompt.compare(pos, marker.size(), marker) == 0) {
            size_t end = prompt.find('\n', pos);
            if (end == std::string::npos) end = prompt.size();
            pos += marker.size();
            return prompt.substr(pos, end - pos);
        }
        size_t nl = prompt.find('\n', pos);
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return {};
}

}  // namespace

TinyPolicy::TinyPolicy(std::vector<std::string> templates, SamplingParams sampling,
                       ContextFn context_fn, std::string backend_id)
    : Policy(std::move(backend_id), sampling),
      templates_(std::move(templates)),
      context_fn_(context_fn ? std::move(context_fn) : ContextFn(default_context)) {
    if (templates_.size() < 2) {
        throw ConfigError("tiny policy needs at least 2 templates");
    }
}

std::vector<double>& TinyPolicy::row(const std::string& context) const {
    auto it = logits_.find(context);
    if (it == logits_.end()) {
        it = logits_.emplace(context, std::vector<double>(templates_.size(), 0.0)).first;
    }
    return it->second;
}

int TinyPolicy::template_index(const std::string& completion) const {
    for (size_t k = 0; k < templates_.size(); ++k) {
        if (templates_[k] == completion) return static_cast<int>(k);
    }
    return -1;
}

std::string TinyPolicy::generate(const std::string& prompt, uint64_t seed) {
    const std::vector<double>& logits = row(context_fn_(prompt));
    if (sampling_.temperature <= 0.0) {
        size_t best = 0;
        for (size_t k = 1; k < logits.size(); ++k) {
            if (logits[k] > logits[best]) best = k;
        }
        return templates_[best];
    }
    std::vector<double> scaled(logits.size());
    for (size_t k = 0; k < logits.size(); ++k) scaled[k] = logits[k] / sampling_.temperature;
    const std::vector<double> probs = softmax(scaled);
    const double u = unit_double(seed);
    double cum = 0.0;
    for (size_t k = 0; k < probs.size(); ++k) {
        cum += probs[k];
        if (u < cum) return templates_[k];
    }
    return templates_.back();
}

TokenScore TinyPolicy::score_completion(const std::string& prompt,
                                        const std::string& completion) const {
    const int k = template_index(completion);
    if (k < 0) {
        throw OutOfSupportError("completion is not in the template vocabulary");
    }
    const std::vector<double> probs = softmax(row(context_fn_(prompt)));
    TokenScore score;
    score.token_ids = {k};
    score.logprobs = {std::log(probs[static_cast<size_t>(k)])};
    score.mask = {true};
    return score;
}

std::shared_ptr<Policy> TinyPolicy::snapshot_reference() const {
    auto copy = std::make_shared<TinyPolicy>(templates_, sampling_, context_fn_,
                                             backend_id_ + "-ref");
    copy->logits_ = logits_;
    copy->frozen_ = true;
    return copy;
}

// Maps logits rows to tape leaves lazily; one leaf per (context, template).
struct TinyPolicy::Scorer : DiffScorer {
    const TinyPolicy& policy;
    diff::Tape& tape;
    std::map<std::string, std::vector<diff::Var>> rows;

    Scorer(const TinyPolicy& p, diff::Tape& t) : policy(p), tape(t) {}

    std::vector<diff::Var>& leaf_row(const std::string& context) {
        auto it = rows.find(context);
        if (it == rows.end()) {
            const std::vector<double>& values = policy.row(context);
            std::vector<diff::Var> vars;
            vars.reserve(values.size());
            for (double v : values) vars.push_back(tape.leaf(v));
            it = rows.emplace(context, std::move(vars)).first;
        }
        return it->second;
    }

    std::vector<diff::Var> token_logprobs(const std::string& prompt,
                                          const std::string& completion) override {
        const int k = policy.template_index(completion);
        if (k < 0) {
            throw OutOfSupportError("completion is not in the template vocabulary");
        }
        std::vector<diff::Var>& vars = leaf_row(policy.context_fn_(prompt));
        diff::Var lp = vars[static_cast<size_t>(k)] - diff::logsumexp(vars);
        return {lp};
    }
};

double TinyPolicy::apply_update(const Objective& objective, double learning_rate) {
    if (frozen_) {
        throw CapabilityError("frozen policy snapshot rejects update operations");
    }
    diff::Tape tape;
    Scorer scorer(*this, tape);
    diff::Var loss = objective(tape, scorer);
    const double value = tape.value(loss);
    tape.backward(loss);

    for (const auto& [context, vars] : scorer.rows) {
        for (diff::Var v : vars) {
            if (!std::isfinite(tape.grad(v))) {
                throw NumericalError("non-finite gradient; parameters unchanged");
            }
        }
    }
    if (learning_rate != 0.0) {
        for (const auto& [context, vars] : scorer.rows) {
            std::vector<double>& target = row(context);
            for (size_t k = 0; k < vars.size(); ++k) {
                target[k] -= learning_rate * tape.grad(vars[k]);
            }
        }
    }
    return value;
}

double TinyPolicy::eval_objective(const Objective& objective) const {
    diff::Tape tape;
    Scorer scorer(*this, tape);
    return tape.value(objective(tape, scorer));
}

std::pair<double, std::vector<double>> TinyPolicy::value_and_grad(
    const Objective& objective) const {
    diff::Tape tape;
    Scorer scorer(*this, tape);
    diff::Var loss = objective(tape, scorer);
    tape.backward(loss);

    // Flattened in the same (sorted context) x template order as flat_params.
    std::vector<double> grad;
    for (const auto& [context, logits] : logits_) {
        auto it = scorer.rows.find(context);
        for (size_t k = 0; k < logits.size(); ++k) {
            grad.push_back(it == scorer.rows.end() ? 0.0 : tape.grad(it->second[k]));
        }
    }
    return {tape.value(loss), std::move(grad)};
}

std::vector<double> TinyPolicy::distribution(const std::string& context) const {
    return softmax(row(context));
}

std::vector<std::string> TinyPolicy::context_classes() const {
    std::vector<std::string> out;
    out.reserve(logits_.size());
    for (const auto& [context, _] : logits_) out.push_back(context);
    return out;
}

std::vector<double> TinyPolicy::flat_params() const {
    std::vector<double> out;
    for (const auto& [_, logits] : logits_) {
        out.insert(out.end(), logits.begin(), logits.end());
    }
    return out;
}

void TinyPolicy::set_flat_params(const std::vector<double>& params) {
    size_t i = 0;
    for (auto& [_, logits] : logits_) {
        for (double& v : logits) {
            if (i >= params.size()) throw InvalidArgument("flat parameter vector too short");
            v = params[i++];
        }
    }
    if (i != params.size()) throw InvalidArgument("flat parameter vector too long");
}

std::string TinyPolicy::serialize_params() const {
    json j;
    j["backend_id"] = backend_id_;
    j["templates"] = templates_;
    j["logits"] = json::object();
    for (const auto& [context, logits] : logits_) {
        j["logits"][context] = logits;
    }
    return j.dump();
}

void TinyPolicy::load_params(const std::string& payload) {
    json j = json::parse(payload, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DecodeError("malformed policy checkpoint");
    try {
        std::vector<std::string> templates = j.at("templates").get<std::vector<std::string>>();
        if (templates != templates_) {
            throw DecodeError("checkpoint template vocabulary does not match this policy");
        }
        std::map<std::string, std::vector<double>> logits;
        for (const auto& [context, values] : j.at("logits").items()) {
            std::vector<double> r = values.get<std::vector<double>>();
            if (r.size() != templates_.size()) throw DecodeError("checkpoint logits row size mismatch");
            logits[context] = std::move(r);
        }
        logits_ = std::move(logits);
    } catch (const json::exception& e) {
        throw DecodeError(std::string("malformed policy checkpoint: ") + e.what());
    }
}

}  // namespace toolcoach
