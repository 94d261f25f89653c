#include "toolcoach/learners.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <iostream>

#include "toolcoach/errors.hpp"

namespace toolcoach {

Algorithm parse_algorithm(const std::string& id) {
    std::string upper;
    upper.reserve(id.size());
    for (char c : id) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper == "GRPO") return Algorithm::GRPO;
    if (upper == "DPO") return Algorithm::DPO;
    if (upper == "SFT") return Algorithm::SFT;
    throw ConfigError("unknown learning algorithm '" + id + "'; valid algorithms: GRPO, DPO, SFT");
}

std::string to_string(Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::GRPO: return "GRPO";
        case Algorithm::DPO: return "DPO";
        case Algorithm::SFT: return "SFT";
    }
    return "GRPO";
}

void validate_learner_config(const LearnerConfig& config) {
    if (!(config.clip_epsilon > 0.0 && config.clip_epsilon < 1.0)) {
        throw ConfigError("clip_epsilon must be in (0, 1)");
    }
    if (config.kl_beta < 0.0) throw ConfigError("kl_beta must be >= 0");
    if (config.dpo_beta <= 0.0) throw ConfigError("dpo_beta must be > 0");
    if (config.learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (config.group_size < 1) throw ConfigError("group_size must be >= 1");
    if ((config.algorithm == Algorithm::GRPO || config.algorithm == Algorithm::DPO) &&
        config.group_size < 2) {
        throw ConfigError("group_size must be >= 2 for GRPO and DPO");
    }
}

std::vector<double> compute_advantages(const std::vector<double>& rewards) {
    if (rewards.empty()) throw InvalidArgument("compute_advantages needs at least one reward");
    for (double r : rewards) {
        if (!std::isfinite(r)) throw NumericalError("non-finite reward in advantage computation");
    }
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double std_dev = std::sqrt(var / n);  // population std
    if (std_dev < 1e-8) return std::vector<double>(rewards.size(), 0.0);
    std::vector<double> advantages(rewards.size());
    for (size_t i = 0; i < rewards.size(); ++i) advantages[i] = (rewards[i] - mean) / std_dev;
    return advantages;
}

TokenScore score_trace(const Policy& policy, const Trace& trace) {
    TokenScore out;
    for (const Turn& turn : trace.turns) {
        TokenScore s = policy.score_completion(turn.prompt_for_model, turn.model_completion);
        out.token_ids.insert(out.token_ids.end(), s.token_ids.begin(), s.token_ids.end());
        out.logprobs.insert(out.logprobs.end(), s.logprobs.begin(), s.logprobs.end());
        out.mask.insert(out.mask.end(), s.mask.begin(), s.mask.end());
    }
    return out;
}

std::vector<double> masked_logprobs(const TokenScore& score) {
    std::vector<double> out;
    for (size_t i = 0; i < score.logprobs.size(); ++i) {
        if (score.mask[i]) out.push_back(score.logprobs[i]);
    }
    return out;
}

namespace {

std::vector<diff::Var> diff_trace_logprobs(DiffScorer& scorer, const Trace& trace) {
    std::vector<diff::Var> out;
    for (const Turn& turn : trace.turns) {
        std::vector<diff::Var> lps = scorer.token_logprobs(turn.prompt_for_model, turn.model_completion);
        out.insert(out.end(), lps.begin(), lps.end());
    }
    return out;
}

diff::Var sum_vars(diff::Tape& tape, const std::vector<diff::Var>& vars) {
    diff::Var total = tape.constant(0.0);
    for (diff::Var v : vars) total = total + v;
    return total;
}

}  // namespace

Objective grpo_loss(RolloutGroup group, const Policy& ref_policy,
                    std::vector<TokenScore> old_scores, const LearnerConfig& config) {
    if (group.advantages.size() != group.traces.size()) {
        throw InvalidArgument("grpo_loss requires populated advantages");
    }
    if (old_scores.size() != group.traces.size()) {
        throw InvalidArgument("grpo_loss requires one old score per trace");
    }

    std::vector<std::vector<double>> ref_masked(group.traces.size());
    std::vector<std::vector<double>> old_masked(group.traces.size());
    for (size_t i = 0; i < group.traces.size(); ++i) {
        ref_masked[i] = masked_logprobs(score_trace(ref_policy, group.traces[i]));
        old_masked[i] = masked_logprobs(old_scores[i]);
    }

    const double group_size = static_cast<double>(group.traces.size());
    const double eps = config.clip_epsilon;
    const double beta = config.kl_beta;

    return [group = std::move(group), ref_masked = std::move(ref_masked),
            old_masked = std::move(old_masked), group_size, eps,
            beta](diff::Tape& tape, DiffScorer& scorer) -> diff::Var {
        diff::Var total = tape.constant(0.0);
        for (size_t i = 0; i < group.traces.size(); ++i) {
            const std::vector<diff::Var> lps = diff_trace_logprobs(scorer, group.traces[i]);
            if (lps.empty()) {
                std::cerr << "[toolcoach] warning: trace " << group.traces[i].query_id
                          << " has no trainable tokens; contributes 0\n";
                continue;
            }
            if (lps.size() != old_masked[i].size() || lps.size() != ref_masked[i].size()) {
                throw InvalidArgument("token score length mismatch between policies");
            }
            const double advantage = group.advantages[i];
            diff::Var trace_sum = tape.constant(0.0);
            for (size_t t = 0; t < lps.size(); ++t) {
                diff::Var ratio = diff::exp(lps[t] - old_masked[i][t]);
                diff::Var surrogate =
                    diff::min(ratio * advantage, diff::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
                diff::Var term = surrogate;
                if (beta != 0.0) {
                    diff::Var r = ref_masked[i][t] - lps[t];
                    diff::Var kl = diff::exp(r) - 1.0 - r;
                    term = surrogate - beta * kl;
                }
                trace_sum = trace_sum + term;
            }
            total = total + trace_sum / static_cast<double>(lps.size());
        }
        return -(total / group_size);
    };
}

Objective dpo_loss(const PreferencePair& pair, const Policy& ref_policy, double dpo_beta) {
    if (dpo_beta <= 0.0) throw ConfigError("dpo_beta must be > 0");
    const double ref_chosen =
        ref_policy.score_completion(pair.context, pair.chosen).masked_sum();
    const double ref_rejected =
        ref_policy.score_completion(pair.context, pair.rejected).masked_sum();
    return [pair, ref_chosen, ref_rejected, dpo_beta](diff::Tape& tape,
                                                      DiffScorer& scorer) -> diff::Var {
        diff::Var r_chosen =
            sum_vars(tape, scorer.token_logprobs(pair.context, pair.chosen)) - ref_chosen;
        diff::Var r_rejected =
            sum_vars(tape, scorer.token_logprobs(pair.context, pair.rejected)) - ref_rejected;
        diff::Var z = (r_chosen - r_rejected) * dpo_beta;
        return diff::softplus(-z);  // -log sigmoid(z)
    };
}

Objective masked_sft_loss(std::string prompt, std::string target_completion) {
    return [prompt = std::move(prompt),
            target = std::move(target_completion)](diff::Tape& tape, DiffScorer& scorer) -> diff::Var {
        const std::vector<diff::Var> lps = scorer.token_logprobs(prompt, target);
        return -(sum_vars(tape, lps) / static_cast<double>(lps.size()));
    };
}

Learner::Learner(LearnerConfig config) : config_(config) {
    validate_learner_config(config_);
}

void Learner::ensure_reference(const Policy& policy) {
    if (!reference_) reference_ = policy.snapshot_reference();
}

namespace {

StepReport skip_report(Algorithm algorithm, std::string reason,
                       std::vector<double> rewards = {}) {
    StepReport report;
    report.algorithm = to_string(algorithm);
    report.skipped = true;
    report.skip_reason = std::move(reason);
    if (!rewards.empty()) {
        double sum = 0.0;
        for (double r : rewards) sum += r;
        report.mean_reward = sum / static_cast<double>(rewards.size());
        report.per_trace_rewards = std::move(rewards);
    }
    return report;
}

double mean_of(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

// Mean per-token KL estimator e^r - 1 - r with r = ref - theta, over masked
// tokens of all traces; 0 when there are none.
double numeric_kl(const std::vector<std::vector<double>>& theta,
                  const std::vector<std::vector<double>>& ref) {
    double sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < theta.size(); ++i) {
        for (size_t t = 0; t < theta[i].size(); ++t) {
            const double r = ref[i][t] - theta[i][t];
            sum += std::exp(r) - 1.0 - r;
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

class StepTimer {
public:
    StepTimer() : start_(std::chrono::steady_clock::now()) {}
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

StepReport GrpoLearner::train_step(Policy& policy, const ToolRegistry& registry,
                                   const TaskExample& example, const RewardSpec& reward,
                                   const EpisodeConfig& episode, uint64_t step_seed) {
    StepTimer timer;
    std::vector<Trace> traces =
        collect_group(policy, registry, example.query, config_.group_size, episode, step_seed);

    std::vector<double> rewards;
    try {
        rewards = get_batch_scores(reward, traces, example.query);
    } catch (const JudgeError& e) {
        StepReport report = skip_report(Algorithm::GRPO, std::string("reward failure: ") + e.what());
        report.wall_time_ms = timer.elapsed_ms();
        return report;
    }

    RolloutGroup group;
    group.query = example.query;
    group.traces = std::move(traces);
    group.rewards = rewards;
    group.advantages = compute_advantages(rewards);

    ensure_reference(policy);
    std::shared_ptr<Policy> old_policy = policy.snapshot_reference();

    std::vector<TokenScore> old_scores;
    std::vector<std::vector<double>> theta_masked;
    std::vector<std::vector<double>> ref_masked;
    size_t trainable_tokens = 0;
    try {
        for (const Trace& trace : group.traces) {
            old_scores.push_back(score_trace(*old_policy, trace));
            theta_masked.push_back(masked_logprobs(old_scores.back()));
            ref_masked.push_back(masked_logprobs(score_trace(*reference_, trace)));
            trainable_tokens += theta_masked.back().size();
        }
    } catch (const OutOfSupportError& e) {
        StepReport report =
            skip_report(Algorithm::GRPO, std::string("scoring failure: ") + e.what(), rewards);
        report.wall_time_ms = timer.elapsed_ms();
        return report;
    }
    if (trainable_tokens == 0) {
        StepReport report = skip_report(Algorithm::GRPO, "no trainable tokens in group", rewards);
        report.wall_time_ms = timer.elapsed_ms();
        return report;
    }

    Objective objective = grpo_loss(group, *reference_, old_scores, config_);

    StepReport report;
    report.algorithm = to_string(Algorithm::GRPO);
    report.loss = policy.apply_update(objective, config_.learning_rate);
    report.mean_reward = mean_of(rewards);
    report.per_trace_rewards = std::move(rewards);
    report.kl_value = numeric_kl(theta_masked, ref_masked);
    report.wall_time_ms = timer.elapsed_ms();
    return report;
}

StepReport DpoLearner::train_step(Policy& policy, const ToolRegistry& registry,
                                  const TaskExample& example, const RewardSpec& reward,
                                  const EpisodeConfig& episode, uint64_t step_seed) {
    StepTimer timer;
    std::vector<Trace> traces =
        collect_group(policy, registry, example.query, config_.group_size, episode, step_seed);

    std::vector<double> rewards;
    try {
        rewards = get_batch_scores(reward, traces, example.query);
    } catch (const JudgeError& e) {
        StepReport report = skip_report(Algorithm::DPO, std::string("reward failure: ") + e.what());
        report.wall_time_ms = timer.elapsed_ms();
        return report;
    }

    RolloutGroup group;
    group.query = example.query;
    group.traces = std::move(traces);
    group.rewards = rewards;
    group.advantages = compute_advantages(rewards);

    std::vector<PreferencePair> pairs = make_preference_pairs(group, PairScheme::best_worst);
    if (pairs.empty()) {
        StepReport report = skip_report(Algorithm::DPO, "no preference pair (rewards tied)", rewards);
        report.wall_time_ms = timer.elapsed_ms();
        return report;
    }

    ensure_reference(policy);
    StepReport report;
    report.algorithm = to_string(Algorithm::DPO);
    try {
        std::vector<Objective> losses;
        losses.reserve(pairs.size());
        for (const PreferencePair& pair : pairs) {
            losses.push_back(dpo_loss(pair, *reference_, config_.dpo_beta));
        }
        Objective objective = [losses = std::move(losses)](diff::Tape& tape,
                                                           DiffScorer& scorer) -> diff::Var {
            diff::Var total = tape.constant(0.0);
            for (const Objective& loss : losses) total = total + loss(tape, scorer);
            return total / static_cast<double>(losses.size());
        };
        report.loss = policy.apply_update(objective, config_.learning_rate);
    } catch (const OutOfSupportError& e) {
        StepReport skip =
            skip_report(Algorithm::DPO, std::string("scoring failure: ") + e.what(), rewards);
        skip.wall_time_ms = timer.elapsed_ms();
        return skip;
    }
    report.mean_reward = mean_of(rewards);
    report.per_trace_rewards = std::move(rewards);
    report.wall_time_ms = timer.elapsed_ms();
    return report;
}

StepReport SftLearner::train_step(Policy& policy, const ToolRegistry& registry,
                                  const TaskExample& example, const RewardSpec&,
                                  const EpisodeConfig& episode, uint64_t) {
    StepTimer timer;
    if (!example.gold_answer) {
        StepReport report = skip_report(Algorithm::SFT, "example has no gold answer");
        report.wall_time_ms = timer.elapsed_ms();
        return report;
    }
    const std::string prompt = build_prompt(episode, registry.specs(), example.query, {});
    const std::string target = "FINAL: " + *example.gold_answer;

    StepReport report;
    report.algorithm = to_string(Algorithm::SFT);
    try {
        report.loss = policy.apply_update(masked_sft_loss(prompt, target), config_.learning_rate);
    } catch (const OutOfSupportError& e) {
        StepReport skip = skip_report(Algorithm::SFT, std::string("target out of support: ") + e.what());
        skip.wall_time_ms = timer.elapsed_ms();
        return skip;
    }
    report.wall_time_ms = timer.elapsed_ms();
    return report;
}

std::unique_ptr<Learner> make_learner(const LearnerConfig& config) {
    switch (config.algorithm) {
        case Algorithm::GRPO: return std::make_unique<GrpoLearner>(config);
        case Algorithm::DPO: return std::make_unique<DpoLearner>(config);
        case Algorithm::SFT: return std::make_unique<SftLearner>(config);
    }
    throw ConfigError("unknown learning algorithm");
}

}  // namespace toolcoach
