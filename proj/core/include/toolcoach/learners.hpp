#pragma once

#include <memory>
#include <string>
#include <vector>

#include "toolcoach/agent.hpp"
#include "toolcoach/policy.hpp"
#include "toolcoach/reward.hpp"
#include "toolcoach/task.hpp"

namespace toolcoach {

enum class Algorithm { GRPO, DPO, SFT };

/// Case-insensitive algorithm lookup.
/// @throws ConfigError naming the valid identifiers.
Algorithm parse_algorithm(const std::string& id);
std::string to_string(Algorithm algorithm);

struct LearnerConfig {
    Algorithm algorithm = Algorithm::GRPO;
    int group_size = 4;        // G
    double clip_epsilon = 0.2; // epsilon
    double kl_beta = 0.04;     // beta
    double dpo_beta = 0.1;
    double learning_rate = 1e-2;
    uint64_t seed = 0;
};

/// @throws ConfigError when hyperparameters are out of range.
void validate_learner_config(const LearnerConfig& config);

/// Outcome of one training step; appended to the metrics file.
struct StepReport {
    int step = 0;
    std::string algorithm;
    double loss = 0.0;
    double mean_reward = 0.0;
    std::vector<double> per_trace_rewards;
    double kl_value = 0.0;
    double wall_time_ms = 0.0;
    bool skipped = false;
    std::string skip_reason;
};

/**
 * Group-normalized advantages: (r_i - mean) / std with the population
 * standard deviation. All-equal groups (std < 1e-8) map to all zeros.
 * @throws NumericalError on non-finite input.
 */
std::vector<double> compute_advantages(const std::vector<double>& rewards);

/// Per-token scores of a whole trace: turn scores concatenated in order.
TokenScore score_trace(const Policy& policy, const Trace& trace);

/// The masked entries of a TokenScore, in order.
std::vector<double> masked_logprobs(const TokenScore& score);

/**
 * The clipped-surrogate group objective with a per-token KL penalty:
 *
 *   L = -(1/G) sum_i (1/|o_i|) sum_t [ min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i)
 *                                      - beta (e^r - 1 - r) ]
 *
 * with rho_t = exp(logpi_theta - logpi_old) and r = logpi_ref - logpi_theta
 * over masked completion tokens. Traces with no masked tokens contribute 0.
 * Advantages must be populated; old_scores are the rollout-time scores.
 */
Objective grpo_loss(RolloutGroup group, const Policy& ref_policy,
                    std::vector<TokenScore> old_scores, const LearnerConfig& config);

/// -log sigmoid(beta * (r_theta(chosen) - r_theta(rejected))) where
/// r_theta(y) = masked logpi_theta(y|x) - masked logpi_ref(y|x).
/// @throws OutOfSupportError when the reference cannot score a completion.
Objective dpo_loss(const PreferencePair& pair, const Policy& ref_policy, double dpo_beta);

/// Masked cross-entropy of the target completion given the prompt,
/// averaged over completion tokens.
Objective masked_sft_loss(std::string prompt, std::string target_completion);

/**
 * One algorithm's training step. Learners own the frozen reference policy
 * (snapshotted from the training policy on first use) so KL terms and DPO
 * log-ratios stay anchored across steps.
 */
class Learner {
public:
    explicit Learner(LearnerConfig config);
    virtual ~Learner() = default;

    const LearnerConfig& config() const { return config_; }
    virtual Algorithm algorithm() const = 0;

    /// Run one data-generation + learning step for a single example.
    /// Reward or support failures produce a skip report, never a throw.
    virtual StepReport train_step(Policy& policy, const ToolRegistry& registry,
                                  const TaskExample& example, const RewardSpec& reward,
                                  const EpisodeConfig& episode, uint64_t step_seed) = 0;

    /// The frozen reference snapshot (null until first use).
    const std::shared_ptr<Policy>& reference() const { return reference_; }
    void set_reference(std::shared_ptr<Policy> reference) { reference_ = std::move(reference); }

protected:
    void ensure_reference(const Policy& policy);

    LearnerConfig config_;
    std::shared_ptr<Policy> reference_;
};

class GrpoLearner : public Learner {
public:
    using Learner::Learner;
    Algorithm algorithm() const override { return Algorithm::GRPO; }
    StepReport train_step(Policy& policy, const ToolRegistry& registry,
                          const TaskExample& example, const RewardSpec& reward,
                          const EpisodeConfig& episode, uint64_t step_seed) override;
};

class DpoLearner : public Learner {
public:
    using Learner::Learner;
    Algorithm algorithm() const override { return Algorithm::DPO; }
    StepReport train_step(Policy& policy, const ToolRegistry& registry,
                          const TaskExample& example, const RewardSpec& reward,
                          const EpisodeConfig& episode, uint64_t step_seed) override;
};

/// Supervised step toward "FINAL: <gold_answer>" on the first-turn prompt.
/// Examples without a gold answer are skipped.
class SftLearner : public Learner {
public:
    using Learner::Learner;
    Algorithm algorithm() const override { return Algorithm::SFT; }
    StepReport train_step(Policy& policy, const ToolRegistry& registry,
                          const TaskExample& example, const RewardSpec& reward,
                          const EpisodeConfig& episode, uint64_t step_seed) override;
};

std::unique_ptr<Learner> make_learner(const LearnerConfig& config);

}  // namespace toolcoach
