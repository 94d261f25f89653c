#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "toolcoach/agent.hpp"
#include "toolcoach/email_demo.hpp"
#include "toolcoach/learners.hpp"
#include "toolcoach/policy.hpp"
#include "toolcoach/reward.hpp"
#include "toolcoach/task.hpp"

namespace toolcoach {

struct DistillConfig {
    int num_traces = 100;            // teacher rollouts per query
    double quality_threshold = 0.9;  // keep traces with reward strictly above
    std::filesystem::path cache_path;
};

struct BrainConfig {
    std::string algorithm = "GRPO";  // case-insensitive; GRPO | DPO | SFT
    LearnerConfig learner;
    EpisodeConfig episode;
    bool enable_tool_retrieval = false;
    DistillConfig distill;
    std::filesystem::path checkpoint_dir = "checkpoints";
    std::filesystem::path metrics_path = "metrics.jsonl";
    int checkpoint_every = 10;
    std::string config_digest;  // embedded in metrics and checkpoints
};

struct GenerateParams {
    std::string task_description;
    int num_examples = 100;
    int min_tool_calls = 2;
    int max_words = 80;
    bool self_rank = false;
    std::vector<ToolSpec> external_tools;        // empty -> the registry's tools
    std::shared_ptr<Policy> external_model;      // null -> the brain's policy
    std::vector<std::string> guidance_examples;  // optional style guidance
};

/**
 * The central orchestrator: owns the policy, the tool registry, the reward
 * and the learner selected by algorithm id; drives the data-generation +
 * learning loop, distillation, task generation and tool retrieval.
 *
 * One train/distill workflow may be active per Brain at a time.
 */
class Brain {
public:
    /// @throws ConfigError on an unknown algorithm id (naming the valid
    /// ones), an invalid reward spec, or unwritable paths.
    Brain(std::shared_ptr<Policy> policy, ToolRegistry registry, RewardSpec reward,
          BrainConfig config);

    /**
     * num_iterations passes over the dataset, one training step per example.
     * Checkpoints every config.checkpoint_every steps; appends one metrics
     * record per step; returns all reports in order.
     *
     * @throws Error when more than half of an iteration's steps skip due to
     *         failures.
     */
    std::vector<StepReport> train(const std::vector<TaskExample>& dataset, int num_iterations);

    /**
     * Warm up the student from teacher rollouts: per query, collect (or load
     * from cache) num_traces teacher traces with rewards, keep those with
     * reward > quality_threshold, and run one supervised pass over the kept
     * traces in deterministic order. Returns the number of traces trained on.
     */
    int distill(const std::vector<TaskExample>& dataset, std::shared_ptr<Policy> teacher);

    /// Generate training queries from tool specs and a task description;
    /// every returned example satisfies the word and tool-count constraints.
    std::vector<TaskExample> generate_training_examples(const GenerateParams& params);

    /// Reorder queries best-first with one ranking call; on any ranker
    /// failure the input order is preserved and a warning logged.
    std::vector<std::string> self_rank_queries(const std::vector<std::string>& queries,
                                               const std::string& task_description);

    /// The subset of registered tools a retrieval model deems relevant;
    /// falls back to the full registry when retrieval is disabled or fails.
    std::vector<ToolSpec> retrieve_tools(const std::string& query);

    /// Registry an episode for `query` should run against (tool retrieval
    /// applied when enabled).
    ToolRegistry episode_registry(const std::string& query);

    void write_checkpoint(int next_step) const;
    void load_checkpoint(const std::filesystem::path& checkpoint);
    /// Highest checkpoint_<step> directory under checkpoint_dir, or empty.
    std::filesystem::path latest_checkpoint() const;

    Policy& policy() { return *policy_; }
    std::shared_ptr<Policy> policy_ptr() { return policy_; }
    const ToolRegistry& registry() const { return registry_; }
    const RewardSpec& reward() const { return reward_; }
    const BrainConfig& config() const { return config_; }
    Learner& learner() { return *learner_; }
    int next_step() const { return next_step_; }

    /// Model used by retrieve_tools and self_rank_queries; defaults to the
    /// brain's own policy.
    void set_retrieval_policy(std::shared_ptr<Policy> policy) { retrieval_policy_ = std::move(policy); }

private:
    void append_metrics(const StepReport& report);

    std::shared_ptr<Policy> policy_;
    ToolRegistry registry_;
    RewardSpec reward_;
    BrainConfig config_;
    std::unique_ptr<Learner> learner_;
    std::shared_ptr<Policy> retrieval_policy_;
    int next_step_ = 0;
};

/// Correctness rate of the brain's policy over eval items (greedy episodes).
double evaluate_correctness(Brain& brain, const std::vector<email_demo::EvalItem>& items);

/// Distill cache key: hash of (teacher id, query text, reward id, schema
/// version), rendered as 16 hex digits.
std::string distill_cache_key(const std::string& teacher_id, const std::string& query,
                              const std::string& reward_id);

}  // namespace toolcoach
