#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "toolcoach/brain.hpp"
#include "toolcoach/policy.hpp"
#include "toolcoach/reward.hpp"
#include "toolcoach/task.hpp"

namespace toolcoach {

/// Backend selection inside a run config file.
struct BackendConfig {
    std::string kind = "tiny";  // tiny | scripted | external
    std::vector<std::string> templates;                       // tiny
    std::string context = "query";                            // tiny: query | shared
    std::vector<std::pair<std::string, std::string>> rules;   // scripted
    std::string fallback;                                     // scripted
    std::string model_id;                                     // external
    double temperature = 1.0;
    int max_new_tokens = 256;
};

struct RewardConfig {
    std::string kind = "exact_match";  // exact_match | step_efficiency | judge
    RewardKwargs kwargs;
    std::optional<BackendConfig> judge_backend;
};

/// The single structured config document behind every CLI subcommand.
/// Loading is schema-validated: unknown keys and wrong types are rejected
/// with a field-path diagnostic before any work starts.
struct RunConfig {
    int schema_version = 1;
    std::string algorithm = "GRPO";
    uint64_t seed = 0;

    BackendConfig backend;
    LearnerConfig learner;  // algorithm/seed filled from the fields above
    EpisodeConfig episode;
    RewardConfig reward;

    std::filesystem::path corpus_path;
    std::filesystem::path eval_items_path;
    std::filesystem::path dataset_path;
    int num_iterations = 1;
    bool enable_tool_retrieval = false;

    DistillConfig distill;
    std::optional<BackendConfig> teacher;

    std::filesystem::path checkpoint_dir = "checkpoints";
    std::filesystem::path metrics_path = "metrics.jsonl";
    int checkpoint_every = 10;

    int demo_n_emails = 1000;

    // gen-tasks
    std::string gen_task_description;
    int gen_num_examples = 100;
    int gen_min_tool_calls = 2;
    int gen_max_words = 80;
    bool gen_self_rank = false;
    std::filesystem::path gen_output_path;

    std::string digest;  // content hash of the resolved document
};

/// @throws ConfigError with a field-path diagnostic on schema violations.
RunConfig load_run_config(const std::filesystem::path& path);

/// Apply a --seed override and refresh the digest.
void apply_seed_override(RunConfig& config, uint64_t seed);

/// Instantiate the configured backend. `seed` feeds the sampler.
std::shared_ptr<Policy> make_policy(const BackendConfig& backend, uint64_t seed);

/// Instantiate the configured reward. exact_match draws gold answers from
/// `dataset`; judge builds its judge policy from the config.
RewardSpec make_reward(const RewardConfig& reward, const std::vector<TaskExample>& dataset,
                       uint64_t seed);

/// BrainConfig assembled from a run config.
BrainConfig make_brain_config(const RunConfig& config);

// Dataset files use the line-record envelope with one
// {"query":..., "gold_answer":...} record per line.
void write_dataset(const std::filesystem::path& path, const std::vector<TaskExample>& examples);
std::vector<TaskExample> read_dataset(const std::filesystem::path& path);

}  // namespace toolcoach
