// toolcoach CLI: train | eval | distill | gen-tasks | build-demo | report
//
// Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "toolcoach/brain.hpp"
#include "toolcoach/email_demo.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/run_config.hpp"

namespace tc = toolcoach;
using nlohmann::json;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string checkpoint_path;
};

tc::RunConfig load_config(const CommonOptions& options) {
    tc::RunConfig config = tc::load_run_config(options.config_path);
    if (options.seed) tc::apply_seed_override(config, *options.seed);
    std::cout << "config digest: " << config.digest << "\n";
    return config;
}

std::vector<tc::TaskExample> require_dataset(const tc::RunConfig& config) {
    if (config.dataset_path.empty()) throw tc::ConfigError("dataset_path: required");
    return tc::read_dataset(config.dataset_path);
}

tc::ToolRegistry require_registry(const tc::RunConfig& config) {
    if (config.corpus_path.empty()) throw tc::ConfigError("corpus_path: required");
    auto corpus = std::make_shared<const tc::email_demo::Corpus>(
        tc::email_demo::read_corpus(config.corpus_path));
    return tc::email_demo::make_email_registry(corpus);
}

tc::Brain build_brain(const tc::RunConfig& config, const std::vector<tc::TaskExample>& dataset) {
    auto policy = tc::make_policy(config.backend, config.seed);
    tc::ToolRegistry registry = require_registry(config);
    tc::RewardSpec reward = tc::make_reward(config.reward, dataset, config.seed);
    return tc::Brain(std::move(policy), std::move(registry), std::move(reward),
                     tc::make_brain_config(config));
}

int cmd_train(const CommonOptions& options) {
    tc::RunConfig config = load_config(options);
    std::vector<tc::TaskExample> dataset = require_dataset(config);
    tc::Brain brain = build_brain(config, dataset);
    if (!options.checkpoint_path.empty()) {
        brain.load_checkpoint(options.checkpoint_path);
        std::cout << "resumed at step " << brain.next_step() << "\n";
    }
    std::vector<tc::StepReport> reports = brain.train(dataset, config.num_iterations);

    double mean_reward = 0.0;
    int counted = 0;
    for (const tc::StepReport& report : reports) {
        if (report.skipped) continue;
        mean_reward += report.mean_reward;
        ++counted;
    }
    if (counted > 0) mean_reward /= counted;
    std::cout << "trained " << reports.size() << " steps; mean reward " << mean_reward << "\n";
    std::cout << "metrics: " << config.metrics_path.string() << "\n";
    return 0;
}

int cmd_eval(const CommonOptions& options) {
    tc::RunConfig config = load_config(options);
    if (config.eval_items_path.empty()) throw tc::ConfigError("eval_items_path: required");
    std::vector<tc::email_demo::EvalItem> items =
        tc::email_demo::read_eval_items(config.eval_items_path);

    std::vector<tc::TaskExample> dataset;
    for (const tc::email_demo::EvalItem& item : items) {
        dataset.push_back(tc::TaskExample{item.question, item.gold_answer,
                                          tc::TaskExample::Source::user});
    }
    tc::Brain brain = build_brain(config, dataset);
    if (!options.checkpoint_path.empty()) brain.load_checkpoint(options.checkpoint_path);

    const double rate = tc::evaluate_correctness(brain, items);
    std::printf("correctness_rate: %.4f (%zu items)\n", rate, items.size());
    return 0;
}

int cmd_distill(const CommonOptions& options) {
    tc::RunConfig config = load_config(options);
    if (!config.teacher) throw tc::ConfigError("distill.teacher: required");
    if (config.distill.cache_path.empty()) throw tc::ConfigError("distill.cache_path: required");
    std::vector<tc::TaskExample> dataset = require_dataset(config);
    tc::Brain brain = build_brain(config, dataset);
    if (!options.checkpoint_path.empty()) brain.load_checkpoint(options.checkpoint_path);
    auto teacher = tc::make_policy(*config.teacher, config.seed);

    const int trained = brain.distill(dataset, teacher);
    std::cout << "distilled on " << trained << " teacher traces\n";
    brain.write_checkpoint(0);
    std::cout << "checkpoint: " << (config.checkpoint_dir / "checkpoint_0").string() << "\n";
    return 0;
}

int cmd_gen_tasks(const CommonOptions& options) {
    tc::RunConfig config = load_config(options);
    if (config.gen_output_path.empty()) throw tc::ConfigError("gen.output_path: required");
    std::vector<tc::TaskExample> dataset;  // generation needs no gold answers
    tc::Brain brain = build_brain(config, dataset);

    tc::GenerateParams params;
    params.task_description = config.gen_task_description;
    params.num_examples = config.gen_num_examples;
    params.min_tool_calls = config.gen_min_tool_calls;
    params.max_words = config.gen_max_words;
    params.self_rank = config.gen_self_rank;
    std::vector<tc::TaskExample> examples = brain.generate_training_examples(params);

    tc::write_dataset(config.gen_output_path, examples);
    std::cout << "generated " << examples.size() << " examples -> "
              << config.gen_output_path.string() << "\n";
    return 0;
}

int cmd_build_demo(const CommonOptions& options) {
    tc::RunConfig config = load_config(options);
    if (config.corpus_path.empty() || config.eval_items_path.empty() ||
        config.dataset_path.empty()) {
        throw tc::ConfigError("corpus_path, eval_items_path and dataset_path: required");
    }
    auto [corpus, items] = tc::email_demo::build_corpus(config.seed, config.demo_n_emails);
    tc::email_demo::write_corpus(config.corpus_path, corpus);
    tc::email_demo::write_eval_items(config.eval_items_path, items);

    std::vector<tc::TaskExample> dataset;
    for (const tc::email_demo::EvalItem& item : items) {
        dataset.push_back(tc::TaskExample{item.question, item.gold_answer,
                                          tc::TaskExample::Source::user});
    }
    tc::write_dataset(config.dataset_path, dataset);
    std::cout << "built corpus with " << corpus.size() << " emails and " << items.size()
              << " eval items\n";
    return 0;
}

int cmd_report(const std::string& metrics_path) {
    std::ifstream in(metrics_path);
    if (!in) throw tc::ConfigError("cannot open metrics file '" + metrics_path + "'");

    std::vector<double> mean_rewards;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json record = json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.is_object()) {
            throw tc::DecodeError("malformed metrics record");
        }
        if (!record.contains("step")) continue;  // header
        mean_rewards.push_back(record.value("mean_reward", 0.0));
    }
    if (mean_rewards.empty()) throw tc::ConfigError("metrics file has no step records");

    const size_t window = std::min<size_t>(10, mean_rewards.size());
    double first = 0.0;
    double last = 0.0;
    for (size_t i = 0; i < window; ++i) {
        first += mean_rewards[i];
        last += mean_rewards[mean_rewards.size() - window + i];
    }
    first /= static_cast<double>(window);
    last /= static_cast<double>(window);
    std::printf("steps: %zu\n", mean_rewards.size());
    std::printf("first %zu-step mean reward: %.4f\n", window, first);
    std::printf("last %zu-step mean reward:  %.4f\n", window, last);
    std::printf("difference: %+.4f\n", last - first);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toolcoach: reinforcement-learning coaching for tool-using agents"};
    app.require_subcommand(1);

    CommonOptions options;
    std::string metrics_path;

    auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
        cmd->add_option("--config", options.config_path, "path to the run config file")
            ->required();
        cmd->add_option("--seed", options.seed, "override the config seed");
        if (with_checkpoint) {
            cmd->add_option("--checkpoint", options.checkpoint_path,
                            "checkpoint directory to load before running");
        }
    };

    CLI::App* train = app.add_subcommand("train", "run the training loop");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "evaluate correctness on eval items");
    add_common(eval, true);
    CLI::App* distill = app.add_subcommand("distill", "warm up the student from a teacher");
    add_common(distill, true);
    CLI::App* gen = app.add_subcommand("gen-tasks", "generate training examples from tool specs");
    add_common(gen, false);
    CLI::App* demo = app.add_subcommand("build-demo", "build the synthetic email corpus");
    add_common(demo, false);
    CLI::App* report = app.add_subcommand("report", "summarize a metrics file");
    report->add_option("--metrics", metrics_path, "metrics file to summarize")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(options);
        if (eval->parsed()) return cmd_eval(options);
        if (distill->parsed()) return cmd_distill(options);
        if (gen->parsed()) return cmd_gen_tasks(options);
        if (demo->parsed()) return cmd_build_demo(options);
        if (report->parsed()) return cmd_report(metrics_path);
    } catch (const tc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const tc::InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const tc::DecodeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
