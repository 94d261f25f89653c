#include <memory>
#include <random>
#include <vector>

#include "benchmark/benchmark.h"
#include "toolcoach/agent.hpp"
#include "toolcoach/email_demo.hpp"
#include "toolcoach/learners.hpp"
#include "toolcoach/policy.hpp"
#include "toolcoach/reward.hpp"
#include "toolcoach/trace.hpp"

namespace tc = toolcoach;

namespace {

const std::string kCallTemplate = "```\nlookup(key=\"answer\")\n```";
const std::string kFinalTemplate = "FINAL: done";

void BM_ParseCompletion(benchmark::State& state) {
    const std::vector<std::string> inputs = {
        "Let me search the inbox first.\n```\nsearch_emails(keywords=[\"portland\", \"move\"])\n```",
        "FINAL: Shari moves in May 2001.",
        "Thinking about which tool applies here, probably none of them do.",
        "",
    };
    size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(tc::parse_completion(inputs[i++ % inputs.size()]));
    }
}
BENCHMARK(BM_ParseCompletion);

void BM_TraceEncodeDecode(benchmark::State& state) {
    tc::Trace trace;
    trace.query_id = "q1/r0";
    trace.query = "when is the meeting?";
    for (int t = 0; t < 4; ++t) {
        tc::Turn turn;
        turn.prompt_for_model = "SYSTEM...\nQUERY: when is the meeting?\n";
        turn.model_completion = t == 3 ? "FINAL: tuesday" : kCallTemplate;
        turn.parsed_completion = tc::parse_completion(turn.model_completion);
        if (turn.parsed_completion.tool_code) turn.tool_output = "[]";
        trace.turns.push_back(turn);
    }
    trace.terminated = tc::Trace::Terminated::answered;
    for (auto _ : state) {
        benchmark::DoNotOptimize(tc::decode_trace(tc::encode_trace(trace)));
    }
}
BENCHMARK(BM_TraceEncodeDecode);

void BM_ComputeAdvantages(benchmark::State& state) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> rewards(static_cast<size_t>(state.range(0)));
    for (double& r : rewards) r = dist(rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(tc::compute_advantages(rewards));
    }
}
BENCHMARK(BM_ComputeAdvantages)->Arg(4)->Arg(16)->Arg(256);

void BM_GrpoTrainStep(benchmark::State& state) {
    tc::ToolRegistry registry;
    tc::ToolSpec spec;
    spec.name = "lookup";
    spec.description = "Look up a key.";
    spec.args = {{"key", tc::ToolArg::Type::string, "the key", true}};
    registry.register_tool(spec, [](const tc::ToolArgs&) { return std::string("ok"); });

    auto policy = std::make_shared<tc::TinyPolicy>(
        std::vector<std::string>{kCallTemplate, kFinalTemplate}, tc::SamplingParams{1.0, 32, 1});
    tc::LearnerConfig config;
    config.group_size = static_cast<int>(state.range(0));
    config.kl_beta = 0.04;
    config.learning_rate = 1e-9;  // negligible drift across iterations
    tc::GrpoLearner learner(config);
    const tc::RewardSpec reward = tc::wrap_reward(
        tc::SingleTraceRewardFn([](const tc::Trace& t, const tc::RewardKwargs&) {
            return t.turns.front().tool_output ? 1.0 : 0.0;
        }));
    tc::EpisodeConfig episode;
    episode.max_turns = 1;

    uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(learner.train_step(*policy, registry,
                                                    tc::TaskExample{"toy", {}, {}}, reward,
                                                    episode, seed++));
    }
}
BENCHMARK(BM_GrpoTrainStep)->Arg(4)->Arg(16);

void BM_EmailSearch(benchmark::State& state) {
    static const auto built = tc::email_demo::build_corpus(7, 1000);
    const auto& corpus = built.first;
    const auto& items = built.second;
    size_t i = 0;
    for (auto _ : state) {
        const auto keywords =
            tc::email_demo::extract_keywords(items[i++ % items.size()].question);
        benchmark::DoNotOptimize(tc::email_demo::search_emails(corpus, keywords));
    }
}
BENCHMARK(BM_EmailSearch);

void BM_RunEpisode(benchmark::State& state) {
    static const auto built = tc::email_demo::build_corpus(7, 1000);
    auto corpus = std::make_shared<const tc::email_demo::Corpus>(built.first);
    const auto& items = built.second;
    const tc::ToolRegistry registry = tc::email_demo::make_email_registry(corpus);
    auto expert = tc::email_demo::make_expert_policy(items);
    tc::EpisodeConfig config;
    size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(tc::run_episode(*expert, registry,
                                                 items[i++ % items.size()].question, config));
    }
}
BENCHMARK(BM_RunEpisode);

}  // namespace

BENCHMARK_MAIN();
