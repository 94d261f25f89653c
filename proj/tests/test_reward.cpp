#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "support/helpers.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/reward.hpp"

using namespace toolcoach;

namespace {

Trace trace_with_turns(int turns, const std::string& answer = "") {
    Trace trace;
    trace.query_id = "q";
    trace.query = "query";
    for (int t = 0; t < turns; ++t) {
        Turn turn;
        turn.prompt_for_model = "p" + std::to_string(t);
        const bool last = t == turns - 1;
        turn.model_completion =
            last && !answer.empty() ? "FINAL: " + answer : "step " + std::to_string(t);
        turn.parsed_completion = parse_completion(turn.model_completion);
        trace.turns.push_back(turn);
    }
    trace.terminated = answer.empty() ? Trace::Terminated::max_turns : Trace::Terminated::answered;
    return trace;
}

}  // namespace

TEST_CASE("wrap_reward classifies by registration shape") {
    const RewardSpec single = wrap_reward(
        SingleTraceRewardFn([](const Trace&, const RewardKwargs&) { return 1.0; }));
    CHECK(single.kind == RewardSpec::Kind::single_trace);

    const RewardSpec batch = wrap_reward(BatchRewardFn(
        [](const std::vector<Trace>& traces, const RewardKwargs&) {
            return std::vector<double>(traces.size(), 0.5);
        }));
    CHECK(batch.kind == RewardSpec::Kind::batch);

    const RewardSpec judge =
        wrap_judge(std::make_shared<ScriptedPolicy>(ScriptedPolicy::Rules{}, "RANKING: A > B"));
    CHECK(judge.kind == RewardSpec::Kind::judge);

    CHECK_THROWS_AS(wrap_judge(nullptr), ConfigError);
    CHECK_THROWS_AS(wrap_reward(SingleTraceRewardFn()), ConfigError);
}

TEST_CASE("step_efficiency reward matches its penalty rule") {
    RewardKwargs kwargs{{"max_turns", "5"}};
    CHECK(rewards::step_efficiency(trace_with_turns(5), kwargs) == 1.0);
    CHECK(rewards::step_efficiency(trace_with_turns(7), kwargs) == doctest::Approx(0.8));
    CHECK(rewards::step_efficiency(trace_with_turns(3), kwargs) == 1.0);
    CHECK(rewards::step_efficiency(trace_with_turns(20), kwargs) == 0.0);  // floored
    // default max_turns is 5
    CHECK(rewards::step_efficiency(trace_with_turns(6), {}) == doctest::Approx(0.9));
}

TEST_CASE("get_batch_scores: single-trace mapping and error containment") {
    const std::vector<Trace> traces = {trace_with_turns(1, "a"), trace_with_turns(2, "b"),
                                       trace_with_turns(3, "c")};

    SUBCASE("maps the callable over traces") {
        const RewardSpec spec = wrap_reward(SingleTraceRewardFn(
            [](const Trace& t, const RewardKwargs&) { return static_cast<double>(t.turns.size()); }));
        CHECK(get_batch_scores(spec, traces, "q") == std::vector<double>{1.0, 2.0, 3.0});
    }
    SUBCASE("a throwing callable scores 0.0 for that trace only") {
        const RewardSpec spec = wrap_reward(SingleTraceRewardFn(
            [](const Trace& t, const RewardKwargs&) -> double {
                if (t.turns.size() == 2) throw std::runtime_error("bad trace");
                return 1.0;
            }));
        CHECK(get_batch_scores(spec, traces, "q") == std::vector<double>{1.0, 0.0, 1.0});
    }
    SUBCASE("non-finite scores are sanitized to 0.0") {
        const RewardSpec spec = wrap_reward(SingleTraceRewardFn(
            [](const Trace&, const RewardKwargs&) { return std::nan(""); }));
        CHECK(get_batch_scores(spec, traces, "q") == std::vector<double>{0.0, 0.0, 0.0});
    }
    SUBCASE("batch callable is invoked once; bad shapes score 0.0") {
        int calls = 0;
        const RewardSpec spec = wrap_reward(BatchRewardFn(
            [&](const std::vector<Trace>& ts, const RewardKwargs&) {
                ++calls;
                return std::vector<double>(ts.size(), 0.25);
            }));
        CHECK(get_batch_scores(spec, traces, "q") == std::vector<double>(3, 0.25));
        CHECK(calls == 1);

        const RewardSpec short_spec = wrap_reward(BatchRewardFn(
            [](const std::vector<Trace>&, const RewardKwargs&) { return std::vector<double>{1.0}; }));
        CHECK(get_batch_scores(short_spec, traces, "q") == std::vector<double>(3, 0.0));
    }
}

TEST_CASE("answered reward pays only for terminated-with-answer episodes") {
    CHECK(rewards::answered(trace_with_turns(1, "anything"), {}) == 1.0);
    CHECK(rewards::answered(trace_with_turns(3), {}) == 0.0);
}

TEST_CASE("tool_call reward pays for any successful tool call") {
    Trace with_tool = trace_with_turns(2);
    with_tool.turns[0].parsed_completion.tool_code = "lookup(key=\"x\")";
    with_tool.turns[0].tool_output = "ok";
    CHECK(rewards::tool_call(with_tool, {}) == 1.0);
    Trace with_error = with_tool;
    *with_error.turns[0].tool_output = "ERROR: unknown tool 'x'";
    CHECK(rewards::tool_call(with_error, {}) == 0.0);
    CHECK(rewards::tool_call(trace_with_turns(1, "a"), {}) == 0.0);
}

TEST_CASE("exact_match reward checks the final answer against gold") {
    const SingleTraceRewardFn fn = rewards::exact_match({{"query", "May 2001"}});
    CHECK(fn(trace_with_turns(1, "the answer is  MAY   2001, I think"), {}) == 1.0);
    CHECK(fn(trace_with_turns(1, "June 2001"), {}) == 0.0);
    CHECK(fn(trace_with_turns(2), {}) == 0.0);  // never answered
}

TEST_CASE("judge_rank: label decoding and retry behavior") {
    const std::vector<Trace> traces = {trace_with_turns(1, "a"), trace_with_turns(1, "b"),
                                       trace_with_turns(1, "c")};

    SUBCASE("well-formed ranking decodes to a permutation") {
        ScriptedPolicy judge({}, "RANKING: C > A > B");
        CHECK(judge_rank(judge, "q", traces) == std::vector<int>{2, 0, 1});
    }
    SUBCASE("duplicate labels trigger one retry") {
        int calls = 0;
        CallbackPolicy judge([&](const std::string&) -> std::string {
            return ++calls == 1 ? "RANKING: A > A > B" : "RANKING: B > C > A";
        });
        CHECK(judge_rank(judge, "q", traces) == std::vector<int>{1, 2, 0});
        CHECK(calls == 2);
    }
    SUBCASE("two failures raise JudgeError") {
        CallbackPolicy judge([](const std::string&) { return std::string("no ranking here"); });
        CHECK_THROWS_AS(judge_rank(judge, "q", traces), JudgeError);
        CHECK(judge.call_count() == 2);
    }
    SUBCASE("labels outside A..G are rejected") {
        ScriptedPolicy judge({}, "RANKING: A > B > Z");
        CHECK_THROWS_AS(judge_rank(judge, "q", traces), JudgeError);
    }
    SUBCASE("group size bounds") {
        ScriptedPolicy judge({}, "RANKING: A");
        std::vector<Trace> one = {traces[0]};
        CHECK_THROWS_AS(judge_rank(judge, "q", one), InvalidArgument);
    }
}

TEST_CASE("judge prompt carries the query and labeled transcripts") {
    const std::vector<Trace> traces = {trace_with_turns(1, "alpha"), trace_with_turns(1, "beta")};
    const std::string prompt = build_judge_prompt("which?", traces);
    CHECK(prompt.find("QUERY: which?") != std::string::npos);
    CHECK(prompt.find("CANDIDATE A:") != std::string::npos);
    CHECK(prompt.find("CANDIDATE B:") != std::string::npos);
    CHECK(prompt.find("FINAL: alpha") != std::string::npos);
    CHECK(prompt.find("RANKING:") != std::string::npos);
}

TEST_CASE("a scripted judge preferring the gold answer ranks the answering trace first") {
    const std::string gold = "portland in May";
    std::vector<Trace> traces = {trace_with_turns(2), trace_with_turns(1, gold),
                                 trace_with_turns(1, "something else")};
    CallbackPolicy judge([&](const std::string& prompt) -> std::string {
        // Order candidates by whether their transcript contains the gold answer.
        std::vector<char> labels;
        std::vector<char> losers;
        for (char label = 'A'; label < 'A' + 3; ++label) {
            const std::string marker = std::string("CANDIDATE ") + label + ":\n";
            const size_t begin = prompt.find(marker);
            const size_t end = prompt.find("CANDIDATE", begin + marker.size());
            const std::string body = prompt.substr(
                begin, (end == std::string::npos ? prompt.size() : end) - begin);
            if (body.find(gold) != std::string::npos) {
                labels.push_back(label);
            } else {
                losers.push_back(label);
            }
        }
        labels.insert(labels.end(), losers.begin(), losers.end());
        std::string line = "RANKING: ";
        for (size_t i = 0; i < labels.size(); ++i) {
            if (i > 0) line += " > ";
            line += labels[i];
        }
        return line;
    });
    const std::vector<int> permutation = judge_rank(judge, "q", traces);
    CHECK(permutation[0] == 1);
    const std::vector<double> rewards = ranks_to_rewards(permutation, 3);
    CHECK(rewards[1] == 1.0);
}

TEST_CASE("ranks_to_rewards: worked examples") {
    CHECK(ranks_to_rewards({2, 0, 3, 1}, 4) ==
          std::vector<double>{2.0 / 3.0, 0.0, 1.0, 1.0 / 3.0});
    CHECK(ranks_to_rewards({0, 1}, 2) == std::vector<double>{1.0, 0.0});
    CHECK(ranks_to_rewards({0}, 1) == std::vector<double>{1.0});
    CHECK_THROWS_AS(ranks_to_rewards({0, 0}, 2), InvalidArgument);
    CHECK_THROWS_AS(ranks_to_rewards({0, 2}, 2), InvalidArgument);
    CHECK_THROWS_AS(ranks_to_rewards({0}, 2), InvalidArgument);
}

TEST_CASE("ranks_to_rewards: bounds, monotonicity and fixed sum over random permutations") {
    std::mt19937_64 rng(5);
    for (int G = 2; G <= 8; ++G) {
        std::vector<int> permutation(static_cast<size_t>(G));
        for (int i = 0; i < G; ++i) permutation[static_cast<size_t>(i)] = i;
        for (int trial = 0; trial < 20; ++trial) {
            std::shuffle(permutation.begin(), permutation.end(), rng);
            const std::vector<double> rewards = ranks_to_rewards(permutation, G);
            double sum = 0.0;
            for (double r : rewards) sum += r;
            CHECK(sum == doctest::Approx(G / 2.0).epsilon(1e-12));
            for (int p = 0; p + 1 < G; ++p) {
                CHECK(rewards[static_cast<size_t>(permutation[static_cast<size_t>(p)])] >
                      rewards[static_cast<size_t>(permutation[static_cast<size_t>(p + 1)])]);
            }
            for (double r : rewards) {
                CHECK(r >= 0.0);
                CHECK(r <= 1.0);
            }
        }
    }
}

TEST_CASE("ranking line encode/decode round-trips for all G up to 26") {
    std::mt19937_64 rng(17);
    for (int G = 1; G <= 26; ++G) {
        std::vector<int> permutation(static_cast<size_t>(G));
        for (int i = 0; i < G; ++i) permutation[static_cast<size_t>(i)] = i;
        std::shuffle(permutation.begin(), permutation.end(), rng);
        CHECK(parse_ranking_line(format_ranking_line(permutation), G) == permutation);
    }
}

namespace {

RolloutGroup group_with_rewards(std::vector<double> rewards) {
    RolloutGroup group;
    group.query = "q";
    for (size_t i = 0; i < rewards.size(); ++i) {
        Trace trace = trace_with_turns(1, "answer " + std::to_string(i));
        trace.turns[0].prompt_for_model = "shared prompt";
        group.traces.push_back(std::move(trace));
    }
    group.rewards = std::move(rewards);
    return group;
}

}  // namespace

TEST_CASE("make_preference_pairs: best_worst") {
    const RolloutGroup group = group_with_rewards({0.2, 0.9, 0.5});
    const std::vector<PreferencePair> pairs = make_preference_pairs(group);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].chosen == "FINAL: answer 1");
    CHECK(pairs[0].rejected == "FINAL: answer 0");
    CHECK(pairs[0].margin == doctest::Approx(0.7));
    CHECK(pairs[0].context == "shared prompt");
}

TEST_CASE("make_preference_pairs: ties are skipped entirely") {
    CHECK(make_preference_pairs(group_with_rewards({0.4, 0.4, 0.4})).empty());
    CHECK(make_preference_pairs(group_with_rewards({0.4, 0.4 + 1e-9})).empty());
}

TEST_CASE("make_preference_pairs: adjacent pairs enumerate rank neighbors") {
    const RolloutGroup group = group_with_rewards({1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0});
    const std::vector<PreferencePair> pairs =
        make_preference_pairs(group, PairScheme::adjacent);

    // Independent enumeration: sorted rewards are 1 > 2/3 > 1/3 > 0, so the
    // neighbor pairs are (0,1), (1,2), (2,3) with margin 1/3 each.
    REQUIRE(pairs.size() == 3);
    for (const PreferencePair& pair : pairs) {
        CHECK(pair.margin == doctest::Approx(1.0 / 3.0));
        CHECK(pair.margin > 0.0);
    }
    CHECK(pairs[0].chosen == "FINAL: answer 0");
    CHECK(pairs[0].rejected == "FINAL: answer 1");
    CHECK(pairs[2].chosen == "FINAL: answer 2");
    CHECK(pairs[2].rejected == "FINAL: answer 3");
}

TEST_CASE("make_preference_pairs: invariant under positive affine reward rescaling") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> rewards = {dist(rng), dist(rng), dist(rng), dist(rng)};
        const RolloutGroup group = group_with_rewards(rewards);
        std::vector<double> scaled;
        for (double r : rewards) scaled.push_back(3.7 * r + 11.0);
        const RolloutGroup scaled_group = group_with_rewards(scaled);

        const auto pairs = make_preference_pairs(group);
        const auto scaled_pairs = make_preference_pairs(scaled_group);
        REQUIRE(pairs.size() == scaled_pairs.size());
        for (size_t i = 0; i < pairs.size(); ++i) {
            CHECK(pairs[i].chosen == scaled_pairs[i].chosen);
            CHECK(pairs[i].rejected == scaled_pairs[i].rejected);
        }
    }
}

TEST_CASE("judge reward kind produces clamped, trace-indexed scores") {
    auto judge = std::make_shared<ScriptedPolicy>(ScriptedPolicy::Rules{}, "RANKING: B > A");
    const RewardSpec spec = wrap_judge(judge);
    const std::vector<Trace> traces = {trace_with_turns(1, "a"), trace_with_turns(1, "b")};
    const std::vector<double> scores = get_batch_scores(spec, traces, "q");
    CHECK(scores == std::vector<double>{0.0, 1.0});

    const std::vector<Trace> one = {trace_with_turns(1, "a")};
    CHECK(get_batch_scores(spec, one, "q") == std::vector<double>{1.0});
}
