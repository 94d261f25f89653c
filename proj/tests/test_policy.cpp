#include <cmath>

#include "doctest.h"
#include "support/helpers.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/policy.hpp"
#include "toolcoach/rng.hpp"

using namespace toolcoach;

namespace {

std::shared_ptr<TinyPolicy> make_tiny(std::vector<std::string> templates, double temperature = 1.0,
                                      uint64_t seed = 0) {
    return std::make_shared<TinyPolicy>(std::move(templates),
                                        SamplingParams{temperature, 16, seed});
}

}  // namespace

TEST_CASE("scripted policy: table lookup with fallback") {
    ScriptedPolicy policy({{"Q1", "FINAL: A"}}, "FINAL: fallback");
    CHECK(policy.generate("prompt containing Q1 somewhere", 0) == "FINAL: A");
    CHECK(policy.generate("no key here", 0) == "FINAL: fallback");
    CHECK_FALSE(policy.trainable());
    CHECK_THROWS_AS(policy.score_completion("p", "c"), CapabilityError);
    CHECK_THROWS_AS(policy.apply_update(Objective{}, 0.1), CapabilityError);
}

TEST_CASE("callback policy counts generate calls") {
    CallbackPolicy policy([](const std::string&) { return "hi"; });
    CHECK(policy.call_count() == 0);
    policy.generate("a", 1);
    policy.generate("b", 2);
    CHECK(policy.call_count() == 2);
}

TEST_CASE("tiny policy: uniform logits sample each template ~1/K") {
    auto policy = make_tiny({"t0", "t1", "t2", "t3"});
    std::map<std::string, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        counts[policy->generate("QUERY: x\n", static_cast<uint64_t>(i))]++;
    }
    for (const std::string& t : policy->templates()) {
        const double freq = counts[t] / static_cast<double>(draws);
        CHECK(freq == doctest::Approx(0.25).epsilon(0.08));  // 0.25 +- 0.02
        CHECK(std::fabs(freq - 0.25) <= 0.02);
    }
}

TEST_CASE("tiny policy: temperature 0 is argmax and deterministic") {
    auto policy = make_tiny({"a", "b", "c"}, 0.0);
    // Nudge template 1 up through an update.
    policy->apply_update(
        [](diff::Tape& tape, DiffScorer& scorer) {
            return -(scorer.token_logprobs("QUERY: x\n", "b")[0]) + tape.constant(0.0);
        },
        1.0);
    const std::string first = policy->generate("QUERY: x\n", 1);
    for (uint64_t seed = 2; seed < 20; ++seed) {
        CHECK(policy->generate("QUERY: x\n", seed) == first);
    }
    CHECK(first == "b");
}

TEST_CASE("tiny policy: generation is deterministic given (prompt, seed)") {
    auto a = make_tiny({"x", "y", "z"});
    auto b = make_tiny({"x", "y", "z"});
    for (uint64_t seed = 0; seed < 50; ++seed) {
        CHECK(a->generate("QUERY: q\n", seed) == b->generate("QUERY: q\n", seed));
    }
}

TEST_CASE("tiny policy: score_completion closed forms") {
    auto policy = make_tiny({"t0", "t1"});
    const TokenScore score = policy->score_completion("QUERY: x\n", "t0");
    REQUIRE(score.logprobs.size() == 1);
    REQUIRE(score.mask.size() == 1);
    CHECK(score.mask[0]);
    CHECK(score.token_ids[0] == 0);
    CHECK(score.logprobs[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));

    CHECK_THROWS_AS(policy->score_completion("QUERY: x\n", "not a template"), OutOfSupportError);
}

TEST_CASE("tiny policy: distributions normalize for every context class") {
    auto policy = make_tiny({"t0", "t1", "t2"});
    // Touch several context classes with updates of varying size.
    for (int q = 0; q < 5; ++q) {
        const std::string prompt = "QUERY: q" + std::to_string(q) + "\n";
        policy->apply_update(
            [&](diff::Tape&, DiffScorer& scorer) {
                return -(scorer.token_logprobs(prompt, "t1")[0]) * (0.3 * q);
            },
            0.7);
    }
    for (const std::string& context : policy->context_classes()) {
        double total = 0.0;
        for (size_t k = 0; k < policy->vocab_size(); ++k) {
            const std::string prompt = "QUERY: " + context + "\n";
            total += std::exp(policy->score_completion(prompt, policy->templates()[k]).logprobs[0]);
        }
        CHECK(std::fabs(total - 1.0) < 1e-9);
        double prob_sum = 0.0;
        for (double p : policy->distribution(context)) prob_sum += p;
        CHECK(std::fabs(prob_sum - 1.0) < 1e-12);
    }
}

TEST_CASE("snapshot_reference freezes scores") {
    auto policy = make_tiny({"t0", "t1"});
    auto snapshot = policy->snapshot_reference();
    const double before = snapshot->score_completion("QUERY: x\n", "t0").logprobs[0];

    for (int i = 0; i < 100; ++i) {
        policy->apply_update(
            [](diff::Tape&, DiffScorer& scorer) {
                return -(scorer.token_logprobs("QUERY: x\n", "t0")[0]);
            },
            0.05);
    }
    const double after = snapshot->score_completion("QUERY: x\n", "t0").logprobs[0];
    CHECK(before == after);  // bitwise

    SUBCASE("snapshot of snapshot scores identically") {
        auto snap2 = snapshot->snapshot_reference();
        CHECK(snap2->score_completion("QUERY: x\n", "t1").logprobs[0] ==
              snapshot->score_completion("QUERY: x\n", "t1").logprobs[0]);
    }
    SUBCASE("snapshot rejects updates") {
        CHECK_FALSE(snapshot->trainable());
        CHECK_THROWS_AS(snapshot->apply_update(Objective{}, 0.1), CapabilityError);
    }
    SUBCASE("KL(source || snapshot) is nonnegative after updates") {
        const std::vector<double> p = policy->distribution("x");
        const std::vector<double> q =
            std::dynamic_pointer_cast<TinyPolicy>(snapshot)->distribution("x");
        double kl = 0.0;
        for (size_t k = 0; k < p.size(); ++k) kl += p[k] * std::log(p[k] / q[k]);
        CHECK(kl >= 0.0);
        CHECK(kl > 1e-3);  // the source actually moved
    }
}

TEST_CASE("apply_update: gradient sign, zero step, pre-step value") {
    auto policy = make_tiny({"t0", "t1"});
    Objective objective = [](diff::Tape&, DiffScorer& scorer) {
        return -(scorer.token_logprobs("QUERY: x\n", "t0")[0]);
    };

    const double before = policy->eval_objective(objective);
    CHECK(before == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    SUBCASE("one step raises the target logit") {
        const double pre = policy->apply_update(objective, 0.1);
        CHECK(pre == before);
        CHECK(policy->eval_objective(objective) < before);
        CHECK(policy->distribution("x")[0] > 0.5);
    }
    SUBCASE("learning rate 0 leaves parameters unchanged") {
        const std::vector<double> params = policy->flat_params();
        policy->apply_update(objective, 0.0);
        CHECK(policy->flat_params() == params);
    }
    SUBCASE("non-finite objective value leaves parameters unchanged") {
        Objective bad = [](diff::Tape& tape, DiffScorer& scorer) {
            return scorer.token_logprobs("QUERY: x\n", "t0")[0] / tape.constant(0.0);
        };
        const std::vector<double> params = policy->flat_params();
        CHECK_THROWS_AS(policy->apply_update(bad, 0.1), NumericalError);
        CHECK(policy->flat_params() == params);
    }
}

TEST_CASE("value_and_grad matches central finite differences") {
    auto policy = make_tiny({"t0", "t1", "t2"});
    // Random-ish starting point.
    policy->apply_update(
        [](diff::Tape&, DiffScorer& scorer) {
            return scorer.token_logprobs("QUERY: a\n", "t1")[0] * 0.37 -
                   scorer.token_logprobs("QUERY: b\n", "t2")[0] * 0.91;
        },
        0.33);

    Objective objective = [](diff::Tape& tape, DiffScorer& scorer) {
        diff::Var a = scorer.token_logprobs("QUERY: a\n", "t0")[0];
        diff::Var b = scorer.token_logprobs("QUERY: b\n", "t1")[0];
        return diff::softplus(-(a - b) * 0.4) + diff::exp(a * 0.2) * 0.3;
    };
    auto [value, grad] = policy->value_and_grad(objective);
    const std::vector<double> fd = toolcoach::testing::finite_difference_grad(*policy, objective);
    REQUIRE(grad.size() == fd.size());
    CHECK(toolcoach::testing::max_relative_error(grad, fd) < 1e-4);
    CHECK(value == doctest::Approx(policy->eval_objective(objective)));
}

TEST_CASE("tiny policy parameters serialize and reload") {
    auto policy = make_tiny({"t0", "t1"});
    policy->apply_update(
        [](diff::Tape&, DiffScorer& scorer) {
            return -(scorer.token_logprobs("QUERY: x\n", "t0")[0]) * 2.0;
        },
        0.25);
    const std::string payload = policy->serialize_params();

    auto fresh = make_tiny({"t0", "t1"});
    fresh->load_params(payload);
    CHECK(fresh->flat_params() == policy->flat_params());
    CHECK(fresh->distribution("x") == policy->distribution("x"));

    auto mismatched = make_tiny({"other", "vocab"});
    CHECK_THROWS_AS(mismatched->load_params(payload), DecodeError);
    CHECK_THROWS_AS(fresh->load_params("{not json"), DecodeError);
}

TEST_CASE("tiny policy requires at least two templates") {
    CHECK_THROWS_AS(TinyPolicy({"only"}, SamplingParams{}), ConfigError);
}
