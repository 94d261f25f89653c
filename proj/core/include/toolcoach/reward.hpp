#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "toolcoach/policy.hpp"
#include "toolcoach/trace.hpp"

namespace toolcoach {

using RewardKwargs = std::map<std::string, std::string>;

/// trace -> scalar reward
using SingleTraceRewardFn = std::function<double(const Trace&, const RewardKwargs&)>;
/// whole group -> per-trace rewards (same length)
using BatchRewardFn =
    std::function<std::vector<double>(const std::vector<Trace>&, const RewardKwargs&)>;

/// A reward source behind the unified get_batch_scores interface. The three
/// shapes are distinguished at registration by the wrap_reward overloads.
struct RewardSpec {
    enum class Kind { single_trace, batch, judge };

    Kind kind = Kind::single_trace;
    std::string id;  // stable identifier; part of distill cache keys
    SingleTraceRewardFn single_fn;
    BatchRewardFn batch_fn;
    std::shared_ptr<Policy> judge_policy;
    RewardKwargs kwargs;
};

RewardSpec wrap_reward(SingleTraceRewardFn fn, RewardKwargs kwargs = {},
                       std::string id = "single_trace");
RewardSpec wrap_reward(BatchRewardFn fn, RewardKwargs kwargs = {}, std::string id = "batch");
RewardSpec wrap_judge(std::shared_ptr<Policy> judge_policy, RewardKwargs kwargs = {},
                      std::string id = {});

/// @throws ConfigError when the callable/policy does not match the kind.
void validate_reward_spec(const RewardSpec& spec);

/// G traces for one query with rewards and group-normalized advantages.
struct RolloutGroup {
    std::string query;
    std::vector<Trace> traces;
    std::vector<double> rewards;
    std::vector<double> advantages;
};

/// (context, chosen, rejected) extracted from a scored group.
struct PreferencePair {
    std::string context;  // the shared first-turn prompt
    std::string chosen;
    std::string rejected;
    double margin = 0.0;  // reward difference, > 0
};

/**
 * Score a batch of traces through one interface regardless of reward kind.
 *
 * A user callable that throws or returns a non-finite value scores 0.0 for
 * the affected traces and the incident is logged; training must not crash
 * on a bad reward. Judge failures (JudgeError) do propagate, so callers can
 * skip the whole step.
 */
std::vector<double> get_batch_scores(const RewardSpec& spec, const std::vector<Trace>& traces,
                                     const std::string& query);

/**
 * Ask the judge to rank G transcripts (2 <= G <= 26, labels A..Z) best to
 * worst. Returns the permutation: element p is the trace index at rank p.
 * One retry on a malformed ranking; two failures throw JudgeError.
 */
std::vector<int> judge_rank(Policy& judge, const std::string& query,
                            const std::vector<Trace>& traces);

/// Linear rank -> reward mapping on [0,1]: rank p gets (G-1-p)/(G-1);
/// output is indexed by trace. G=1 maps to {1.0}.
std::vector<double> ranks_to_rewards(const std::vector<int>& permutation, int group_size);

enum class PairScheme { best_worst, adjacent };

/// Extract preference pairs from a scored group. best_worst yields at most
/// one pair and skips entirely when max-min < 1e-6; adjacent pairs rank
/// neighbors with strictly positive margin.
std::vector<PreferencePair> make_preference_pairs(const RolloutGroup& group,
                                                  PairScheme scheme = PairScheme::best_worst);

/// The judging prompt for a query and labeled transcripts (versioned).
std::string build_judge_prompt(const std::string& query, const std::vector<Trace>& traces);

/// "RANKING: A > B > ..." for a permutation (trace index by rank).
std::string format_ranking_line(const std::vector<int>& permutation);

/// Parse a ranking line out of a judge response; empty result on failure.
std::vector<int> parse_ranking_line(const std::string& response, int group_size);

namespace rewards {

/// 1.0 for traces within kwargs["max_turns"] (default 5) turns, then a 0.1
/// penalty per extra turn, floored at 0.
double step_efficiency(const Trace& trace, const RewardKwargs& kwargs);

/// 1.0 when the episode terminated with a final answer, else 0.0.
double answered(const Trace& trace, const RewardKwargs& kwargs);

/// 1.0 when any turn made a tool call that did not come back as an ERROR.
double tool_call(const Trace& trace, const RewardKwargs& kwargs);

/// Reward 1.0 when the trace answered and the final answer contains the
/// expected gold answer (case/whitespace-insensitive), else 0.0.
SingleTraceRewardFn exact_match(std::map<std::string, std::string> gold_by_query);

}  // namespace rewards

}  // namespace toolcoach
