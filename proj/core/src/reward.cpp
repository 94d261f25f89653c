#include "toolcoach/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>

#include "toolcoach/errors.hpp"

namespace toolcoach {

RewardSpec wrap_reward(SingleTraceRewardFn fn, RewardKwargs kwargs, std::string id) {
    RewardSpec spec;
    spec.kind = RewardSpec::Kind::single_trace;
    spec.single_fn = std::move(fn);
    spec.kwargs = std::move(kwargs);
    spec.id = std::move(id);
    validate_reward_spec(spec);
    return spec;
}

RewardSpec wrap_reward(BatchRewardFn fn, RewardKwargs kwargs, std::string id) {
    RewardSpec spec;
    spec.kind = RewardSpec::Kind::batch;
    spec.batch_fn = std::move(fn);
    spec.kwargs = std::move(kwargs);
    spec.id = std::move(id);
    validate_reward_spec(spec);
    return spec;
}

RewardSpec wrap_judge(std::shared_ptr<Policy> judge_policy, RewardKwargs kwargs, std::string id) {
    RewardSpec spec;
    spec.kind = RewardSpec::Kind::judge;
    spec.judge_policy = std::move(judge_policy);
    spec.kwargs = std::move(kwargs);
    spec.id = id.empty()
                  ? (spec.judge_policy ? "judge:" + spec.judge_policy->backend_id() : "judge")
                  : std::move(id);
    validate_reward_spec(spec);
    return spec;
}

void validate_reward_spec(const RewardSpec& spec) {
    switch (spec.kind) {
        case RewardSpec::Kind::single_trace:
            if (!spec.single_fn) throw ConfigError("single_trace reward has no callable");
            return;
        case RewardSpec::Kind::batch:
            if (!spec.batch_fn) throw ConfigError("batch reward has no callable");
            return;
        case RewardSpec::Kind::judge:
            if (!spec.judge_policy) throw ConfigError("judge reward has no judge policy");
            return;
    }
    throw ConfigError("unrecognized reward shape");
}

namespace {

double sanitize(double score, size_t index) {
    if (!std::isfinite(score)) {
        std::cerr << "[toolcoach] warning: reward for trace " << index
                  << " is non-finite; scoring 0.0\n";
        return 0.0;
    }
    return score;
}

}  // namespace

std::vector<double> get_batch_scores(const RewardSpec& spec, const std::vector<Trace>& traces,
                                     const std::string& query) {
    if (traces.empty()) throw InvalidArgument("get_batch_scores needs at least one trace");
    validate_reward_spec(spec);

    std::vector<double> scores;
    scores.reserve(traces.size());

    switch (spec.kind) {
        case RewardSpec::Kind::single_trace: {
            for (size_t i = 0; i < traces.size(); ++i) {
                try {
                    scores.push_back(sanitize(spec.single_fn(traces[i], spec.kwargs), i));
                } catch (const std::exception& e) {
                    std::cerr << "[toolcoach] warning: reward callable threw for trace " << i
                              << " (" << e.what() << "); scoring 0.0\n";
                    scores.push_back(0.0);
                }
            }
            return scores;
        }
        case RewardSpec::Kind::batch: {
            try {
                std::vector<double> raw = spec.batch_fn(traces, spec.kwargs);
                if (raw.size() != traces.size()) {
                    std::cerr << "[toolcoach] warning: batch reward returned " << raw.size()
                              << " scores for " << traces.size() << " traces; scoring 0.0\n";
                    return std::vector<double>(traces.size(), 0.0);
                }
                for (size_t i = 0; i < raw.size(); ++i) scores.push_back(sanitize(raw[i], i));
                return scores;
            } catch (const std::exception& e) {
                std::cerr << "[toolcoach] warning: batch reward threw (" << e.what()
                          << "); scoring 0.0\n";
                return std::vector<double>(traces.size(), 0.0);
            }
        }
        case RewardSpec::Kind::judge: {
            if (traces.size() == 1) return {1.0};
            std::vector<int> permutation = judge_rank(*spec.judge_policy, query, traces);
            return ranks_to_rewards(permutation, static_cast<int>(traces.size()));
        }
    }
    throw ConfigError("unrecognized reward shape");
}

std::string build_judge_prompt(const std::string& query, const std::vector<Trace>& traces) {
    std::string out =
        "You are judging candidate transcripts of an agent answering a query.\n"
        "Rank the candidates from best to worst by how correctly and directly\n"
        "they answer the query.\n\n";
    out += "QUERY: " + query + "\n";
    for (size_t i = 0; i < traces.size(); ++i) {
        out += "\nCANDIDATE ";
        out += static_cast<char>('A' + i);
        out += ":\n";
        out += render_transcript(traces[i]);
    }
    out += "\nReply with exactly one line of the form:\nRANKING: ";
    for (size_t i = 0; i < traces.size(); ++i) {
        if (i > 0) out += " > ";
        out += static_cast<char>('A' + i);
    }
    out += '\n';
    return out;
}

std::string format_ranking_line(const std::vector<int>& permutation) {
    std::string line = "RANKING: ";
    for (size_t p = 0; p < permutation.size(); ++p) {
        if (p > 0) line += " > ";
        line += static_cast<char>('A' + permutation[p]);
    }
    return line;
}

std::vector<int> parse_ranking_line(const std::string& response, int group_size) {
    constexpr std::string_view marker = "RANKING:";
    size_t pos = response.find(marker);
    if (pos == std::string::npos) return {};
    size_t end = response.find('\n', pos);
    if (end == std::string::npos) end = response.size();
    std::string_view line(response.data() + pos + marker.size(), end - pos - marker.size());

    std::vector<int> permutation;
    std::vector<bool> seen(static_cast<size_t>(group_size), false);
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == ' ' || c == '>' || c == '\t' || c == '\r') continue;
        const int index = c - 'A';
        if (index < 0 || index >= group_size) return {};
        if (seen[static_cast<size_t>(index)]) return {};
        seen[static_cast<size_t>(index)] = true;
        permutation.push_back(index);
    }
    if (permutation.size() != static_cast<size_t>(group_size)) return {};
    return permutation;
}

std::vector<int> judge_rank(Policy& judge, const std::string& query,
                            const std::vector<Trace>& traces) {
    if (traces.size() < 2 || traces.size() > 26) {
        throw InvalidArgument("judge_rank requires 2 <= G <= 26");
    }
    const std::string prompt = build_judge_prompt(query, traces);
    const int group_size = static_cast<int>(traces.size());
    for (int attempt = 0; attempt < 2; ++attempt) {
        const std::string response = judge.generate(prompt);
        std::vector<int> permutation = parse_ranking_line(response, group_size);
        if (!permutation.empty()) return permutation;
        std::cerr << "[toolcoach] warning: judge ranking unparseable (attempt " << attempt + 1
                  << ")\n";
    }
    throw JudgeError("judge failed to produce a valid ranking after 2 attempts");
}

std::vector<double> ranks_to_rewards(const std::vector<int>& permutation, int group_size) {
    if (group_size < 1) throw InvalidArgument("group_size must be >= 1");
    if (permutation.size() != static_cast<size_t>(group_size)) {
        throw InvalidArgument("permutation size does not match group size");
    }
    std::vector<bool> seen(static_cast<size_t>(group_size), false);
    for (int index : permutation) {
        if (index < 0 || index >= group_size || seen[static_cast<size_t>(index)]) {
            throw InvalidArgument("not a valid permutation");
        }
        seen[static_cast<size_t>(index)] = true;
    }
    std::vector<double> rewards(static_cast<size_t>(group_size), 0.0);
    if (group_size == 1) {
        rewards[0] = 1.0;
        return rewards;
    }
    for (int p = 0; p < group_size; ++p) {
        rewards[static_cast<size_t>(permutation[static_cast<size_t>(p)])] =
            static_cast<double>(group_size - 1 - p) / static_cast<double>(group_size - 1);
    }
    return rewards;
}

std::vector<PreferencePair> make_preference_pairs(const RolloutGroup& group, PairScheme scheme) {
    if (group.traces.size() != group.rewards.size()) {
        throw InvalidArgument("group rewards not populated");
    }
    std::vector<PreferencePair> pairs;
    if (group.traces.empty()) return pairs;

    auto make_pair = [&](size_t chosen, size_t rejected) {
        PreferencePair pair;
        pair.context = group.traces[chosen].turns.empty()
                           ? std::string{}
                           : group.traces[chosen].turns.front().prompt_for_model;
        pair.chosen = render_completions(group.traces[chosen]);
        pair.rejected = render_completions(group.traces[rejected]);
        pair.margin = group.rewards[chosen] - group.rewards[rejected];
        return pair;
    };

    if (scheme == PairScheme::best_worst) {
        size_t best = 0;
        size_t worst = 0;
        for (size_t i = 1; i < group.rewards.size(); ++i) {
            if (group.rewards[i] > group.rewards[best]) best = i;
            if (group.rewards[i] < group.rewards[worst]) worst = i;
        }
        if (group.rewards[best] - group.rewards[worst] < 1e-6) return pairs;
        PreferencePair pair = make_pair(best, worst);
        if (pair.chosen != pair.rejected) pairs.push_back(std::move(pair));
        return pairs;
    }

    // adjacent: sort trace indices by reward, pair rank neighbors.
    std::vector<size_t> order(group.rewards.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return group.rewards[a] > group.rewards[b]; });
    for (size_t p = 0; p + 1 < order.size(); ++p) {
        const size_t hi = order[p];
        const size_t lo = order[p + 1];
        if (group.rewards[hi] - group.rewards[lo] <= 0.0) continue;
        PreferencePair pair = make_pair(hi, lo);
        if (pair.chosen != pair.rejected) pairs.push_back(std::move(pair));
    }
    return pairs;
}

namespace rewards {

double step_efficiency(const Trace& trace, const RewardKwargs& kwargs) {
    int max_turns = 5;
    if (auto it = kwargs.find("max_turns"); it != kwargs.end()) {
        max_turns = std::stoi(it->second);
    }
    const int num_turns = static_cast<int>(trace.turns.size());
    if (num_turns <= max_turns) return 1.0;
    const double penalty = (num_turns - max_turns) * 0.1;
    return std::max(0.0, 1.0 - penalty);
}

double answered(const Trace& trace, const RewardKwargs&) {
    return trace.terminated == Trace::Terminated::answered ? 1.0 : 0.0;
}

double tool_call(const Trace& trace, const RewardKwargs&) {
    for (const Turn& turn : trace.turns) {
        if (turn.tool_output && turn.tool_output->rfind("ERROR:", 0) != 0) return 1.0;
    }
    return 0.0;
}

namespace {

std::string normalize(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

}  // namespace

SingleTraceRewardFn exact_match(std::map<std::string, std::string> gold_by_query) {
    return [gold = std::move(gold_by_query)](const Trace& trace, const RewardKwargs&) -> double {
        auto it = gold.find(trace.query);
        if (it == gold.end()) return 0.0;
        if (trace.terminated != Trace::Terminated::answered || trace.turns.empty()) return 0.0;
        const auto& answer = trace.turns.back().parsed_completion.final_answer;
        if (!answer) return 0.0;
        const std::string haystack = normalize(*answer);
        const std::string needle = normalize(it->second);
        if (needle.empty()) return 0.0;
        return haystack.find(needle) != std::string::npos ? 1.0 : 0.0;
    };
}

}  // namespace rewards

}  // namespace toolcoach
