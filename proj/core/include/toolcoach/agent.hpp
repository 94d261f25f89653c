#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "toolcoach/policy.hpp"
#include "toolcoach/trace.hpp"

namespace toolcoach {

/// A literal tool-call argument value.
using ToolValue = std::variant<std::string, long long, double, bool, std::vector<std::string>>;

/// Named arguments passed to a tool callable, already validated against the
/// tool's spec.
class ToolArgs {
public:
    explicit ToolArgs(std::map<std::string, ToolValue> values) : values_(std::move(values)) {}

    bool has(const std::string& name) const { return values_.count(name) > 0; }
    const std::string& get_string(const std::string& name) const;
    long long get_int(const std::string& name) const;
    double get_number(const std::string& name) const;  // accepts integer literals
    bool get_bool(const std::string& name) const;
    const std::vector<std::string>& get_string_list(const std::string& name) const;

private:
    const ToolValue& at(const std::string& name) const;
    std::map<std::string, ToolValue> values_;
};

using ToolFn = std::function<std::string(const ToolArgs&)>;

/// Mapping from tool name to (spec, callable). Lookup of an unregistered
/// name fails loudly; execute_tool_code reifies that into tool output.
class ToolRegistry {
public:
    void register_tool(ToolSpec spec, ToolFn fn);

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const ToolSpec& spec(const std::string& name) const;   // @throws InvalidArgument
    const ToolFn& callable(const std::string& name) const; // @throws InvalidArgument

    /// Specs in registration order.
    std::vector<ToolSpec> specs() const;

    /// Registry view restricted to `names` (unknown names are an error).
    ToolRegistry subset(const std::vector<std::string>& names) const;

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

private:
    struct Entry {
        ToolSpec spec;
        ToolFn fn;
    };
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

struct EpisodeConfig {
    int max_turns = 5;
    std::string system_prompt;  // empty -> default_system_prompt()
    std::chrono::milliseconds tool_timeout{10000};
};

/// The fixed, versioned system prompt explaining the completion grammar.
const std::string& default_system_prompt();

/// Deterministic rendering of tool specs as shown to the model.
std::string render_tool_specs(const std::vector<ToolSpec>& specs);

/// The exact prompt the policy sees on the turn following `prior_turns`.
std::string build_prompt(const EpisodeConfig& config, const std::vector<ToolSpec>& specs,
                         const std::string& query, const std::vector<Turn>& prior_turns);

/**
 * Execute the tool_code of a parsed completion: one or more call
 * expressions `name(arg=literal, ...)` with string, number, boolean and
 * string-list literals, run in order with outputs joined by newlines.
 *
 * Never throws: parse failures, unknown tools, argument mismatches, tool
 * exceptions and timeouts are all reified into the returned string with an
 * "ERROR:" prefix, so the agent sees its own errors.
 */
std::string execute_tool_code(const std::string& code, const ToolRegistry& registry,
                              std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

/**
 * Run one multi-turn episode: prompt, generate, parse, execute tools,
 * until a final answer or max_turns. Policy transport errors terminate the
 * episode with Terminated::error after recording partial turns.
 *
 * query_id defaults to a hash of the query text.
 */
Trace run_episode(Policy& policy, const ToolRegistry& registry, const std::string& query,
                  const EpisodeConfig& config, uint64_t episode_seed = 0,
                  std::string query_id = {});

/// G independent traces for one query; rollout i uses the sampling seed
/// mix_seed(base_seed, i) and query_id "<qid>/r<i>".
std::vector<Trace> collect_group(Policy& policy, const ToolRegistry& registry,
                                 const std::string& query, int group_size,
                                 const EpisodeConfig& config, uint64_t base_seed = 0);

}  // namespace toolcoach
