#include "toolcoach/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/external_policy.hpp"
#include "toolcoach/rng.hpp"
#include "toolcoach/version.hpp"

namespace toolcoach {

using nlohmann::json;

namespace {

std::string join_path(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

void reject_unknown_keys(const json& obj, const std::string& base,
                         std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* name : allowed) {
            if (key == name) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError("unknown key '" + join_path(base, key) + "'");
    }
}

const json* maybe(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

std::string want_string(const json& obj, const std::string& base, const char* key,
                        const std::string& fallback) {
    const json* v = maybe(obj, key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(join_path(base, key) + ": expected string");
    return v->get<std::string>();
}

double want_number(const json& obj, const std::string& base, const char* key, double fallback) {
    const json* v = maybe(obj, key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(join_path(base, key) + ": expected number");
    return v->get<double>();
}

int want_int(const json& obj, const std::string& base, const char* key, int fallback) {
    const json* v = maybe(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(join_path(base, key) + ": expected integer");
    return v->get<int>();
}

uint64_t want_u64(const json& obj, const std::string& base, const char* key, uint64_t fallback) {
    const json* v = maybe(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(join_path(base, key) + ": expected integer");
    return v->get<uint64_t>();
}

bool want_bool(const json& obj, const std::string& base, const char* key, bool fallback) {
    const json* v = maybe(obj, key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(join_path(base, key) + ": expected boolean");
    return v->get<bool>();
}

BackendConfig parse_backend(const json& obj, const std::string& base) {
    if (!obj.is_object()) throw ConfigError(base + ": expected object");
    reject_unknown_keys(obj, base,
                        {"kind", "templates", "context", "rules", "fallback", "model_id",
                         "temperature", "max_new_tokens"});
    BackendConfig backend;
    backend.kind = want_string(obj, base, "kind", "tiny");
    if (backend.kind != "tiny" && backend.kind != "scripted" && backend.kind != "external") {
        throw ConfigError(join_path(base, "kind") +
                          ": must be one of tiny, scripted, external");
    }
    if (const json* v = maybe(obj, "templates")) {
        if (!v->is_array()) throw ConfigError(join_path(base, "templates") + ": expected array");
        for (const json& item : *v) {
            if (!item.is_string()) {
                throw ConfigError(join_path(base, "templates") + ": expected array of strings");
            }
            backend.templates.push_back(item.get<std::string>());
        }
    }
    if (const json* v = maybe(obj, "rules")) {
        if (!v->is_array()) throw ConfigError(join_path(base, "rules") + ": expected array");
        for (const json& item : *v) {
            if (!item.is_array() || item.size() != 2 || !item[0].is_string() ||
                !item[1].is_string()) {
                throw ConfigError(join_path(base, "rules") +
                                  ": expected array of [needle, completion] pairs");
            }
            backend.rules.emplace_back(item[0].get<std::string>(), item[1].get<std::string>());
        }
    }
    backend.context = want_string(obj, base, "context", "query");
    if (backend.context != "query" && backend.context != "shared") {
        throw ConfigError(join_path(base, "context") + ": must be query or shared");
    }
    backend.fallback = want_string(obj, base, "fallback", "");
    backend.model_id = want_string(obj, base, "model_id", "");
    backend.temperature = want_number(obj, base, "temperature", 1.0);
    backend.max_new_tokens = want_int(obj, base, "max_new_tokens", 256);

    if (backend.kind == "tiny" && backend.templates.size() < 2) {
        throw ConfigError(join_path(base, "templates") + ": tiny backend needs >= 2 templates");
    }
    if (backend.kind == "external" && backend.model_id.empty()) {
        throw ConfigError(join_path(base, "model_id") + ": required for external backend");
    }
    return backend;
}

RewardConfig parse_reward(const json& obj, const std::string& base) {
    if (!obj.is_object()) throw ConfigError(base + ": expected object");
    reject_unknown_keys(obj, base, {"kind", "kwargs", "judge_backend"});
    RewardConfig reward;
    reward.kind = want_string(obj, base, "kind", "exact_match");
    static const char* kKinds[] = {"exact_match", "step_efficiency", "answered", "tool_call",
                                   "judge"};
    if (std::find_if(std::begin(kKinds), std::end(kKinds), [&](const char* k) {
            return reward.kind == k;
        }) == std::end(kKinds)) {
        throw ConfigError(join_path(base, "kind") +
                          ": must be one of exact_match, step_efficiency, answered, tool_call, judge");
    }
    if (const json* v = maybe(obj, "kwargs")) {
        if (!v->is_object()) throw ConfigError(join_path(base, "kwargs") + ": expected object");
        for (const auto& [key, value] : v->items()) {
            if (!value.is_string()) {
                throw ConfigError(join_path(base, "kwargs") + "." + key + ": expected string");
            }
            reward.kwargs[key] = value.get<std::string>();
        }
    }
    if (const json* v = maybe(obj, "judge_backend")) {
        reward.judge_backend = parse_backend(*v, join_path(base, "judge_backend"));
    }
    if (reward.kind == "judge" && !reward.judge_backend) {
        throw ConfigError(join_path(base, "judge_backend") + ": required for judge reward");
    }
    return reward;
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw ConfigError("config file '" + path.string() + "' is not a JSON object");
    }

    reject_unknown_keys(doc, "",
                        {"schema_version", "algorithm", "seed", "backend", "learner", "episode",
                         "reward", "corpus_path", "eval_items_path", "dataset_path",
                         "num_iterations", "enable_tool_retrieval", "distill", "checkpoint_dir",
                         "metrics_path", "checkpoint_every", "demo", "gen"});

    RunConfig config;
    config.schema_version = want_int(doc, "", "schema_version", 1);
    if (config.schema_version != kSchemaVersion) {
        throw ConfigError("schema_version: expected " + std::to_string(kSchemaVersion));
    }
    config.algorithm = want_string(doc, "", "algorithm", "GRPO");
    config.seed = want_u64(doc, "", "seed", 0);

    if (const json* v = maybe(doc, "backend")) {
        config.backend = parse_backend(*v, "backend");
    } else {
        throw ConfigError("backend: required");
    }

    if (const json* v = maybe(doc, "learner")) {
        if (!v->is_object()) throw ConfigError("learner: expected object");
        reject_unknown_keys(*v, "learner",
                            {"group_size", "clip_epsilon", "kl_beta", "dpo_beta", "learning_rate"});
        config.learner.group_size = want_int(*v, "learner", "group_size", 4);
        config.learner.clip_epsilon = want_number(*v, "learner", "clip_epsilon", 0.2);
        config.learner.kl_beta = want_number(*v, "learner", "kl_beta", 0.04);
        config.learner.dpo_beta = want_number(*v, "learner", "dpo_beta", 0.1);
        config.learner.learning_rate = want_number(*v, "learner", "learning_rate", 1e-2);
    }
    config.learner.seed = config.seed;

    if (const json* v = maybe(doc, "episode")) {
        if (!v->is_object()) throw ConfigError("episode: expected object");
        reject_unknown_keys(*v, "episode", {"max_turns", "system_prompt", "tool_timeout_ms"});
        config.episode.max_turns = want_int(*v, "episode", "max_turns", 5);
        config.episode.system_prompt = want_string(*v, "episode", "system_prompt", "");
        config.episode.tool_timeout =
            std::chrono::milliseconds(want_int(*v, "episode", "tool_timeout_ms", 10000));
    }

    if (const json* v = maybe(doc, "reward")) {
        config.reward = parse_reward(*v, "reward");
    }

    config.corpus_path = want_string(doc, "", "corpus_path", "");
    config.eval_items_path = want_string(doc, "", "eval_items_path", "");
    config.dataset_path = want_string(doc, "", "dataset_path", "");
    config.num_iterations = want_int(doc, "", "num_iterations", 1);
    config.enable_tool_retrieval = want_bool(doc, "", "enable_tool_retrieval", false);

    if (const json* v = maybe(doc, "distill")) {
        if (!v->is_object()) throw ConfigError("distill: expected object");
        reject_unknown_keys(*v, "distill",
                            {"num_traces", "quality_threshold", "cache_path", "teacher"});
        config.distill.num_traces = want_int(*v, "distill", "num_traces", 100);
        config.distill.quality_threshold = want_number(*v, "distill", "quality_threshold", 0.9);
        config.distill.cache_path = want_string(*v, "distill", "cache_path", "");
        if (const json* t = maybe(*v, "teacher")) {
            config.teacher = parse_backend(*t, "distill.teacher");
        }
    }

    config.checkpoint_dir = want_string(doc, "", "checkpoint_dir", "checkpoints");
    config.metrics_path = want_string(doc, "", "metrics_path", "metrics.jsonl");
    config.checkpoint_every = want_int(doc, "", "checkpoint_every", 10);

    if (const json* v = maybe(doc, "demo")) {
        if (!v->is_object()) throw ConfigError("demo: expected object");
        reject_unknown_keys(*v, "demo", {"n_emails"});
        config.demo_n_emails = want_int(*v, "demo", "n_emails", 1000);
    }

    if (const json* v = maybe(doc, "gen")) {
        if (!v->is_object()) throw ConfigError("gen: expected object");
        reject_unknown_keys(*v, "gen",
                            {"task_description", "num_examples", "min_tool_calls", "max_words",
                             "self_rank", "output_path"});
        config.gen_task_description = want_string(*v, "gen", "task_description", "");
        config.gen_num_examples = want_int(*v, "gen", "num_examples", 100);
        config.gen_min_tool_calls = want_int(*v, "gen", "min_tool_calls", 2);
        config.gen_max_words = want_int(*v, "gen", "max_words", 80);
        config.gen_self_rank = want_bool(*v, "gen", "self_rank", false);
        config.gen_output_path = want_string(*v, "gen", "output_path", "");
    }

    // Early rejection of bad hyperparameters and algorithm ids.
    LearnerConfig probe = config.learner;
    probe.algorithm = parse_algorithm(config.algorithm);
    validate_learner_config(probe);

    doc["seed"] = config.seed;
    char buf[32];
    const std::string canonical = doc.dump();
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical.data(), canonical.size())));
    config.digest = buf;
    return config;
}

void apply_seed_override(RunConfig& config, uint64_t seed) {
    config.seed = seed;
    config.learner.seed = seed;
    char buf[32];
    const std::string material = config.digest + ":seed=" + std::to_string(seed);
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(material.data(), material.size())));
    config.digest = buf;
}

std::shared_ptr<Policy> make_policy(const BackendConfig& backend, uint64_t seed) {
    SamplingParams sampling;
    sampling.temperature = backend.temperature;
    sampling.max_new_tokens = backend.max_new_tokens;
    sampling.seed = seed;
    if (backend.kind == "tiny") {
        TinyPolicy::ContextFn context_fn;  // default: per-query logits rows
        if (backend.context == "shared") {
            context_fn = [](const std::string&) { return std::string{}; };
        }
        return std::make_shared<TinyPolicy>(backend.templates, sampling, context_fn);
    }
    if (backend.kind == "scripted") {
        return std::make_shared<ScriptedPolicy>(backend.rules, backend.fallback);
    }
    if (backend.kind == "external") {
        return std::make_shared<ExternalChatPolicy>(endpoint_from_env(backend.model_id), sampling);
    }
    throw ConfigError("unknown backend kind '" + backend.kind + "'");
}

RewardSpec make_reward(const RewardConfig& reward, const std::vector<TaskExample>& dataset,
                       uint64_t seed) {
    if (reward.kind == "step_efficiency") {
        return wrap_reward(SingleTraceRewardFn(rewards::step_efficiency), reward.kwargs,
                           "step_efficiency");
    }
    if (reward.kind == "answered") {
        return wrap_reward(SingleTraceRewardFn(rewards::answered), reward.kwargs, "answered");
    }
    if (reward.kind == "tool_call") {
        return wrap_reward(SingleTraceRewardFn(rewards::tool_call), reward.kwargs, "tool_call");
    }
    if (reward.kind == "exact_match") {
        std::map<std::string, std::string> gold;
        for (const TaskExample& example : dataset) {
            if (example.gold_answer) gold[example.query] = *example.gold_answer;
        }
        return wrap_reward(rewards::exact_match(std::move(gold)), reward.kwargs, "exact_match");
    }
    if (reward.kind == "judge") {
        return wrap_judge(make_policy(*reward.judge_backend, seed), reward.kwargs);
    }
    throw ConfigError("unknown reward kind '" + reward.kind + "'");
}

BrainConfig make_brain_config(const RunConfig& config) {
    BrainConfig brain;
    brain.algorithm = config.algorithm;
    brain.learner = config.learner;
    brain.episode = config.episode;
    brain.enable_tool_retrieval = config.enable_tool_retrieval;
    brain.distill = config.distill;
    brain.checkpoint_dir = config.checkpoint_dir;
    brain.metrics_path = config.metrics_path;
    brain.checkpoint_every = config.checkpoint_every;
    brain.config_digest = config.digest;
    return brain;
}

void write_dataset(const std::filesystem::path& path, const std::vector<TaskExample>& examples) {
    std::vector<std::string> records;
    records.reserve(examples.size());
    for (const TaskExample& example : examples) {
        json j;
        j["query"] = example.query;
        if (example.gold_answer) j["gold_answer"] = *example.gold_answer;
        j["source"] = example.source == TaskExample::Source::generated ? "generated" : "user";
        records.push_back(j.dump());
    }
    write_record_file(path, RecordFileHeader{kSchemaVersion, std::string(kLibraryName)}, records);
}

std::vector<TaskExample> read_dataset(const std::filesystem::path& path) {
    auto [header, records] = read_record_file(path);
    std::vector<TaskExample> examples;
    examples.reserve(records.size());
    for (const std::string& record : records) {
        json j = json::parse(record, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("query")) {
            throw DecodeError("malformed dataset record in '" + path.string() + "'");
        }
        TaskExample example;
        example.query = j.at("query").get<std::string>();
        if (j.contains("gold_answer") && j.at("gold_answer").is_string()) {
            example.gold_answer = j.at("gold_answer").get<std::string>();
        }
        if (j.value("source", "user") == std::string("generated")) {
            example.source = TaskExample::Source::generated;
        }
        examples.push_back(std::move(example));
    }
    return examples;
}

}  // namespace toolcoach
