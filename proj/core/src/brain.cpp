#include "toolcoach/brain.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/rng.hpp"
#include "toolcoach/version.hpp"

namespace toolcoach {

using nlohmann::json;

namespace {

void ensure_writable_dir(const std::filesystem::path& dir, const char* what) {
    if (dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw ConfigError(std::string(what) + " path '" + dir.string() + "' is not writable");
    }
}

void ensure_writable_file(const std::filesystem::path& path, const char* what) {
    if (path.has_parent_path()) ensure_writable_dir(path.parent_path(), what);
    std::ofstream probe(path, std::ios::app);
    if (!probe) {
        throw ConfigError(std::string(what) + " path '" + path.string() + "' is not writable");
    }
}

int word_count(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    int count = 0;
    while (in >> word) ++count;
    return count;
}

// Skips that signal a failing pipeline, as opposed to benign ones (tied
// rewards, missing gold answers) that occur in healthy converged runs.
bool is_failure_skip(const StepReport& report) {
    return report.skipped && (report.skip_reason.rfind("reward failure", 0) == 0 ||
                              report.skip_reason.rfind("scoring failure", 0) == 0 ||
                              report.skip_reason.rfind("target out of support", 0) == 0);
}

}  // namespace

Brain::Brain(std::shared_ptr<Policy> policy, ToolRegistry registry, RewardSpec reward,
             BrainConfig config)
    : policy_(std::move(policy)),
      registry_(std::move(registry)),
      reward_(std::move(reward)),
      config_(std::move(config)) {
    if (!policy_) throw ConfigError("brain requires a policy");
    config_.learner.algorithm = parse_algorithm(config_.algorithm);
    validate_learner_config(config_.learner);
    validate_reward_spec(reward_);
    if (config_.checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (config_.distill.num_traces < 1) throw ConfigError("distill.num_traces must be >= 1");
    if (config_.distill.quality_threshold < 0.0 || config_.distill.quality_threshold > 1.0) {
        throw ConfigError("distill.quality_threshold must be in [0, 1]");
    }
    ensure_writable_dir(config_.checkpoint_dir, "checkpoint");
    ensure_writable_file(config_.metrics_path, "metrics");
    if (!config_.distill.cache_path.empty()) {
        ensure_writable_dir(config_.distill.cache_path, "distill cache");
    }
    learner_ = make_learner(config_.learner);
    retrieval_policy_ = policy_;
}

ToolRegistry Brain::episode_registry(const std::string& query) {
    if (!config_.enable_tool_retrieval) return registry_;
    std::vector<ToolSpec> specs = retrieve_tools(query);
    std::vector<std::string> names;
    names.reserve(specs.size());
    for (const ToolSpec& spec : specs) names.push_back(spec.name);
    return registry_.subset(names);
}

void Brain::append_metrics(const StepReport& report) {
    const bool fresh = !std::filesystem::exists(config_.metrics_path) ||
                       std::filesystem::file_size(config_.metrics_path) == 0;
    std::ofstream out(config_.metrics_path, std::ios::app);
    if (!out) throw Error("cannot append to metrics file '" + config_.metrics_path.string() + "'");
    if (fresh) {
        json header;
        header["schema_version"] = kSchemaVersion;
        header["producer"] = std::string(kLibraryName);
        header["config_digest"] = config_.config_digest;
        out << header.dump() << '\n';
    }
    json record;
    record["step"] = report.step;
    record["algorithm"] = report.algorithm;
    record["loss"] = report.loss;
    record["mean_reward"] = report.mean_reward;
    record["kl_value"] = report.kl_value;
    record["wall_time_ms"] = report.wall_time_ms;
    record["skipped"] = report.skipped;
    out << record.dump() << '\n';
}

std::vector<StepReport> Brain::train(const std::vector<TaskExample>& dataset, int num_iterations) {
    if (dataset.empty()) throw InvalidArgument("train requires a non-empty dataset");
    if (num_iterations < 1) throw InvalidArgument("num_iterations must be >= 1");

    if (next_step_ == 0) {
        // Fresh run: truncate the metrics file so reruns are byte-comparable.
        std::ofstream(config_.metrics_path, std::ios::trunc);
    }

    const int len = static_cast<int>(dataset.size());
    const int total_steps = num_iterations * len;
    std::vector<StepReport> reports;

    int iteration_failures = 0;
    int iteration_executed = 0;
    std::string last_failure;

    for (int step = next_step_; step < total_steps; ++step) {
        const TaskExample& example = dataset[static_cast<size_t>(step % len)];
        const uint64_t step_seed = mix_seed(config_.learner.seed, static_cast<uint64_t>(step));
        ToolRegistry registry = episode_registry(example.query);

        StepReport report = learner_->train_step(*policy_, registry, example, reward_,
                                                 config_.episode, step_seed);
        report.step = step;
        append_metrics(report);

        ++iteration_executed;
        if (is_failure_skip(report)) {
            ++iteration_failures;
            last_failure = report.skip_reason;
        }
        reports.push_back(std::move(report));
        next_step_ = step + 1;

        if (next_step_ % config_.checkpoint_every == 0) write_checkpoint(next_step_);

        const bool iteration_end = (step + 1) % len == 0 || step + 1 == total_steps;
        if (iteration_end) {
            if (iteration_failures * 2 > iteration_executed) {
                throw Error("training aborted: " + std::to_string(iteration_failures) + " of " +
                            std::to_string(iteration_executed) +
                            " steps failed in iteration " + std::to_string(step / len) +
                            " (last: " + last_failure + ")");
            }
            iteration_failures = 0;
            iteration_executed = 0;
        }
    }
    return reports;
}

std::string distill_cache_key(const std::string& teacher_id, const std::string& query,
                              const std::string& reward_id) {
    std::string material = teacher_id;
    material += '\x1f';
    material += query;
    material += '\x1f';
    material += reward_id;
    material += '\x1f';
    material += std::to_string(kSchemaVersion);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(material.data(), material.size())));
    return buf;
}

int Brain::distill(const std::vector<TaskExample>& dataset, std::shared_ptr<Policy> teacher) {
    if (!teacher) throw ConfigError("distill requires a teacher policy");
    if (dataset.empty()) throw InvalidArgument("distill requires a non-empty dataset");
    if (config_.distill.cache_path.empty()) throw ConfigError("distill.cache_path is not set");
    if (!policy_->trainable()) throw ConfigError("student policy is not trainable");

    int trained = 0;
    for (const TaskExample& example : dataset) {
        const std::string key =
            distill_cache_key(teacher->backend_id(), example.query, reward_.id);
        const std::filesystem::path cache_file =
            config_.distill.cache_path / (key + ".jsonl");

        std::vector<Trace> traces;
        std::vector<double> rewards;
        if (std::filesystem::exists(cache_file)) {
            auto [header, records] = read_record_file(cache_file);
            if (header.schema_version != kSchemaVersion) {
                throw DecodeError("distill cache '" + cache_file.string() +
                                  "' has schema_version " + std::to_string(header.schema_version));
            }
            for (const std::string& record : records) {
                json j = json::parse(record, nullptr, false);
                if (j.is_discarded() || !j.contains("trace") || !j.contains("reward")) {
                    throw DecodeError("malformed distill cache record in '" + cache_file.string() + "'");
                }
                traces.push_back(decode_trace(j.at("trace").dump()));
                rewards.push_back(j.at("reward").get<double>());
            }
        } else {
            ToolRegistry registry = episode_registry(example.query);
            for (int i = 0; i < config_.distill.num_traces; ++i) {
                const uint64_t seed =
                    mix_seed(mix_seed(config_.learner.seed, 0xd157111ULL), static_cast<uint64_t>(i));
                traces.push_back(run_episode(*teacher, registry, example.query, config_.episode,
                                             seed, "distill/" + key + "/r" + std::to_string(i)));
            }
            try {
                rewards = get_batch_scores(reward_, traces, example.query);
            } catch (const JudgeError& e) {
                std::cerr << "[toolcoach] warning: distill reward failed for query '"
                          << example.query << "' (" << e.what() << "); no traces kept\n";
                rewards.assign(traces.size(), 0.0);
            }
            std::vector<std::string> records;
            records.reserve(traces.size());
            for (size_t i = 0; i < traces.size(); ++i) {
                json record;
                record["trace"] = json::parse(encode_trace(traces[i]));
                record["reward"] = rewards[i];
                records.push_back(record.dump());
            }
            write_record_file(cache_file, RecordFileHeader{kSchemaVersion, teacher->backend_id()},
                              records);
        }

        // F = {traces with reward strictly above the threshold}
        for (size_t i = 0; i < traces.size(); ++i) {
            if (!(rewards[i] > config_.distill.quality_threshold)) continue;
            const Trace& trace = traces[i];
            if (trace.turns.empty()) continue;
            std::vector<Objective> turn_losses;
            turn_losses.reserve(trace.turns.size());
            for (const Turn& turn : trace.turns) {
                turn_losses.push_back(masked_sft_loss(turn.prompt_for_model, turn.model_completion));
            }
            Objective objective = [losses = std::move(turn_losses)](diff::Tape& tape,
                                                                    DiffScorer& scorer) {
                diff::Var total = tape.constant(0.0);
                for (const Objective& loss : losses) total = total + loss(tape, scorer);
                return total / static_cast<double>(losses.size());
            };
            try {
                policy_->apply_update(objective, config_.learner.learning_rate);
                ++trained;
            } catch (const OutOfSupportError&) {
                std::cerr << "[toolcoach] warning: teacher trace " << trace.query_id
                          << " is outside the student's support; skipped\n";
            }
        }
    }
    if (trained == 0) {
        std::cerr << "[toolcoach] warning: no teacher trace passed the quality threshold; "
                     "student unchanged\n";
    }
    return trained;
}

std::vector<TaskExample> Brain::generate_training_examples(const GenerateParams& params) {
    if (params.num_examples < 1) throw InvalidArgument("num_examples must be >= 1");
    if (params.max_words < 1) throw InvalidArgument("max_words must be >= 1");
    if (params.min_tool_calls < 0) throw InvalidArgument("min_tool_calls must be >= 0");

    const std::vector<ToolSpec> specs =
        params.external_tools.empty() ? registry_.specs() : params.external_tools;
    if (specs.empty()) throw ConfigError("no tool specs available for generation");
    Policy& model = params.external_model ? *params.external_model : *policy_;

    std::vector<std::string> valid_names;
    valid_names.reserve(specs.size());
    for (const ToolSpec& spec : specs) valid_names.push_back(spec.name);

    std::vector<TaskExample> accepted;
    std::vector<std::string> seen_queries;

    for (int attempt = 0; attempt < 3 && static_cast<int>(accepted.size()) < params.num_examples;
         ++attempt) {
        const int remaining = params.num_examples - static_cast<int>(accepted.size());
        std::string prompt =
            "Write training queries for an agent that answers by calling tools.\n\nTOOLS:\n";
        prompt += render_tool_specs(specs);
        prompt += "\nTASK: " + params.task_description + "\n\nRules:\n";
        prompt += "- each query must require at least " + std::to_string(params.min_tool_calls) +
                  " tool calls\n";
        prompt += "- each query must be at most " + std::to_string(params.max_words) + " words\n";
        prompt += "- also provide a gold answer for each query when one can be stated\n";
        if (!params.guidance_examples.empty()) {
            prompt += "\nEXAMPLES:\n";
            for (const std::string& example : params.guidance_examples) {
                prompt += "- " + example + "\n";
            }
        }
        prompt += "\nWrite " + std::to_string(remaining) +
                  " queries. Reply with one JSON object per line:\n"
                  "{\"query\": \"...\", \"required_tools\": [\"tool_name\"], "
                  "\"gold_answer\": \"...\"}\n";

        std::string response;
        try {
            response = model.generate(prompt, mix_seed(config_.learner.seed,
                                                       0x6e357a5bULL + static_cast<uint64_t>(attempt)));
        } catch (const TransportError& e) {
            std::cerr << "[toolcoach] warning: generator failed (" << e.what()
                      << "); returning partial result\n";
            break;
        }

        std::istringstream lines(response);
        std::string line;
        while (std::getline(lines, line) &&
               static_cast<int>(accepted.size()) < params.num_examples) {
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("query")) continue;
            if (!j.at("query").is_string()) continue;
            const std::string query = j.at("query").get<std::string>();
            if (query.empty() || word_count(query) > params.max_words) continue;

            int known_tools = 0;
            if (j.contains("required_tools") && j.at("required_tools").is_array()) {
                for (const json& name : j.at("required_tools")) {
                    if (!name.is_string()) continue;
                    if (std::find(valid_names.begin(), valid_names.end(),
                                  name.get<std::string>()) != valid_names.end()) {
                        ++known_tools;
                    }
                }
            }
            if (known_tools < params.min_tool_calls) continue;
            if (std::find(seen_queries.begin(), seen_queries.end(), query) != seen_queries.end()) {
                continue;
            }

            TaskExample example;
            example.query = query;
            example.source = TaskExample::Source::generated;
            if (j.contains("gold_answer") && j.at("gold_answer").is_string() &&
                !j.at("gold_answer").get<std::string>().empty()) {
                example.gold_answer = j.at("gold_answer").get<std::string>();
            }
            seen_queries.push_back(query);
            accepted.push_back(std::move(example));
        }
    }

    if (static_cast<int>(accepted.size()) < params.num_examples) {
        std::cerr << "[toolcoach] warning: generated only " << accepted.size() << " of "
                  << params.num_examples << " requested examples\n";
    }

    if (params.self_rank && accepted.size() > 1) {
        std::vector<std::string> queries;
        queries.reserve(accepted.size());
        for (const TaskExample& example : accepted) queries.push_back(example.query);
        const std::vector<std::string> ranked =
            self_rank_queries(queries, params.task_description);
        std::vector<TaskExample> reordered;
        reordered.reserve(accepted.size());
        for (const std::string& query : ranked) {
            auto it = std::find_if(accepted.begin(), accepted.end(),
                                   [&](const TaskExample& e) { return e.query == query; });
            if (it != accepted.end()) reordered.push_back(*it);
        }
        if (reordered.size() == accepted.size()) accepted = std::move(reordered);
    }
    return accepted;
}

std::vector<std::string> Brain::self_rank_queries(const std::vector<std::string>& queries,
                                                  const std::string& task_description) {
    if (queries.empty()) throw InvalidArgument("self_rank_queries needs at least one query");
    if (queries.size() == 1) return queries;

    std::string prompt =
        "Rank these candidate training queries for the task below, best first.\n"
        "Judge each query by how well it matches the task, whether it uses tool\n"
        "arguments correctly, and its overall concreteness.\n\nTASK: " +
        task_description + "\n\nQUERIES:\n";
    for (size_t i = 0; i < queries.size(); ++i) {
        prompt += std::to_string(i + 1) + ". " + queries[i] + "\n";
    }
    prompt += "\nReply with one line: RANKING: 1 > 2 > ...\n";

    Policy& ranker = retrieval_policy_ ? *retrieval_policy_ : *policy_;
    std::string response;
    try {
        response = ranker.generate(prompt, mix_seed(config_.learner.seed, 0x5e1f4aULL));
    } catch (const std::exception& e) {
        std::cerr << "[toolcoach] warning: self-rank failed (" << e.what()
                  << "); keeping input order\n";
        return queries;
    }

    // Parse numeric labels after "RANKING:".
    constexpr std::string_view marker = "RANKING:";
    const size_t pos = response.find(marker);
    if (pos == std::string::npos) {
        std::cerr << "[toolcoach] warning: self-rank reply had no RANKING line; keeping input order\n";
        return queries;
    }
    size_t end = response.find('\n', pos);
    if (end == std::string::npos) end = response.size();
    std::string line = response.substr(pos + marker.size(), end - pos - marker.size());

    std::vector<size_t> order;
    std::vector<bool> seen(queries.size(), false);
    size_t i = 0;
    while (i < line.size()) {
        if (!std::isdigit(static_cast<unsigned char>(line[i]))) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
        const int label = std::stoi(line.substr(i, j - i));
        i = j;
        if (label < 1 || label > static_cast<int>(queries.size()) ||
            seen[static_cast<size_t>(label - 1)]) {
            std::cerr << "[toolcoach] warning: invalid self-rank labels; keeping input order\n";
            return queries;
        }
        seen[static_cast<size_t>(label - 1)] = true;
        order.push_back(static_cast<size_t>(label - 1));
    }
    if (order.size() != queries.size()) {
        std::cerr << "[toolcoach] warning: incomplete self-rank; keeping input order\n";
        return queries;
    }
    std::vector<std::string> ranked;
    ranked.reserve(queries.size());
    for (size_t index : order) ranked.push_back(queries[index]);
    return ranked;
}

std::vector<ToolSpec> Brain::retrieve_tools(const std::string& query) {
    const std::vector<ToolSpec> all = registry_.specs();
    if (!config_.enable_tool_retrieval) return all;
    if (registry_.empty()) throw ConfigError("tool retrieval requires a non-empty registry");

    std::string prompt =
        "Select the tools needed to answer the query below.\n\nQUERY: " + query +
        "\n\nAVAILABLE TOOLS:\n";
    for (const ToolSpec& spec : all) {
        prompt += "- " + spec.name + ": " + spec.description + "\n";
    }
    prompt += "\nReply with one line: TOOLS: name1, name2\n";

    Policy& retriever = retrieval_policy_ ? *retrieval_policy_ : *policy_;
    std::string response;
    try {
        response = retriever.generate(prompt, mix_seed(config_.learner.seed, 0x7001aULL));
    } catch (const std::exception& e) {
        std::cerr << "[toolcoach] warning: tool retrieval failed (" << e.what()
                  << "); using all tools\n";
        return all;
    }

    constexpr std::string_view marker = "TOOLS:";
    const size_t pos = response.find(marker);
    if (pos == std::string::npos) {
        std::cerr << "[toolcoach] warning: retrieval reply had no TOOLS line; using all tools\n";
        return all;
    }
    size_t end = response.find('\n', pos);
    if (end == std::string::npos) end = response.size();
    const std::string line = response.substr(pos + marker.size(), end - pos - marker.size());

    std::vector<ToolSpec> selected;
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        for (const ToolSpec& spec : all) {
            const bool already = std::any_of(selected.begin(), selected.end(),
                                             [&](const ToolSpec& s) { return s.name == token; });
            if (spec.name == token && !already) {
                selected.push_back(spec);
                break;
            }
        }
        token.clear();  // unknown names are dropped
    };
    for (char c : line) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
            token += c;
        } else {
            flush();
        }
    }
    flush();

    if (selected.empty()) {
        std::cerr << "[toolcoach] warning: retrieval selected no known tools; using all tools\n";
        return all;
    }
    return selected;
}

void Brain::write_checkpoint(int next_step) const {
    const std::filesystem::path dir =
        config_.checkpoint_dir / ("checkpoint_" + std::to_string(next_step));
    std::filesystem::create_directories(dir);

    json state;
    state["schema_version"] = kSchemaVersion;
    state["next_step"] = next_step;
    state["algorithm"] = to_string(config_.learner.algorithm);
    state["seed"] = config_.learner.seed;
    state["config_digest"] = config_.config_digest;
    std::ofstream(dir / "state.json") << state.dump() << '\n';

    if (const auto* tiny = dynamic_cast<const TinyPolicy*>(policy_.get())) {
        std::ofstream(dir / "policy.json") << tiny->serialize_params() << '\n';
    }
    if (learner_->reference()) {
        if (const auto* ref = dynamic_cast<const TinyPolicy*>(learner_->reference().get())) {
            std::ofstream(dir / "reference.json") << ref->serialize_params() << '\n';
        }
    }
}

void Brain::load_checkpoint(const std::filesystem::path& checkpoint) {
    std::ifstream state_in(checkpoint / "state.json");
    if (!state_in) throw ConfigError("no state.json in checkpoint '" + checkpoint.string() + "'");
    json state = json::parse(state_in, nullptr, false);
    if (state.is_discarded()) throw DecodeError("malformed checkpoint state");
    next_step_ = state.at("next_step").get<int>();

    auto* tiny = dynamic_cast<TinyPolicy*>(policy_.get());
    const std::filesystem::path params_path = checkpoint / "policy.json";
    if (tiny && std::filesystem::exists(params_path)) {
        std::ifstream in(params_path);
        std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        tiny->load_params(payload);
    }
    const std::filesystem::path ref_path = checkpoint / "reference.json";
    if (tiny && std::filesystem::exists(ref_path)) {
        std::ifstream in(ref_path);
        std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto reference = std::static_pointer_cast<TinyPolicy>(tiny->snapshot_reference());
        reference->load_params(payload);
        learner_->set_reference(reference);
    }
}

std::filesystem::path Brain::latest_checkpoint() const {
    std::filesystem::path best;
    int best_step = -1;
    if (!std::filesystem::is_directory(config_.checkpoint_dir)) return best;
    for (const auto& entry : std::filesystem::directory_iterator(config_.checkpoint_dir)) {
        const std::string name = entry.path().filename().string();
        constexpr std::string_view prefix = "checkpoint_";
        if (!entry.is_directory() || name.rfind(prefix, 0) != 0) continue;
        try {
            const int step = std::stoi(name.substr(prefix.size()));
            if (step > best_step) {
                best_step = step;
                best = entry.path();
            }
        } catch (const std::exception&) {
            continue;
        }
    }
    return best;
}

double evaluate_correctness(Brain& brain, const std::vector<email_demo::EvalItem>& items) {
    if (items.empty()) throw InvalidArgument("evaluate_correctness needs at least one item");
    const double saved = brain.policy().sampling().temperature;
    brain.policy().set_temperature(0.0);
    int correct = 0;
    for (size_t i = 0; i < items.size(); ++i) {
        ToolRegistry registry = brain.episode_registry(items[i].question);
        Trace trace = run_episode(brain.policy(), registry, items[i].question,
                                  brain.config().episode, /*episode_seed=*/i);
        if (trace.terminated != Trace::Terminated::answered || trace.turns.empty()) continue;
        const auto& answer = trace.turns.back().parsed_completion.final_answer;
        if (answer && email_demo::answer_matches(*answer, items[i].gold_answer)) ++correct;
    }
    brain.policy().set_temperature(saved);
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace toolcoach
