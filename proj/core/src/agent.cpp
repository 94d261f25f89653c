#include "toolcoach/agent.hpp"

#include <cctype>
#include <condition_variable>
#include <cstdio>
#include <mutex>
#include <thread>

#include "toolcoach/errors.hpp"
#include "toolcoach/rng.hpp"

namespace toolcoach {

const std::string& ToolArgs::get_string(const std::string& name) const {
    return std::get<std::string>(at(name));
}
long long ToolArgs::get_int(const std::string& name) const {
    return std::get<long long>(at(name));
}
double ToolArgs::get_number(const std::string& name) const {
    const ToolValue& v = at(name);
    if (std::holds_alternative<long long>(v)) return static_cast<double>(std::get<long long>(v));
    return std::get<double>(v);
}
bool ToolArgs::get_bool(const std::string& name) const {
    return std::get<bool>(at(name));
}
const std::vector<std::string>& ToolArgs::get_string_list(const std::string& name) const {
    return std::get<std::vector<std::string>>(at(name));
}
const ToolValue& ToolArgs::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw InvalidArgument("no argument named '" + name + "'");
    return it->second;
}

void ToolRegistry::register_tool(ToolSpec spec, ToolFn fn) {
    if (!is_valid_tool_name(spec.name)) {
        throw ConfigError("invalid tool name '" + spec.name + "'");
    }
    if (index_.count(spec.name)) {
        throw ConfigError("tool '" + spec.name + "' already registered");
    }
    std::map<std::string, int> seen;
    for (const ToolArg& arg : spec.args) {
        if (++seen[arg.name] > 1) {
            throw ConfigError("duplicate argument '" + arg.name + "' in tool '" + spec.name + "'");
        }
    }
    index_[spec.name] = entries_.size();
    entries_.push_back(Entry{std::move(spec), std::move(fn)});
}

const ToolSpec& ToolRegistry::spec(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown tool '" + name + "'");
    return entries_[it->second].spec;
}

const ToolFn& ToolRegistry::callable(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown tool '" + name + "'");
    return entries_[it->second].fn;
}

std::vector<ToolSpec> ToolRegistry::specs() const {
    std::vector<ToolSpec> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.spec);
    return out;
}

ToolRegistry ToolRegistry::subset(const std::vector<std::string>& names) const {
    ToolRegistry out;
    for (const Entry& e : entries_) {
        for (const std::string& name : names) {
            if (e.spec.name == name) {
                out.register_tool(e.spec, e.fn);
                break;
            }
        }
    }
    return out;
}

const std::string& default_system_prompt() {
    static const std::string prompt =
        "You are an assistant that can call tools.\n"
        "On each turn do exactly one of the following:\n"
        "- call tools by writing call expressions inside a fenced code block, e.g.\n"
        "```\ntool_name(arg=\"value\")\n```\n"
        "- or give the answer on a single line starting with FINAL:";
    return prompt;
}

std::string render_tool_specs(const std::vector<ToolSpec>& specs) {
    std::string out;
    for (const ToolSpec& spec : specs) {
        out += "- ";
        out += spec.name;
        out += '(';
        for (size_t i = 0; i < spec.args.size(); ++i) {
            if (i > 0) out += ", ";
            out += spec.args[i].name;
            if (!spec.args[i].required) out += '?';
            out += ": ";
            out += to_string(spec.args[i].type);
        }
        out += "): ";
        out += spec.description;
        out += '\n';
    }
    return out;
}

std::string build_prompt(const EpisodeConfig& config, const std::vector<ToolSpec>& specs,
                         const std::string& query, const std::vector<Turn>& prior_turns) {
    std::string out = config.system_prompt.empty() ? default_system_prompt() : config.system_prompt;
    out += "\n\nTOOLS:\n";
    out += render_tool_specs(specs);
    out += "\nQUERY: ";
    out += query;
    out += '\n';
    for (const Turn& turn : prior_turns) {
        out += "ASSISTANT: ";
        out += turn.model_completion;
        out += '\n';
        if (turn.tool_output) {
            out += "TOOL: ";
            out += *turn.tool_output;
            out += '\n';
        }
    }
    return out;
}

namespace {

// --- tool-call mini-language -------------------------------------------------

struct ParseFailure {
    std::string detail;
};

struct CallExpr {
    std::string name;
    std::map<std::string, ToolValue> args;
};

class CallParser {
public:
    explicit CallParser(std::string_view code) : code_(code) {}

    std::vector<CallExpr> parse() {
        std::vector<CallExpr> calls;
        skip_separators();
        if (eof()) throw ParseFailure{"empty tool code"};
        while (!eof()) {
            calls.push_back(parse_call());
            skip_separators();
        }
        return calls;
    }

private:
    bool eof() const { return pos_ >= code_.size(); }
    char peek() const { return code_[pos_]; }

    void skip_ws() {
        while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
    }

    void skip_separators() {
        while (!eof() && (std::isspace(static_cast<unsigned char>(peek())) || peek() == ';')) ++pos_;
    }

    std::string parse_ident() {
        skip_ws();
        size_t start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) ++pos_;
        if (pos_ == start) throw ParseFailure{"expected identifier"};
        return std::string(code_.substr(start, pos_ - start));
    }

    CallExpr parse_call() {
        CallExpr call;
        call.name = parse_ident();
        skip_ws();
        if (eof() || peek() != '(') throw ParseFailure{"expected '(' after tool name"};
        ++pos_;
        skip_ws();
        if (eof()) throw ParseFailure{"unterminated argument list"};
        if (peek() == ')') {
            ++pos_;
            return call;
        }
        while (true) {
            std::string arg_name = parse_ident();
            skip_ws();
            if (eof() || peek() != '=') throw ParseFailure{"expected '=' after argument '" + arg_name + "'"};
            ++pos_;
            call.args[arg_name] = parse_literal(arg_name);
            skip_ws();
            if (eof()) throw ParseFailure{"unterminated argument list"};
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            if (peek() == ')') {
                ++pos_;
                return call;
            }
            throw ParseFailure{"expected ',' or ')' in argument list"};
        }
    }

    ToolValue parse_literal(const std::string& arg_name) {
        skip_ws();
        if (eof()) throw ParseFailure{"unterminated argument list"};
        const char c = peek();
        if (c == '"') return parse_string();
        if (c == '[') return parse_string_list();
        if (c == 't' || c == 'f') return parse_bool(arg_name);
        if (c == '-' || std::isdigit(static_cast<unsigned char>(c))) return parse_number(arg_name);
        throw ParseFailure{"invalid literal for argument '" + arg_name + "'"};
    }

    std::string parse_string() {
        ++pos_;  // opening quote
        std::string out;
        while (!eof()) {
            char c = code_[pos_++];
            if (c == '"') return out;
            if (c == '\\') {
                if (eof()) break;
                char esc = code_[pos_++];
                switch (esc) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: out += esc; break;
                }
            } else {
                out += c;
            }
        }
        throw ParseFailure{"unterminated string"};
    }

    ToolValue parse_string_list() {
        ++pos_;  // '['
        std::vector<std::string> items;
        skip_ws();
        if (eof()) throw ParseFailure{"unterminated list"};
        if (peek() == ']') {
            ++pos_;
            return items;
        }
        while (true) {
            skip_ws();
            if (eof()) throw ParseFailure{"unterminated list"};
            if (peek() != '"') throw ParseFailure{"lists may contain only strings"};
            items.push_back(parse_string());
            skip_ws();
            if (eof()) throw ParseFailure{"unterminated list"};
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            if (peek() == ']') {
                ++pos_;
                return items;
            }
            throw ParseFailure{"expected ',' or ']' in list"};
        }
    }

    ToolValue parse_bool(const std::string& arg_name) {
        if (code_.compare(pos_, 4, "true") == 0) {
            pos_ += 4;
            return true;
        }
        if (code_.compare(pos_, 5, "false") == 0) {
            pos_ += 5;
            return false;
        }
        throw ParseFailure{"invalid literal for argument '" + arg_name + "'"};
    }

    ToolValue parse_number(const std::string& arg_name) {
        size_t start = pos_;
        if (peek() == '-') ++pos_;
        bool digits = false;
        bool is_float = false;
        while (!eof()) {
            char c = peek();
            if (std::isdigit(static_cast<unsigned char>(c))) {
                digits = true;
                ++pos_;
            } else if (c == '.' && !is_float) {
                is_float = true;
                ++pos_;
            } else {
                break;
            }
        }
        if (!digits) throw ParseFailure{"invalid literal for argument '" + arg_name + "'"};
        std::string text(code_.substr(start, pos_ - start));
        if (is_float) return std::stod(text);
        return static_cast<long long>(std::stoll(text));
    }

    std::string_view code_;
    size_t pos_ = 0;
};

const char* type_name_of(const ToolValue& v) {
    switch (v.index()) {
        case 0: return "string";
        case 1: return "integer";
        case 2: return "number";
        case 3: return "boolean";
        case 4: return "string_list";
    }
    return "?";
}

bool value_matches(const ToolValue& v, ToolArg::Type t) {
    switch (t) {
        case ToolArg::Type::string: return std::holds_alternative<std::string>(v);
        case ToolArg::Type::integer: return std::holds_alternative<long long>(v);
        case ToolArg::Type::number:
            return std::holds_alternative<double>(v) || std::holds_alternative<long long>(v);
        case ToolArg::Type::boolean: return std::holds_alternative<bool>(v);
        case ToolArg::Type::string_list:
            return std::holds_alternative<std::vector<std::string>>(v);
    }
    return false;
}

// Validate parsed arguments against the tool's declared schema; returns an
// error string, empty on success.
std::string validate_args(const CallExpr& call, const ToolSpec& spec) {
    for (const auto& [name, value] : call.args) {
        const ToolArg* found = nullptr;
        for (const ToolArg& arg : spec.args) {
            if (arg.name == name) {
                found = &arg;
                break;
            }
        }
        if (!found) {
            return "ERROR: args: unknown argument '" + name + "' for tool '" + spec.name + "'";
        }
        if (!value_matches(value, found->type)) {
            return "ERROR: args: argument '" + name + "' of tool '" + spec.name + "' expects " +
                   to_string(found->type) + ", got " + type_name_of(value);
        }
    }
    for (const ToolArg& arg : spec.args) {
        if (arg.required && !call.args.count(arg.name)) {
            return "ERROR: args: missing required argument '" + arg.name + "' for tool '" +
                   spec.name + "'";
        }
    }
    return {};
}

// Run `fn` on a worker thread; on timeout, detach the worker and report.
std::string run_with_timeout(const std::function<std::string()>& fn,
                             std::chrono::milliseconds timeout) {
    if (timeout.count() <= 0) return fn();

    struct Shared {
        std::mutex mutex;
        std::condition_variable cv;
        bool done = false;
        std::string result;
    };
    auto shared = std::make_shared<Shared>();
    std::thread worker([shared, fn] {
        std::string result = fn();
        std::lock_guard<std::mutex> lock(shared->mutex);
        shared->result = std::move(result);
        shared->done = true;
        shared->cv.notify_all();
    });

    std::unique_lock<std::mutex> lock(shared->mutex);
    if (!shared->cv.wait_for(lock, timeout, [&] { return shared->done; })) {
        worker.detach();
        return "ERROR: timeout";
    }
    lock.unlock();
    worker.join();
    return shared->result;
}

}  // namespace

std::string execute_tool_code(const std::string& code, const ToolRegistry& registry,
                              std::chrono::milliseconds timeout) {
    std::vector<CallExpr> calls;
    try {
        calls = CallParser(code).parse();
    } catch (const ParseFailure& f) {
        return "ERROR: parse: " + f.detail;
    }

    std::string out;
    for (size_t i = 0; i < calls.size(); ++i) {
        const CallExpr& call = calls[i];
        if (i > 0) out += '\n';
        if (!registry.contains(call.name)) {
            out += "ERROR: unknown tool '" + call.name + "'";
            break;
        }
        const ToolSpec& spec = registry.spec(call.name);
        if (std::string err = validate_args(call, spec); !err.empty()) {
            out += err;
            break;
        }
        const ToolFn& fn = registry.callable(call.name);
        ToolArgs args(call.args);
        std::string result = run_with_timeout(
            [&]() -> std::string {
                try {
                    return fn(args);
                } catch (const std::exception& e) {
                    return "ERROR: tool '" + call.name + "': " + e.what();
                } catch (...) {
                    return "ERROR: tool '" + call.name + "': unknown failure";
                }
            },
            timeout);
        out += result;
        if (result.rfind("ERROR:", 0) == 0) break;
    }
    return out;
}

Trace run_episode(Policy& policy, const ToolRegistry& registry, const std::string& query,
                  const EpisodeConfig& config, uint64_t episode_seed, std::string query_id) {
    if (query.empty()) throw InvalidArgument("query must be non-empty");
    if (config.max_turns < 1) throw InvalidArgument("max_turns must be >= 1");

    Trace trace;
    trace.query = query;
    if (query_id.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "q%08llx",
                      static_cast<unsigned long long>(fnv1a64(query.data(), query.size()) & 0xffffffffULL));
        trace.query_id = buf;
    } else {
        trace.query_id = std::move(query_id);
    }

    const std::vector<ToolSpec> specs = registry.specs();
    trace.terminated = Trace::Terminated::max_turns;
    for (int t = 0; t < config.max_turns; ++t) {
        Turn turn;
        turn.prompt_for_model = build_prompt(config, specs, query, trace.turns);
        try {
            turn.model_completion =
                policy.generate(turn.prompt_for_model, mix_seed(episode_seed, static_cast<uint64_t>(t)));
        } catch (const TransportError&) {
            trace.terminated = Trace::Terminated::error;
            return trace;
        }
        turn.parsed_completion = parse_completion(turn.model_completion);
        if (turn.parsed_completion.tool_code) {
            turn.tool_output =
                execute_tool_code(*turn.parsed_completion.tool_code, registry, config.tool_timeout);
        }
        const bool answered = turn.parsed_completion.final_answer.has_value();
        trace.turns.push_back(std::move(turn));
        if (answered) {
            trace.terminated = Trace::Terminated::answered;
            break;
        }
    }
    return trace;
}

std::vector<Trace> collect_group(Policy& policy, const ToolRegistry& registry,
                                 const std::string& query, int group_size,
                                 const EpisodeConfig& config, uint64_t base_seed) {
    if (group_size < 1) throw InvalidArgument("group_size must be >= 1");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "q%08llx",
                  static_cast<unsigned long long>(fnv1a64(query.data(), query.size()) & 0xffffffffULL));
    const std::string base_id = buf;

    std::vector<Trace> traces;
    traces.reserve(static_cast<size_t>(group_size));
    for (int i = 0; i < group_size; ++i) {
        const uint64_t episode_seed = mix_seed(base_seed, static_cast<uint64_t>(i));
        traces.push_back(run_episode(policy, registry, query, config, episode_seed,
                                     base_id + "/r" + std::to_string(i)));
    }
    return traces;
}

}  // namespace toolcoach
