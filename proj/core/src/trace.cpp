#include "toolcoach/trace.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/version.hpp"

namespace toolcoach {

using nlohmann::json;

namespace {

constexpr std::string_view kFence = "```";
constexpr std::string_view kFinalMarker = "FINAL:";

std::string trim(std::string_view s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Position of the first line that starts with `marker`, or npos.
size_t find_line_start(std::string_view text, std::string_view marker) {
    size_t pos = 0;
    while (pos <= text.size()) {
        if (text.compare(pos, marker.size(), marker) == 0) return pos;
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return std::string_view::npos;
}

}  // namespace

bool is_valid_tool_name(std::string_view name) {
    if (name.empty()) return false;
    auto lower_or_underscore = [](char c) { return (c >= 'a' && c <= 'z') || c == '_'; };
    if (!lower_or_underscore(name[0])) return false;
    return std::all_of(name.begin() + 1, name.end(), [&](char c) {
        return lower_or_underscore(c) || (c >= '0' && c <= '9');
    });
}

ParsedCompletion parse_completion(std::string_view raw) {
    ParsedCompletion out;

    if (trim(raw).empty()) {
        out.thought = std::string(raw);
        out.malformed = true;
        return out;
    }

    const size_t fence_pos = raw.find(kFence);
    const size_t final_pos = find_line_start(raw, kFinalMarker);
    const bool has_fence = fence_pos != std::string_view::npos;
    const bool has_final = final_pos != std::string_view::npos;

    // Both markers in one completion violate the grammar; the first marker
    // wins and the parse is flagged.
    if (has_fence && has_final) out.malformed = true;

    if (has_fence && (!has_final || fence_pos < final_pos)) {
        std::string thought = trim(raw.substr(0, fence_pos));
        if (!thought.empty()) out.thought = thought;

        // Opening fence: the rest of its line is a language tag and ignored.
        size_t body_begin = raw.find('\n', fence_pos + kFence.size());
        if (body_begin == std::string_view::npos) {
            // Inline form ```code``` with no newline after the opening fence.
            body_begin = fence_pos + kFence.size();
        } else {
            ++body_begin;
        }
        const size_t close = raw.find(kFence, body_begin);
        if (close == std::string_view::npos) {
            // Broken fence: degrade to a thought-only parse.
            out = ParsedCompletion{};
            out.thought = trim(raw);
            out.malformed = true;
            return out;
        }
        out.tool_code = trim(raw.substr(body_begin, close - body_begin));
        return out;
    }

    if (has_final) {
        std::string thought = trim(raw.substr(0, final_pos));
        if (!thought.empty()) out.thought = thought;
        out.final_answer = trim(raw.substr(final_pos + kFinalMarker.size()));
        return out;
    }

    out.thought = std::string(raw);
    return out;
}

std::string render_transcript(const Trace& trace) {
    std::string out;
    out += "QUERY: ";
    out += trace.query;
    out += '\n';
    for (const Turn& turn : trace.turns) {
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

std::string render_completions(const Trace& trace) {
    std::string out;
    for (size_t i = 0; i < trace.turns.size(); ++i) {
        if (i > 0) out += '\n';
        out += trace.turns[i].model_completion;
    }
    return out;
}

std::vector<ChatSegment> to_chat_segments(const Trace& trace) {
    std::vector<ChatSegment> segments;
    segments.push_back({ChatSegment::Role::user, trace.query});
    for (const Turn& turn : trace.turns) {
        segments.push_back({ChatSegment::Role::assistant, turn.model_completion});
        if (turn.tool_output) {
            segments.push_back({ChatSegment::Role::tool, *turn.tool_output});
        }
    }
    return segments;
}

std::string to_string(Trace::Terminated t) {
    switch (t) {
        case Trace::Terminated::answered: return "answered";
        case Trace::Terminated::max_turns: return "max_turns";
        case Trace::Terminated::error: return "error";
    }
    return "error";
}

std::string to_string(ChatSegment::Role r) {
    switch (r) {
        case ChatSegment::Role::system: return "system";
        case ChatSegment::Role::user: return "user";
        case ChatSegment::Role::assistant: return "assistant";
        case ChatSegment::Role::tool: return "tool";
    }
    return "user";
}

std::string to_string(ToolArg::Type t) {
    switch (t) {
        case ToolArg::Type::string: return "string";
        case ToolArg::Type::integer: return "integer";
        case ToolArg::Type::number: return "number";
        case ToolArg::Type::boolean: return "boolean";
        case ToolArg::Type::string_list: return "string_list";
    }
    return "string";
}

namespace {

Trace::Terminated terminated_from_string(const std::string& s) {
    if (s == "answered") return Trace::Terminated::answered;
    if (s == "max_turns") return Trace::Terminated::max_turns;
    if (s == "error") return Trace::Terminated::error;
    throw DecodeError("unknown terminated value '" + s + "'");
}

json parsed_to_json(const ParsedCompletion& p) {
    json j = json::object();
    if (p.thought) j["thought"] = *p.thought;
    if (p.tool_code) j["tool_code"] = *p.tool_code;
    if (p.final_answer) j["final_answer"] = *p.final_answer;
    if (p.malformed) j["malformed"] = true;
    return j;
}

ParsedCompletion parsed_from_json(const json& j) {
    if (!j.is_object()) throw DecodeError("parsed_completion is not an object");
    ParsedCompletion p;
    if (j.contains("thought")) p.thought = j.at("thought").get<std::string>();
    if (j.contains("tool_code")) p.tool_code = j.at("tool_code").get<std::string>();
    if (j.contains("final_answer")) p.final_answer = j.at("final_answer").get<std::string>();
    p.malformed = j.value("malformed", false);
    return p;
}

const json& require_field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw DecodeError(std::string("missing field '") + name + "'");
    return *it;
}

}  // namespace

std::string encode_trace(const Trace& trace) {
    json turns = json::array();
    for (const Turn& t : trace.turns) {
        json jt;
        jt["prompt_for_model"] = t.prompt_for_model;
        jt["model_completion"] = t.model_completion;
        jt["parsed_completion"] = parsed_to_json(t.parsed_completion);
        if (t.tool_output) jt["tool_output"] = *t.tool_output;
        turns.push_back(std::move(jt));
    }
    json j;
    j["query_id"] = trace.query_id;
    j["query"] = trace.query;
    j["turns"] = std::move(turns);
    j["terminated"] = to_string(trace.terminated);
    return j.dump();
}

Trace decode_trace(std::string_view record) {
    json j = json::parse(record, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
        throw DecodeError("malformed trace record");
    }
    try {
        Trace trace;
        trace.query_id = require_field(j, "query_id").get<std::string>();
        trace.query = require_field(j, "query").get<std::string>();
        trace.terminated = terminated_from_string(require_field(j, "terminated").get<std::string>());
        const json& turns = require_field(j, "turns");
        if (!turns.is_array()) throw DecodeError("turns is not an array");
        for (const json& jt : turns) {
            Turn t;
            t.prompt_for_model = require_field(jt, "prompt_for_model").get<std::string>();
            t.model_completion = require_field(jt, "model_completion").get<std::string>();
            t.parsed_completion = parsed_from_json(require_field(jt, "parsed_completion"));
            if (jt.contains("tool_output")) t.tool_output = jt.at("tool_output").get<std::string>();
            trace.turns.push_back(std::move(t));
        }
        return trace;
    } catch (const json::exception& e) {
        throw DecodeError(std::string("malformed trace record: ") + e.what());
    }
}

void write_record_file(const std::filesystem::path& path,
                       const RecordFileHeader& header,
                       const std::vector<std::string>& records) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    json h;
    h["schema_version"] = header.schema_version;
    h["producer"] = header.producer;
    out << h.dump() << '\n';
    for (const std::string& record : records) {
        out << record << '\n';
    }
}

std::pair<RecordFileHeader, std::vector<std::string>> read_record_file(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DecodeError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DecodeError("empty record file '" + path.string() + "'");
    json h = json::parse(line, nullptr, false);
    if (h.is_discarded() || !h.is_object() || !h.contains("schema_version")) {
        throw DecodeError("missing header record in '" + path.string() + "'");
    }
    RecordFileHeader header;
    header.schema_version = h.at("schema_version").get<int>();
    header.producer = h.value("producer", "");
    std::vector<std::string> records;
    while (std::getline(in, line)) {
        if (!line.empty()) records.push_back(line);
    }
    return {header, records};
}

}  // namespace toolcoach
