#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace toolcoach {

/// One entry of a role-tagged chat history derived from a trace.
struct ChatSegment {
    enum class Role { system, user, assistant, tool };
    Role role = Role::user;
    std::string text;

    bool operator==(const ChatSegment&) const = default;
};

/// Structured fields extracted from one raw model completion.
///
/// The surface grammar: everything before the first marker is `thought`;
/// the first fenced code block (``` ... ```) is `tool_code`; text after a
/// line starting with "FINAL:" is `final_answer` when no code block precedes
/// it. A completion that is empty, carries both markers, or has a broken
/// fence is kept but flagged `malformed` so reward functions can see it.
struct ParsedCompletion {
    std::optional<std::string> thought;
    std::optional<std::string> tool_code;
    std::optional<std::string> final_answer;
    bool malformed = false;

    bool operator==(const ParsedCompletion&) const = default;
};

/// One prompt -> completion -> tool-output cycle of an episode.
struct Turn {
    std::string prompt_for_model;   // the exact string the policy received
    std::string model_completion;   // the raw completion it produced
    ParsedCompletion parsed_completion;
    std::optional<std::string> tool_output;

    bool operator==(const Turn&) const = default;
};

/// The complete record of one agent episode.
struct Trace {
    enum class Terminated { answered, max_turns, error };

    std::string query_id;
    std::string query;
    std::vector<Turn> turns;
    Terminated terminated = Terminated::error;

    bool operator==(const Trace&) const = default;
};

/// Typed argument schema of a registered tool.
struct ToolArg {
    enum class Type { string, integer, number, boolean, string_list };
    std::string name;
    Type type = Type::string;
    std::string description;
    bool required = true;

    bool operator==(const ToolArg&) const = default;
};

/// Name, description and argument schema; the unit of tool retrieval.
struct ToolSpec {
    std::string name;  // [a-z_][a-z0-9_]*
    std::string description;
    std::vector<ToolArg> args;

    bool operator==(const ToolSpec&) const = default;
};

/// True when `name` matches [a-z_][a-z0-9_]*.
bool is_valid_tool_name(std::string_view name);

/**
 * Parse a raw completion into its structured fields.
 *
 * Never fails: degenerate inputs produce a thought-only parse with the
 * malformed flag set. See ParsedCompletion for the grammar.
 */
ParsedCompletion parse_completion(std::string_view raw);

/**
 * Deterministic text rendering of a trace:
 *
 *   QUERY: <query>
 *   ASSISTANT: <model_completion>      (per turn)
 *   TOOL: <tool_output>                (when present)
 *
 * Identical traces render byte-identically.
 */
std::string render_transcript(const Trace& trace);

/// The assistant side of a trace only: per-turn model completions joined by
/// newlines. This is the completion sequence scored by DPO and SFT.
std::string render_completions(const Trace& trace);

/// Derive the role-tagged chat history view of a trace.
std::vector<ChatSegment> to_chat_segments(const Trace& trace);

/**
 * Encode a trace as one self-delimiting single-line record (no trailing
 * newline), suitable for line-oriented cache files.
 */
std::string encode_trace(const Trace& trace);

/**
 * Decode a record produced by encode_trace.
 *
 * @throws DecodeError on malformed input, missing fields, or unknown
 *         enum values.
 */
Trace decode_trace(std::string_view record);

std::string to_string(Trace::Terminated t);
std::string to_string(ChatSegment::Role r);
std::string to_string(ToolArg::Type t);

/// Header of every line-record file: first line of the envelope.
struct RecordFileHeader {
    int schema_version = 0;
    std::string producer;
};

/// Write a line-record file: header first, then one record per line.
/// Records must already be single-line strings.
void write_record_file(const std::filesystem::path& path,
                       const RecordFileHeader& header,
                       const std::vector<std::string>& records);

/// Read a line-record file. @throws DecodeError on a bad envelope.
std::pair<RecordFileHeader, std::vector<std::string>> read_record_file(
    const std::filesystem::path& path);

}  // namespace toolcoach
