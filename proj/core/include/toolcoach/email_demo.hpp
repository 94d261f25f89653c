#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "toolcoach/agent.hpp"
#include "toolcoach/policy.hpp"

namespace toolcoach::email_demo {

struct EmailRecord {
    std::string message_id;
    std::string date;  // ISO-8601 (YYYY-MM-DD)
    std::string sender;
    std::vector<std::string> recipients;
    std::string subject;
    std::string body;

    bool operator==(const EmailRecord&) const = default;
};

struct EvalItem {
    std::string question;
    std::string gold_answer;
    std::string supporting_message_id;

    bool operator==(const EvalItem&) const = default;
};

using Corpus = std::vector<EmailRecord>;

/**
 * Deterministically generate a synthetic inbox of n_emails (n_emails >= 50)
 * with planted facts, one EvalItem per fact (one fact per 20 emails).
 * Every gold answer appears verbatim in its supporting email body, and the
 * solvability oracle (search by question keywords -> read -> answer) is
 * verified at build time.
 */
std::pair<Corpus, std::vector<EvalItem>> build_corpus(uint64_t seed, int n_emails);

/// Distinctive lowercase keywords of a question: tokens minus stopwords.
std::vector<std::string> extract_keywords(const std::string& question);

/// Conjunctive case-insensitive keyword search over subject+body, ordered by
/// match count then date (newest first), capped at 10. Result entries carry
/// (message_id, subject, snippet).
struct SearchResult {
    std::string message_id;
    std::string subject;
    std::string snippet;
};
std::vector<SearchResult> search_emails(const Corpus& corpus,
                                        const std::vector<std::string>& keywords);

/// Tool-output rendering of search results; "[]" when nothing matched.
std::string render_search_results(const std::vector<SearchResult>& results);

/// Full rendering of one email, or "ERROR: no such message_id".
std::string read_email(const Corpus& corpus, const std::string& message_id);

/// Registry with the two demo tools bound to `corpus` (read-only, safe for
/// concurrent episodes).
ToolRegistry make_email_registry(std::shared_ptr<const Corpus> corpus);

/// Direct search -> read -> answer chain check for every item.
/// @throws Error describing the first unsolvable item.
void verify_solvability(const Corpus& corpus, const std::vector<EvalItem>& items);

/// Scripted expert that solves every item with the intended two-tool
/// workflow: search by question keywords, read the supporting email, answer.
std::shared_ptr<Policy> make_expert_policy(const std::vector<EvalItem>& items);

/**
 * Fraction of items answered correctly by greedy (temperature 0) episodes.
 * An item counts as correct when the episode answered and the final answer
 * contains the gold answer after whitespace/case normalization.
 */
double evaluate_correctness(Policy& policy, const ToolRegistry& registry,
                            const EpisodeConfig& config, const std::vector<EvalItem>& items);

/// True when `answer` contains `gold` after case/whitespace normalization.
bool answer_matches(const std::string& answer, const std::string& gold);

// Corpus and eval items persist in the line-record envelope.
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& path);
void write_eval_items(const std::filesystem::path& path, const std::vector<EvalItem>& items);
std::vector<EvalItem> read_eval_items(const std::filesystem::path& path);

}  // namespace toolcoach::email_demo
