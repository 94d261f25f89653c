#pragma once

#include <optional>
#include <string>

namespace toolcoach {

/// One training query, optionally with a known-good answer.
struct TaskExample {
    enum class Source { user, generated };

    std::string query;
    std::optional<std::string> gold_answer;
    Source source = Source::user;

    bool operator==(const TaskExample&) const = default;
};

}  // namespace toolcoach
