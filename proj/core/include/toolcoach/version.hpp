#pragma once

#include <cstdint>
#include <string_view>

namespace toolcoach {

// Version of every line-record envelope (trace caches, corpus files, metrics).
// Bump when the prompt template or any persisted schema changes.
inline constexpr int kSchemaVersion = 1;

// Version of the fixed prompt template used by the agent runtime.
inline constexpr int kPromptVersion = 1;

inline constexpr std::string_view kLibraryName = "toolcoach";
inline constexpr std::string_view kLibraryVersion = "0.1.0";

}  // namespace toolcoach
