#pragma once

// JSON run configuration. Every section is optional; missing keys keep the
// values of the base config, unknown keys and wrongly typed values are
// rejected with the offending path in the message.

#include "selftransfer/orchestrator.hpp"

#include <filesystem>
#include <string>

namespace selftransfer {

/// Parses a config document over `base` and validates the result.
RunConfig parse_config(const std::string& text, const RunConfig& base = desk_scale_config());
RunConfig load_config(const std::filesystem::path& file,
                      const RunConfig& base = desk_scale_config());

/// Complete document (every key written), stable across calls.
std::string dump_config(const RunConfig& config);

}  // namespace selftransfer
