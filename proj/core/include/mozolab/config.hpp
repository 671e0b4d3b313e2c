// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mozolab/harness.hpp"

namespace mozolab {

/// Parses a JSON config (blocks: "model", "data", "optim", "run"); absent
/// fields keep their defaults. Throws std::invalid_argument on unknown
/// fields or bad values.
RunConfig run_config_from_json(const std::string& json_text);

RunConfig run_config_from_file(const std::string& path);

/// Serializes the fully-resolved effective config. All per-purpose seeds
/// are written explicitly, so re-running from the output reproduces the
/// run byte-for-byte.
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace mozolab
