// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mozolab/harness.hpp"

namespace mozolab {

/// Writes every per-run output into `dir`: effective_config.json,
/// metrics.jsonl (one schema-versioned record per event), loss.csv,
/// gradvar.csv, gradvar_norms.csv, summary.csv. Byte-deterministic for
/// identical metrics.
void write_run_outputs(const std::string& dir, const RunConfig& cfg, const RunMetrics& metrics);

/// Regenerates the CSV for one metric family (`loss`, `gradvar` or
/// `summary`) from the run directory's metrics.jsonl; returns the file
/// path. Idempotent: re-export emits identical bytes.
std::string export_plotdata(const std::string& run_dir, const std::string& kind);

/// Merged per-seed summary with a trailing aggregate row (mean over seeds).
void write_seed_summary(const std::string& dir, const std::vector<RunMetrics>& runs);

}  // namespace mozolab
