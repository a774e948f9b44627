#pragma once

// Result files: summary.csv, profile_*.csv, layers_*.csv, timing.csv and a
// report.json that round-trips every RunResult.

#include <string>
#include <vector>

#include "sparseshare/harness.hpp"

namespace sparseshare {

/// Writes every file under `out_dir` (created if needed). Re-emitting the
/// same results yields byte-identical files.
void emit_report(std::span<const RunResult> results, const std::string& out_dir);

/// Adds compare.csv next to the regular report of both runs.
void emit_comparison(const Comparison& comparison, const std::string& out_dir);

std::string summary_csv(std::span<const RunResult> results);
std::string timing_csv(std::span<const RunResult> results);
std::string report_json(std::span<const RunResult> results);

/// Inverse of report_json. Throws std::runtime_error on malformed input.
std::vector<RunResult> parse_report_json(const std::string& text);
std::vector<RunResult> load_report(const std::string& path);

}  // namespace sparseshare
