#pragma once

// Evaluation report output: one JSON object per method row, an aligned text
// table, and a separate timing file (wall clock is kept out of the JSON so
// seeded runs produce byte-identical reports).

#include <filesystem>
#include <string>

#include "tpn/engines.hpp"

namespace tpn {

std::string report_jsonl(const EvalReport& report);
std::string report_table(const EvalReport& report);
std::string report_timing(const EvalReport& report);

// Writes <stem>.jsonl, <stem>.txt and <stem>.timing.txt next to `jsonl_path`.
void write_report(const EvalReport& report, const std::filesystem::path& jsonl_path);

}  // namespace tpn
