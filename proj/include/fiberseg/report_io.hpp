#pragma once

#include <string>
#include <vector>

#include "fiberseg/harness.hpp"

namespace fiberseg {

// Human-readable record: one block per protocol/level with the metrics and
// confusion counts.
std::string report_to_text(const EvalReport& r);

// Machine-readable JSON twin of the text report.
std::string report_to_json_string(const EvalReport& r);
EvalReport report_from_json_string(const std::string& text);

// Writes <stem>.json and <stem>.txt.
void write_report_files(const EvalReport& r, const std::string& stem);
EvalReport read_report_file(const std::string& path);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

// Merges eval reports into one summary table: rows grouped by protocol,
// columns for macro/micro accuracy, macro recall and hierarchical accuracy.
std::string summary_table(std::vector<EvalReport> reports);
std::string summary_csv(std::vector<EvalReport> reports);

}  // namespace fiberseg
