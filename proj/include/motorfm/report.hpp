#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "motorfm/experiment.hpp"

namespace motorfm {

/// Plain-text table: one row per task, one column per fraction, mean ± std to
/// 2 decimals. Columns with a failed cell print "ERR" and get a footnote.
std::string render_table(const EvalReport& report);

/// Comma-separated means (`std_dev = false`) or standard deviations.
/// Header is `task` followed by one column per fraction.
std::string render_csv(const EvalReport& report, bool std_dev = false);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::string> row_names;
  /// Empty optional for an ERR cell.
  std::vector<std::vector<std::optional<double>>> values;
};

CsvTable parse_report_csv(const std::string& text);

/// Line-delimited JSON: a header line describing the report, then one line
/// per (task, fraction, seed) cell including its confusion matrix.
std::string write_results_jsonl(const EvalReport& report);
EvalReport read_results_jsonl(const std::string& text);

/// Writes <suite>.txt, <suite>.csv, <suite>_std.csv and <suite>.jsonl into dir.
void write_report_files(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace motorfm
