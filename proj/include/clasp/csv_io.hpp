#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "clasp/evaluation.hpp"

namespace clasp {

// All writers return the whole file, header row included; doubles use
// "%.17g" so values parse back exactly.

std::string format_predictions_csv(const std::vector<DetectedEvent>& dets);
// Throws ParseError with the 1-based line number.
std::vector<DetectedEvent> parse_predictions_csv(std::string_view text, const std::string& source = "<csv>");

struct AnchorRow {
  std::string video_id;
  std::size_t rank = 0;  // 0 = highest score
  std::size_t t = 0;
  double score = 0.0;  // agreement s at t
};
std::string format_anchors_csv(const std::vector<AnchorRow>& rows);
std::vector<AnchorRow> parse_anchors_csv(std::string_view text, const std::string& source = "<csv>");

// One row labelled "mAP" under columns 0.5 ... 0.9, Avg.
std::string format_report_csv(const EvalReport& report);
// One row per category; "n/a" where it has no ground truth.
std::string format_category_ap_csv(const EvalReport& report, const std::vector<std::string>& names);

std::string format_loss_csv(const std::vector<double>& per_epoch);

// Splits one CSV line on commas (no quoting; fields never contain commas).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace clasp
