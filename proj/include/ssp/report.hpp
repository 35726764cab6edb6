#pragma once

#include <string>
#include <vector>

#include "ssp/eval.hpp"

namespace ssp {

inline constexpr const char* kCsvHeader = "method,dataset,condition,shots,seed,miou,per_class_ious,step_time_ms,mem_bytes";

/// One CSV line (no newline). Per-class IoUs are ';'-separated with "na"
/// for classes absent from both ground truth and prediction. `seed_label`
/// replaces the numeric seed when non-empty (e.g. "median").
std::string csv_row(const RunResult& r, const std::string& seed_label = "");
/// Header line plus one line per result, '\n'-terminated.
std::string csv_document(const std::vector<RunResult>& rows, const std::vector<std::string>& seed_labels = {});

struct Series {
  std::string name;
  std::vector<double> values;
};

/// Self-contained SVG documents with axes, labels and a legend.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<double>& values, const std::string& y_label);
std::string svg_line_chart(const std::string& title, const std::vector<std::string>& x_labels,
                           const std::vector<Series>& series, const std::string& y_label);

}  // namespace ssp
