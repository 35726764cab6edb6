#include "ssp/report.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace ssp {

std::string csv_row(const RunResult& r, const std::string& seed_label) {
  std::string ious;
  for (std::size_t c = 0; c < r.class_iou.size(); ++c) {
    if (c) ious += ';';
    ious += r.class_iou[c] ? fmt::format("{:.6f}", *r.class_iou[c]) : "na";
  }
  const std::string seed = seed_label.empty() ? std::to_string(r.seed) : seed_label;
  const std::string step = r.step_ms_mean ? fmt::format("{:.4f}", *r.step_ms_mean) : "";
  return fmt::format("{},{},{},{},{},{:.6f},{},{},{}", r.method, r.dataset, r.condition, r.shots, seed, r.miou, ious,
                     step, r.mem_bytes);
}

std::string csv_document(const std::vector<RunResult>& rows, const std::vector<std::string>& seed_labels) {
  if (!seed_labels.empty() && seed_labels.size() != rows.size()) {
    throw std::invalid_argument("csv_document: one seed label per row required");
  }
  std::string out = std::string(kCsvHeader) + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += csv_row(rows[i], seed_labels.empty() ? "" : seed_labels[i]) + "\n";
  }
  return out;
}

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 50, kBottom = 70;
constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Smallest 1/2/5 x 10^n at or above v.
double nice_ceiling(double v) {
  if (!(v > 0.0)) return 1.0;
  const double base = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * base >= v * (1.0 - 1e-12)) return m * base;
  }
  return 10.0 * base;
}

struct Frame {
  double y_max;
  double plot_w() const { return kWidth - kLeft - kRight; }
  double plot_h() const { return kHeight - kTop - kBottom; }
  double y(double v) const { return kTop + plot_h() * (1.0 - std::clamp(v / y_max, 0.0, 1.0)); }
};

std::string open_document(const std::string& title, const Frame& f, const std::string& y_label) {
  std::string s = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"28\" font-size=\"16\" text-anchor=\"middle\">{3}</text>\n",
      kWidth, kHeight, kWidth / 2, escape(title));
  const double x0 = kLeft, x1 = kLeft + f.plot_w();
  for (int i = 0; i <= 5; ++i) {
    const double v = f.y_max * i / 5.0;
    const double y = f.y(v);
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#dddddd\"/>\n", x0, y, x1, y);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:g}</text>\n", x0 - 6, y + 4, v);
  }
  s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", x0, kTop,
                   kTop + f.plot_h());
  s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{2:.1f}\" x2=\"{1:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", x0, x1,
                   kTop + f.plot_h());
  s += fmt::format(
      "<text x=\"18\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0:.1f})\">{1}</text>\n",
      kTop + f.plot_h() / 2, escape(y_label));
  return s;
}

void check_values(const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("svg: non-finite value");
  }
}

}  // namespace

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<double>& values, const std::string& y_label) {
  if (categories.size() != values.size() || values.empty()) {
    throw std::invalid_argument("svg_bar_chart: need one value per category");
  }
  check_values(values);
  const Frame f{nice_ceiling(*std::max_element(values.begin(), values.end()))};
  std::string s = open_document(title, f, y_label);
  const double slot = f.plot_w() / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = kLeft + slot * (static_cast<double>(i) + 0.15);
    const double y = f.y(values[i]);
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\"/>\n", x, y,
                     slot * 0.7, kTop + f.plot_h() - y, kPalette[i % std::size(kPalette)]);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.3f}</text>\n", x + slot * 0.35, y - 4,
                     values[i]);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", x + slot * 0.35,
                     kTop + f.plot_h() + 18, escape(categories[i]));
  }
  return s + "</svg>\n";
}

std::string svg_line_chart(const std::string& title, const std::vector<std::string>& x_labels,
                           const std::vector<Series>& series, const std::string& y_label) {
  if (x_labels.empty() || series.empty()) throw std::invalid_argument("svg_line_chart: nothing to plot");
  double top = 0.0;
  for (const auto& line : series) {
    if (line.values.size() != x_labels.size()) throw std::invalid_argument("svg_line_chart: series length mismatch");
    check_values(line.values);
    top = std::max(top, *std::max_element(line.values.begin(), line.values.end()));
  }
  const Frame f{nice_ceiling(top)};
  std::string s = open_document(title, f, y_label);
  const double step = x_labels.size() > 1 ? f.plot_w() / static_cast<double>(x_labels.size() - 1) : 0.0;
  const auto x_at = [&](std::size_t i) { return kLeft + (x_labels.size() > 1 ? step * i : f.plot_w() / 2); };
  for (std::size_t i = 0; i < x_labels.size(); ++i) {
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", x_at(i),
                     kTop + f.plot_h() + 18, escape(x_labels[i]));
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < x_labels.size(); ++i) {
      points += fmt::format("{}{:.1f},{:.1f}", i ? " " : "", x_at(i), f.y(series[k].values[i]));
    }
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", points, color);
    for (std::size_t i = 0; i < x_labels.size(); ++i) {
      s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", x_at(i),
                       f.y(series[k].values[i]), color);
    }
    const double ly = kTop + 16.0 * static_cast<double>(k);
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
                     kWidth - kRight + 16, ly, color);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", kWidth - kRight + 34, ly + 10,
                     escape(series[k].name));
  }
  return s + "</svg>\n";
}

}  // namespace ssp
