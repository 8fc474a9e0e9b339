#include "udit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <utility>

#include "udit/common.hpp"

namespace udit::report {
namespace {

namespace fs = std::filesystem;

constexpr double kWidth = 640.0;
constexpr double kHeight = 360.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 24.0;
constexpr double kTop = 56.0;
constexpr double kBottom = 56.0;

const char* const kPalette[] = {"#4e79a7", "#f28e2b", "#59a45e",
                                "#b07aa1", "#e15759", "#76b7b2"};
constexpr int kPaletteSize = int(sizeof(kPalette) / sizeof(kPalette[0]));

// Fixed-format numbers so output never depends on stream state.
std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string value_label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

struct Layout {
  std::vector<std::string> methods;     // series, first-appearance order
  std::vector<std::string> directions;  // groups, first-appearance order
  // value[g][s]; has_value tracks which cells were supplied
  std::vector<std::vector<double>> value;
  std::vector<std::vector<bool>> has_value;
};

Layout build_layout(const std::vector<LabeledReport>& reports,
                    double metrics::BiasReport::*field) {
  Layout lay;
  for (const auto& r : reports) {
    if (std::find(lay.methods.begin(), lay.methods.end(), r.method) ==
        lay.methods.end())
      lay.methods.push_back(r.method);
    if (std::find(lay.directions.begin(), lay.directions.end(),
                  r.report.direction) == lay.directions.end())
      lay.directions.push_back(r.report.direction);
  }
  lay.value.assign(lay.directions.size(),
                   std::vector<double>(lay.methods.size(), 0.0));
  lay.has_value.assign(lay.directions.size(),
                       std::vector<bool>(lay.methods.size(), false));
  for (const auto& r : reports) {
    const size_t g = size_t(std::find(lay.directions.begin(),
                                      lay.directions.end(),
                                      r.report.direction) -
                            lay.directions.begin());
    const size_t s = size_t(std::find(lay.methods.begin(), lay.methods.end(),
                                      r.method) -
                            lay.methods.begin());
    if (lay.has_value[g][s])
      throw ConfigError(cat("duplicate report for method \"", r.method,
                            "\", direction \"", r.report.direction, "\""));
    lay.value[g][s] = r.report.*field;
    lay.has_value[g][s] = true;
  }
  return lay;
}

std::string render_chart(const std::string& title, const Layout& lay) {
  double vmin = 0.0, vmax = 0.0;
  for (size_t g = 0; g < lay.value.size(); ++g)
    for (size_t s = 0; s < lay.value[g].size(); ++s)
      if (lay.has_value[g][s]) {
        vmin = std::min(vmin, lay.value[g][s]);
        vmax = std::max(vmax, lay.value[g][s]);
      }
  if (vmax == vmin) vmax = vmin + 1.0;  // all-zero panel still has a scale

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto y_of = [&](double v) {
    return kTop + (vmax - v) / (vmax - vmin) * plot_h;
  };

  std::string svg;
  svg += cat("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"",
             num(kWidth), "\" height=\"", num(kHeight), "\" viewBox=\"0 0 ",
             num(kWidth), " ", num(kHeight), "\">\n");
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg += cat("<text x=\"", num(kWidth / 2), "\" y=\"24\" font-family=\"sans-serif\"",
             " font-size=\"16\" text-anchor=\"middle\">", escape(title),
             "</text>\n");

  // Axis frame, zero line, and the two scale labels.
  svg += cat("<line x1=\"", num(kLeft), "\" y1=\"", num(kTop), "\" x2=\"",
             num(kLeft), "\" y2=\"", num(kTop + plot_h),
             "\" stroke=\"#333333\"/>\n");
  svg += cat("<line x1=\"", num(kLeft), "\" y1=\"", num(y_of(0.0)),
             "\" x2=\"", num(kLeft + plot_w), "\" y2=\"", num(y_of(0.0)),
             "\" stroke=\"#333333\"/>\n");
  for (const double tick : {vmin, vmax}) {
    svg += cat("<text x=\"", num(kLeft - 6), "\" y=\"", num(y_of(tick) + 4),
               "\" font-family=\"sans-serif\" font-size=\"11\""
               " text-anchor=\"end\">",
               value_label(tick), "</text>\n");
  }

  const size_t n_groups = lay.directions.size();
  const size_t n_series = lay.methods.size();
  const double group_w = plot_w / double(n_groups);
  const double bar_w = group_w / double(n_series + 1);

  for (size_t g = 0; g < n_groups; ++g) {
    for (size_t s = 0; s < n_series; ++s) {
      if (!lay.has_value[g][s]) continue;
      const double v = lay.value[g][s];
      const double x = kLeft + double(g) * group_w + (double(s) + 0.5) * bar_w;
      const double y_val = y_of(v);
      const double y_zero = y_of(0.0);
      const double y = std::min(y_val, y_zero);
      const double h = std::abs(y_zero - y_val);
      svg += cat("<rect x=\"", num(x), "\" y=\"", num(y), "\" width=\"",
                 num(bar_w), "\" height=\"", num(h), "\" fill=\"",
                 kPalette[int(s) % kPaletteSize], "\"/>\n");
      const double label_y = v >= 0.0 ? y - 4.0 : y + h + 12.0;
      svg += cat("<text x=\"", num(x + bar_w / 2), "\" y=\"", num(label_y),
                 "\" font-family=\"sans-serif\" font-size=\"11\""
                 " text-anchor=\"middle\">",
                 value_label(v), "</text>\n");
    }
    svg += cat("<text x=\"", num(kLeft + (double(g) + 0.5) * group_w),
               "\" y=\"", num(kHeight - kBottom + 20),
               "\" font-family=\"sans-serif\" font-size=\"13\""
               " text-anchor=\"middle\">",
               escape(lay.directions[g]), "</text>\n");
  }

  // Legend, one swatch per method, top right.
  for (size_t s = 0; s < n_series; ++s) {
    const double ly = kTop - 18.0 + double(s) * 16.0;
    svg += cat("<rect x=\"", num(kWidth - kRight - 140), "\" y=\"", num(ly),
               "\" width=\"10\" height=\"10\" fill=\"",
               kPalette[int(s) % kPaletteSize], "\"/>\n");
    svg += cat("<text x=\"", num(kWidth - kRight - 126), "\" y=\"",
               num(ly + 9),
               "\" font-family=\"sans-serif\" font-size=\"12\">",
               escape(lay.methods[s]), "</text>\n");
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_table(const std::vector<LabeledReport>& reports) {
  const double row_h = 22.0;
  const double header = 56.0;
  const double height = header + row_h * double(reports.size()) + 16.0;
  const std::vector<std::pair<double, std::string>> cols = {
      {20, "method"},       {140, "direction"}, {260, "diversity"},
      {380, "inputs"},      {470, "samples"}};

  std::string svg;
  svg += cat("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"560\""
             " height=\"", num(height), "\" viewBox=\"0 0 560 ", num(height),
             "\">\n");
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"280\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\""
         " text-anchor=\"middle\">Translation diversity</text>\n";
  for (const auto& [x, name] : cols)
    svg += cat("<text x=\"", num(x), "\" y=\"46\" font-family=\"sans-serif\""
               " font-size=\"12\" font-weight=\"bold\">",
               name, "</text>\n");
  svg += cat("<line x1=\"16\" y1=\"52\" x2=\"544\" y2=\"52\""
             " stroke=\"#333333\"/>\n");
  for (size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const double y = header + row_h * double(i) + 8.0;
    const std::vector<std::string> cells = {
        escape(r.method), escape(r.report.direction),
        value_label(r.report.diversity), cat(r.report.n_inputs),
        cat(r.report.n_samples_per_input)};
    for (size_t c = 0; c < cells.size(); ++c)
      svg += cat("<text x=\"", num(cols[c].first), "\" y=\"", num(y),
                 "\" font-family=\"sans-serif\" font-size=\"12\">", cells[c],
                 "</text>\n");
  }
  svg += "</svg>\n";
  return svg;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw IoError(cat("cannot write \"", path, "\""));
  out << text;
  out.flush();
  if (!out.good()) throw IoError(cat("failed writing \"", path, "\""));
}

}  // namespace

std::vector<std::string> render_report(
    const std::vector<LabeledReport>& reports, const std::string& out_dir) {
  if (reports.empty()) throw ConfigError("no reports to render");
  for (const auto& r : reports)
    if (r.method.empty()) throw ConfigError("report with an empty method label");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(cat("cannot create \"", out_dir, "\": ", ec.message()));

  const std::vector<std::pair<std::string, double metrics::BiasReport::*>>
      panels = {
          {"misclassification_rate",
           &metrics::BiasReport::misclassification_rate},
          {"drop_in_confidence", &metrics::BiasReport::drop_in_confidence},
          {"feature_distance", &metrics::BiasReport::feature_distance}};
  const std::vector<std::string> titles = {
      "Misclassification rate", "Drop in confidence", "Feature distance"};

  std::vector<std::string> files;
  for (size_t p = 0; p < panels.size(); ++p) {
    const Layout lay = build_layout(reports, panels[p].second);
    const std::string path =
        (fs::path(out_dir) / cat("chart_", panels[p].first, ".svg")).string();
    write_file(path, render_chart(titles[p], lay));
    files.push_back(path);
  }
  // build_layout already rejected duplicates; the table lists rows as given.
  const std::string table_path =
      (fs::path(out_dir) / "diversity_table.svg").string();
  write_file(table_path, render_table(reports));
  files.push_back(table_path);
  return files;
}

}  // namespace udit::report
