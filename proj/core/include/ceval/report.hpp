#pragma once

#include <map>
#include <string>
#include <vector>

#include "ceval/attack.hpp"
#include "ceval/explain.hpp"
#include "ceval/metric.hpp"

namespace ceval {

// Round-trip exact formatting for doubles ("%.17g" trimmed); infinities are
// serialized as "inf"/"-inf" since JSON has no infinity literal.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);

// Generic CSV writer; fields are written verbatim (callers quote if needed).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

void write_importance_csv(const ImportanceMap& m, const std::string& path);

std::string explanation_to_json(const Explanation& e);
std::string ceval_result_to_json(const CEvalResult& r);
std::string perturbation_to_json(const PerturbationResult& r, bool include_delta);

// Key = value per line, keys sorted; [section] header optional.
void write_manifest(const std::string& path, const std::string& section,
                    const std::map<std::string, std::string>& entries);

struct SvgSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

// Minimal self-contained charts: polyline line chart and quartile box plot.
void write_svg_line_chart(const std::string& path, const std::vector<SvgSeries>& series,
                          const std::string& x_label, const std::string& y_label);

struct BoxRow {
    std::string name;
    double lo = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, hi = 0.0;
};

void write_svg_box_plot(const std::string& path, const std::vector<BoxRow>& rows,
                        const std::string& y_label);

}  // namespace ceval
