#include "ceval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace ceval {

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // shortest representation that round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char test[40];
        std::snprintf(test, sizeof(test), "%.*g", prec, v);
        double back = std::strtod(test, nullptr);
        if (back == v) return test;
    }
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << content;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream out;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) out << ",";
        out << header[i];
    }
    out << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << row[i];
        }
        out << "\n";
    }
    write_text_file(path, out.str());
}

void write_importance_csv(const ImportanceMap& m, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<size_t>(m.weights.size()));
    for (int64_t i = 0; i < m.weights.size(); ++i)
        rows.push_back({std::to_string(i), format_double(m.weights[i])});
    write_csv(path, {"feature_index", "weight"}, rows);
}

std::string explanation_to_json(const Explanation& e) {
    json j;
    j["k"] = e.k;
    j["indices"] = e.feature_indices;
    j["source"] = e.source;
    j["granularity"] = e.granularity == Granularity::Pixel ? "pixel" : "segment";
    if (!e.metadata.empty()) j["metadata"] = e.metadata;
    return j.dump(1);
}

std::string ceval_result_to_json(const CEvalResult& r) {
    json j;
    j["c"] = std::isfinite(r.c_value) ? json(r.c_value) : json(format_double(r.c_value));
    if (r.normalized) {
        j["normalized"] =
            std::isfinite(*r.normalized) ? json(*r.normalized) : json(format_double(*r.normalized));
    }
    if (r.c_empty) j["c_empty"] = *r.c_empty;
    j["backend"] = r.backend;
    j["k"] = r.explanation.k;
    j["explainer"] = r.explanation.source;
    j["iterations"] = r.iterations;
    return j.dump(1);
}

std::string perturbation_to_json(const PerturbationResult& r, bool include_delta) {
    json j;
    j["l2_norm"] = r.l2_norm;
    j["original_label"] = r.original_label;
    j["new_label"] = r.new_label;
    j["backend"] = backend_tag(r.backend);
    j["iterations_used"] = r.iterations_used;
    if (include_delta) j["delta"] = r.delta.data;
    return j.dump(1);
}

void write_manifest(const std::string& path, const std::string& section,
                    const std::map<std::string, std::string>& entries) {
    std::ostringstream out;
    if (!section.empty()) out << "[" << section << "]\n";
    for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
    write_text_file(path, out.str());
}

namespace {

const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                               "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Extent {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (lo > hi) {
            lo = 0;
            hi = 1;
        }
        if (lo == hi) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

}  // namespace

void write_svg_line_chart(const std::string& path, const std::vector<SvgSeries>& series,
                          const std::string& x_label, const std::string& y_label) {
    const double W = 640, H = 420, ml = 64, mr = 160, mt = 24, mb = 48;
    Extent ex, ey;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            ex.add(x);
            ey.add(y);
        }
    ex.pad();
    ey.pad();
    auto px = [&](double x) { return ml + (x - ex.lo) / (ex.hi - ex.lo) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ey.lo) / (ey.hi - ey.lo) * (H - mt - mb); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
        << H - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        double fx = ex.lo + (ex.hi - ex.lo) * t / 4.0;
        double fy = ey.lo + (ey.hi - ey.lo) * t / 4.0;
        out << "<text x=\"" << px(fx) << "\" y=\"" << H - mb + 18
            << "\" font-size=\"11\" text-anchor=\"middle\">" << format_double(std::round(fx * 100) / 100)
            << "</text>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
            << "\" font-size=\"11\" text-anchor=\"end\">" << format_double(std::round(fy * 1000) / 1000)
            << "</text>\n";
        out << "<line x1=\"" << ml << "\" y1=\"" << py(fy) << "\" x2=\"" << W - mr << "\" y2=\""
            << py(fy) << "\" stroke=\"#dddddd\"/>\n";
    }
    out << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 10
        << "\" font-size=\"13\" text-anchor=\"middle\">" << svg_escape(x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << (mt + H - mb) / 2 << ")\">" << svg_escape(y_label) << "</text>\n";

    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kSeriesColors[s % 8];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (auto [x, y] : series[s].points)
            if (std::isfinite(y)) out << px(x) << "," << py(y) << " ";
        out << "\"/>\n";
        for (auto [x, y] : series[s].points)
            if (std::isfinite(y))
                out << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2.6\" fill=\""
                    << color << "\"/>\n";
        out << "<text x=\"" << W - mr + 12 << "\" y=\"" << mt + 16 + 18 * s
            << "\" font-size=\"12\" fill=\"" << color << "\">" << svg_escape(series[s].name)
            << "</text>\n";
    }
    out << "</svg>\n";
    write_text_file(path, out.str());
}

void write_svg_box_plot(const std::string& path, const std::vector<BoxRow>& rows,
                        const std::string& y_label) {
    const double W = std::max(360.0, 110.0 * rows.size() + 100), H = 420, ml = 64, mt = 24,
                 mb = 64;
    Extent ey;
    for (const auto& r : rows) {
        ey.add(r.lo);
        ey.add(r.hi);
    }
    ey.pad();
    auto py = [&](double y) { return H - mb - (y - ey.lo) / (ey.hi - ey.lo) * (H - mt - mb); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        double fy = ey.lo + (ey.hi - ey.lo) * t / 4.0;
        out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
            << "\" font-size=\"11\" text-anchor=\"end\">" << format_double(std::round(fy * 1000) / 1000)
            << "</text>\n";
        out << "<line x1=\"" << ml << "\" y1=\"" << py(fy) << "\" x2=\"" << W - 20 << "\" y2=\""
            << py(fy) << "\" stroke=\"#dddddd\"/>\n";
    }
    out << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << (mt + H - mb) / 2 << ")\">" << svg_escape(y_label) << "</text>\n";

    for (size_t i = 0; i < rows.size(); ++i) {
        const BoxRow& r = rows[i];
        double cx = ml + 60 + 110.0 * static_cast<double>(i);
        double bw = 56;
        const char* color = kSeriesColors[i % 8];
        out << "<line x1=\"" << cx << "\" y1=\"" << py(r.lo) << "\" x2=\"" << cx << "\" y2=\""
            << py(r.hi) << "\" stroke=\"black\"/>\n";
        for (double whisker : {r.lo, r.hi})
            out << "<line x1=\"" << cx - bw / 4 << "\" y1=\"" << py(whisker) << "\" x2=\""
                << cx + bw / 4 << "\" y2=\"" << py(whisker) << "\" stroke=\"black\"/>\n";
        out << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << py(r.q3) << "\" width=\"" << bw
            << "\" height=\"" << py(r.q1) - py(r.q3) << "\" fill=\"" << color
            << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\"/>\n";
        out << "<line x1=\"" << cx - bw / 2 << "\" y1=\"" << py(r.median) << "\" x2=\""
            << cx + bw / 2 << "\" y2=\"" << py(r.median) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << cx << "\" y=\"" << H - mb + 20
            << "\" font-size=\"11\" text-anchor=\"middle\">" << svg_escape(r.name) << "</text>\n";
    }
    out << "</svg>\n";
    write_text_file(path, out.str());
}

}  // namespace ceval
