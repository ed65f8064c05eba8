#pragma once

// Minimal deterministic SVG emission for the report plots: line charts of
// score series over training epochs and square heatmaps for correlation
// matrices. Output is plain text with fixed formatting so identical inputs
// produce byte-identical files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace drivebench::svg {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

// Fixed qualitative palette, cycled by series index.
inline const char* series_color(size_t i) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                   "#bcbd22", "#17becf"};
    return colors[i % 10];
}

struct LineSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Line chart with axes, tick labels and a legend. Y range is padded data
// range unless fixed by the caller.
inline std::string line_chart(const std::vector<LineSeries>& series, const std::string& title,
                              const std::string& x_label, const std::string& y_label,
                              double y_min = 0.0, double y_max = -1.0) {
    const double width = 720, height = 420;
    const double ml = 64, mr = 160, mt = 40, mb = 48;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const LineSeries& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            x_lo = std::min(x_lo, s.x[i]);
            x_hi = std::max(x_hi, s.x[i]);
            y_lo = std::min(y_lo, s.y[i]);
            y_hi = std::max(y_hi, s.y[i]);
        }
    if (x_lo > x_hi) {
        x_lo = 0;
        x_hi = 1;
        y_lo = 0;
        y_hi = 1;
    }
    if (y_max > y_min) {
        y_lo = y_min;
        y_hi = y_max;
    } else {
        const double pad = std::max(1e-9, 0.08 * (y_hi - y_lo));
        y_lo -= pad;
        y_hi += pad;
    }
    if (x_hi - x_lo < 1e-12) x_hi = x_lo + 1.0;
    if (y_hi - y_lo < 1e-12) y_hi = y_lo + 1.0;

    const auto px = [&](double x) { return ml + pw * (x - x_lo) / (x_hi - x_lo); };
    const auto py = [&](double y) { return mt + ph * (1.0 - (y - y_lo) / (y_hi - y_lo)); };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
           num(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
           escape(title) + "</text>\n";

    // axes and ticks
    out += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" +
           num(mt + ph) + "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(ml + pw) +
           "\" y2=\"" + num(mt + ph) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fy = y_lo + (y_hi - y_lo) * t / 4.0;
        out += "<line x1=\"" + num(ml - 4) + "\" y1=\"" + num(py(fy)) + "\" x2=\"" + num(ml) +
               "\" y2=\"" + num(py(fy)) + "\" stroke=\"black\"/>\n";
        out += "<text x=\"" + num(ml - 8) + "\" y=\"" + num(py(fy) + 4) +
               "\" text-anchor=\"end\">" + num(fy) + "</text>\n";
        const double fx = x_lo + (x_hi - x_lo) * t / 4.0;
        out += "<line x1=\"" + num(px(fx)) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(px(fx)) +
               "\" y2=\"" + num(mt + ph + 4) + "\" stroke=\"black\"/>\n";
        out += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(mt + ph + 18) +
               "\" text-anchor=\"middle\">" + num(fx) + "</text>\n";
    }
    out += "<text x=\"" + num(ml + pw / 2) + "\" y=\"" + num(height - 10) +
           "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
    out += "<text x=\"16\" y=\"" + num(mt + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           num(mt + ph / 2) + ")\">" + escape(y_label) + "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const LineSeries& s = series[si];
        std::string pts;
        for (size_t i = 0; i < s.x.size(); ++i)
            pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
        out += "<polyline fill=\"none\" stroke=\"" + std::string(series_color(si)) +
               "\" stroke-width=\"1.8\" points=\"" + pts + "\"/>\n";
        for (size_t i = 0; i < s.x.size(); ++i)
            out += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) +
                   "\" r=\"2.6\" fill=\"" + series_color(si) + "\"/>\n";
        const double ly = mt + 16 + 18 * static_cast<double>(si);
        out += "<line x1=\"" + num(ml + pw + 12) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" +
               num(ml + pw + 34) + "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + series_color(si) +
               "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + num(ml + pw + 40) + "\" y=\"" + num(ly) + "\">" + escape(s.label) +
               "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

// Diverging blue-white-red map for values in [-1, 1]; NaN renders gray.
inline std::string heat_color(double v) {
    if (!(v == v)) return "#cccccc";
    v = std::clamp(v, -1.0, 1.0);
    int r, g, b;
    if (v >= 0) {
        r = 255;
        g = static_cast<int>(std::lround(255 * (1.0 - v)));
        b = g;
    } else {
        b = 255;
        g = static_cast<int>(std::lround(255 * (1.0 + v)));
        r = g;
    }
    char buf[10];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

// Square heatmap with row/column labels and in-cell values ("-" for NaN).
inline std::string heatmap(const std::vector<std::string>& labels,
                           const std::vector<std::vector<double>>& cells,
                           const std::string& title) {
    const size_t n = labels.size();
    const double cell = 54, ml = 96, mt = 72;
    const double width = ml + cell * static_cast<double>(n) + 24;
    const double height = mt + cell * static_cast<double>(n) + 24;

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
           num(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" +
           escape(title) + "</text>\n";
    for (size_t i = 0; i < n; ++i) {
        const double cx = ml + cell * (static_cast<double>(i) + 0.5);
        out += "<text x=\"" + num(cx) + "\" y=\"" + num(mt - 10) + "\" text-anchor=\"middle\">" +
               escape(labels[i]) + "</text>\n";
        const double cy = mt + cell * (static_cast<double>(i) + 0.5);
        out += "<text x=\"" + num(ml - 8) + "\" y=\"" + num(cy + 4) + "\" text-anchor=\"end\">" +
               escape(labels[i]) + "</text>\n";
        for (size_t j = 0; j < n; ++j) {
            const double v = cells[i][j];
            const double x = ml + cell * static_cast<double>(j);
            const double y = mt + cell * static_cast<double>(i);
            out += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cell) +
                   "\" height=\"" + num(cell) + "\" fill=\"" + heat_color(v) +
                   "\" stroke=\"#888\"/>\n";
            out += "<text x=\"" + num(x + cell / 2) + "\" y=\"" + num(y + cell / 2 + 4) +
                   "\" text-anchor=\"middle\">" + (v == v ? num(v) : std::string("-")) +
                   "</text>\n";
        }
    }
    out += "</svg>\n";
    return out;
}

inline void write_file(const std::string& content, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << content;
}

}  // namespace drivebench::svg
