#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"

namespace deepid {
namespace svg {

// Minimal hand-emitted vector plots: axes, polylines, bars, heat maps.
// No plotting dependency; output is deterministic.

inline std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

inline std::string num(double v) { return format_real(v, 6); }

struct Series {
    std::string label;
    std::vector<double> x, y;
};

namespace detail {

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#d62728", "#2ca02c", "#1f77b4", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#17becf", "#000000"};
    return colors[i % 8];
}

struct Frame {
    double width = 720, height = 480;
    double left = 70, right = 24, top = 40, bottom = 52;
    double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;

    double px(double x) const { return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - y_lo) / (y_hi - y_lo) * (height - top - bottom); }
};

inline void open_svg(std::ostream& out, const Frame& f, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
        << "\" viewBox=\"0 0 " << num(f.width) << " " << num(f.height) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << num(f.width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"15\">"
        << esc(title) << "</text>\n";
}

inline void axes(std::ostream& out, const Frame& f, const std::string& x_label, const std::string& y_label) {
    out << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.height - f.bottom) << "\" x2=\""
        << num(f.width - f.right) << "\" y2=\"" << num(f.height - f.bottom) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.top) << "\" x2=\"" << num(f.left) << "\" y2=\""
        << num(f.height - f.bottom) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = f.x_lo + (f.x_hi - f.x_lo) * t / 4.0;
        const double fy = f.y_lo + (f.y_hi - f.y_lo) * t / 4.0;
        out << "<line x1=\"" << num(f.px(fx)) << "\" y1=\"" << num(f.height - f.bottom) << "\" x2=\"" << num(f.px(fx))
            << "\" y2=\"" << num(f.height - f.bottom + 5) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << num(f.px(fx)) << "\" y=\"" << num(f.height - f.bottom + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << format_real(fx, 4)
            << "</text>\n";
        out << "<line x1=\"" << num(f.left - 5) << "\" y1=\"" << num(f.py(fy)) << "\" x2=\"" << num(f.left)
            << "\" y2=\"" << num(f.py(fy)) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << num(f.left - 8) << "\" y=\"" << num(f.py(fy) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << format_real(fy, 4)
            << "</text>\n";
    }
    out << "<text x=\"" << num((f.left + f.width - f.right) / 2) << "\" y=\"" << num(f.height - 14)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << esc(x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << num((f.top + f.height - f.bottom) / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
        << num((f.top + f.height - f.bottom) / 2) << ")\">" << esc(y_label) << "</text>\n";
}

} // namespace detail

inline void write_line_chart(std::ostream& out, const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<Series>& series) {
    detail::Frame f;
    bool first = true;
    for (const Series& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                f.x_lo = f.x_hi = s.x[i];
                f.y_lo = f.y_hi = s.y[i];
                first = false;
            }
            f.x_lo = std::min(f.x_lo, s.x[i]);
            f.x_hi = std::max(f.x_hi, s.x[i]);
            f.y_lo = std::min(f.y_lo, s.y[i]);
            f.y_hi = std::max(f.y_hi, s.y[i]);
        }
    }
    if (first) {
        f.x_lo = f.y_lo = 0;
        f.x_hi = f.y_hi = 1;
    }
    if (f.x_hi == f.x_lo) f.x_hi = f.x_lo + 1;
    if (f.y_hi == f.y_lo) f.y_hi = f.y_lo + 1;
    const double pad = 0.05 * (f.y_hi - f.y_lo);
    f.y_lo -= pad;
    f.y_hi += pad;

    detail::open_svg(out, f, title);
    detail::axes(out, f, x_label, y_label);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        out << "<polyline fill=\"none\" stroke=\"" << detail::palette(si) << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (i) out << ' ';
            out << num(f.px(s.x[i])) << ',' << num(f.py(s.y[i]));
        }
        out << "\"/>\n";
        out << "<text x=\"" << num(f.width - f.right - 6) << "\" y=\"" << num(f.top + 16 + 16 * si)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << detail::palette(si)
            << "\">" << esc(s.label) << "</text>\n";
    }
    out << "</svg>\n";
}

inline void write_histogram(std::ostream& out, const std::string& title, const std::string& x_label, double lo,
                            double bin_width, const std::vector<std::size_t>& counts) {
    detail::Frame f;
    f.x_lo = lo;
    f.x_hi = lo + bin_width * static_cast<double>(counts.size());
    f.y_lo = 0;
    f.y_hi = 1;
    for (std::size_t c : counts) f.y_hi = std::max(f.y_hi, static_cast<double>(c));
    f.y_hi *= 1.05;
    detail::open_svg(out, f, title);
    detail::axes(out, f, x_label, "count");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double x0 = f.px(lo + bin_width * static_cast<double>(i));
        const double x1 = f.px(lo + bin_width * static_cast<double>(i + 1));
        const double y = f.py(static_cast<double>(counts[i]));
        out << "<rect x=\"" << num(x0) << "\" y=\"" << num(y) << "\" width=\"" << num(std::max(0.5, x1 - x0 - 0.5))
            << "\" height=\"" << num(f.height - f.bottom - y) << "\" fill=\"#1f77b4\"/>\n";
    }
    out << "</svg>\n";
}

// Warm colors for high values, cool for low; linear two-stop map through white.
inline std::string heat_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const int cool[3] = {59, 76, 192}, warm[3] = {180, 4, 38}, white[3] = {255, 255, 255};
    int rgb[3];
    for (int c = 0; c < 3; ++c) {
        rgb[c] = t < 0.5 ? static_cast<int>(cool[c] + (white[c] - cool[c]) * (2 * t))
                         : static_cast<int>(white[c] + (warm[c] - white[c]) * (2 * t - 1));
    }
    return "rgb(" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) + "," + std::to_string(rgb[2]) + ")";
}

inline void write_heatmap(std::ostream& out, const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<std::string>& row_labels,
                          const std::vector<std::vector<double>>& rows) {
    detail::Frame f;
    f.x_lo = 0;
    f.x_hi = rows.empty() ? 1 : static_cast<double>(rows[0].size());
    f.y_lo = 0;
    f.y_hi = std::max<std::size_t>(rows.size(), 1);
    detail::open_svg(out, f, title);
    double hi = 0.0;
    for (const auto& row : rows)
        for (double v : row) hi = std::max(hi, v);
    if (hi <= 0.0) hi = 1.0;
    const double cw = (f.width - f.left - f.right) / std::max(1.0, f.x_hi);
    const double ch = (f.height - f.top - f.bottom) / std::max(1.0, f.y_hi);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            out << "<rect x=\"" << num(f.left + cw * static_cast<double>(c)) << "\" y=\""
                << num(f.top + ch * static_cast<double>(r)) << "\" width=\"" << num(cw + 0.5) << "\" height=\""
                << num(ch + 0.5) << "\" fill=\"" << heat_color(rows[r][c] / hi) << "\"/>\n";
        }
        if (r < row_labels.size())
            out << "<text x=\"" << num(f.left - 6) << "\" y=\"" << num(f.top + ch * (static_cast<double>(r) + 0.6))
                << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << esc(row_labels[r])
                << "</text>\n";
    }
    out << "<text x=\"" << num((f.left + f.width - f.right) / 2) << "\" y=\"" << num(f.height - 14)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << esc(x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << num((f.top + f.height - f.bottom) / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
        << num((f.top + f.height - f.bottom) / 2) << ")\">" << esc(y_label) << "</text>\n";
    out << "</svg>\n";
}

} // namespace svg
} // namespace deepid
