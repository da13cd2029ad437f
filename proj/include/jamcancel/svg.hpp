#pragma once

// Bare-bones SVG line plots: a frame, tick labels, one polyline per series and a legend.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace jamcancel {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

struct PlotSpec {
    std::string title, x_label, y_label;
    bool log_y = false;
    double log_floor = 1e-7;  // zeros are drawn here on a log axis
    std::vector<PlotSeries> series;
};

namespace svg_detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

inline constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace svg_detail

inline std::string render_svg(const PlotSpec& p) {
    using svg_detail::num;
    const double W = 640, H = 420, left = 70, right = 170, top = 40, bottom = 50;
    auto ty = [&](double y) { return p.log_y ? std::log10(std::max(y, p.log_floor)) : y; };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : p.series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (p.log_y) y0 = std::floor(y0), y1 = std::ceil(y1);
    if (y1 == y0) y1 = y0 + 1;
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << svg_detail::escape(p.title) << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + (x1 - x0) * i / 5.0;
        o << "<text x=\"" << num(px(xv)) << "\" y=\"" << H - bottom + 15 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    }
    if (p.log_y) {
        for (int e = static_cast<int>(y0); e <= static_cast<int>(y1); ++e) {
            const double yy = top + (1.0 - (e - y0) / (y1 - y0)) * ph;
            o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << num(yy) << "\" y2=\"" << num(yy) << "\" stroke=\"#ddd\"/>\n";
            o << "<text x=\"" << left - 5 << "\" y=\"" << num(yy + 4) << "\" text-anchor=\"end\">1e" << e << "</text>\n";
        }
    } else {
        for (int i = 0; i <= 5; ++i) {
            const double yv = y0 + (y1 - y0) * i / 5.0;
            const double yy = top + (1.0 - i / 5.0) * ph;
            o << "<text x=\"" << left - 5 << "\" y=\"" << num(yy + 4) << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
        }
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << svg_detail::escape(p.x_label) << "</text>\n";
    o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << svg_detail::escape(p.y_label) << "</text>\n";
    for (std::size_t k = 0; k < p.series.size(); ++k) {
        const auto& s = p.series[k];
        const char* color = svg_detail::kColors[k % std::size(svg_detail::kColors)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        o << "\"/>\n";
        const double ly = top + 10 + 16.0 * static_cast<double>(k);
        o << "<line x1=\"" << W - right + 10 << "\" x2=\"" << W - right + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << W - right + 35 << "\" y=\"" << ly + 4 << "\">" << svg_detail::escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline void write_svg(const std::string& path, const PlotSpec& p) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << render_svg(p);
}

}  // namespace jamcancel
