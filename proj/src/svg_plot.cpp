#include "pglab/svg_plot.hpp"
#include "pglab/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace pglab {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"};

std::string escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

} // namespace

std::string render_svg(const std::vector<PlotSeries>& series, const PlotOptions& options) {
    if (series.empty()) throw InvalidArgument("nothing to plot");
    double x_min = kInf, x_max = kNegInf, ly_min = kInf, ly_max = kNegInf;
    bool any = false;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw InvalidArgument("series " + s.label + " has mismatched x and y");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i]) || s.y[i] < options.y_floor) continue;
            any = true;
            x_min = std::min(x_min, s.x[i]);
            x_max = std::max(x_max, s.x[i]);
            ly_min = std::min(ly_min, std::log10(s.y[i]));
            ly_max = std::max(ly_max, std::log10(s.y[i]));
        }
    }
    if (!any) throw InvalidArgument("no plottable points");
    ly_min = std::floor(ly_min);
    ly_max = std::ceil(ly_max);
    if (ly_max <= ly_min) ly_max = ly_min + 1.0;
    if (x_max <= x_min) x_max = x_min + 1.0;

    const double left = 80, right = 200, top = 40, bottom = 60;
    const double pw = options.width - left - right;
    const double ph = options.height - top - bottom;
    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * pw; };
    auto py = [&](double y) { return top + (ly_max - std::log10(y)) / (ly_max - ly_min) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\"" << options.height
       << "\" viewBox=\"0 0 " << options.width << ' ' << options.height << "\" font-family=\"sans-serif\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!options.title.empty()) {
        os << "<text x=\"" << num(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
           << escape(options.title) << "</text>\n";
    }

    const int decades = static_cast<int>(ly_max - ly_min);
    const int decade_step = std::max(1, decades / 8);
    for (int d = static_cast<int>(ly_min); d <= static_cast<int>(ly_max); d += decade_step) {
        const double y = py(std::pow(10.0, d));
        os << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + pw) << "\" y2=\""
           << num(y) << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4)
           << "\" text-anchor=\"end\" font-size=\"11\">1e" << d << "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double xv = x_min + (x_max - x_min) * i / 5.0;
        const double x = px(xv);
        os << "<line x1=\"" << num(x) << "\" y1=\"" << num(top) << "\" x2=\"" << num(x) << "\" y2=\"" << num(top + ph)
           << "\" stroke=\"#eeeeee\"/>\n";
        char label[32];
        std::snprintf(label, sizeof label, "%g", std::round(xv * 100.0) / 100.0);
        os << "<text x=\"" << num(x) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\" font-size=\"11\">"
           << label << "</text>\n";
    }
    os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(options.height - 16)
       << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(options.x_label) << "</text>\n";
    os << "<text transform=\"translate(20," << num(top + ph / 2)
       << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">" << escape(options.y_label) << "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = kPalette[i % std::size(kPalette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\""
           << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
        bool first = true;
        for (std::size_t p = 0; p < s.x.size(); ++p) {
            if (!std::isfinite(s.y[p]) || s.y[p] < options.y_floor) continue;
            os << (first ? "" : " ") << num(px(s.x[p])) << ',' << num(py(s.y[p]));
            first = false;
        }
        os << "\"/>\n";
        const double ly = top + 14 + 20.0 * static_cast<double>(i);
        const double lx = left + pw + 12;
        os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 24) << "\" y2=\"" << num(ly)
           << "\" stroke=\"" << color << "\" stroke-width=\"1.6\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
           << "/>\n";
        os << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly + 4) << "\" font-size=\"11\">" << escape(s.label)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace pglab
