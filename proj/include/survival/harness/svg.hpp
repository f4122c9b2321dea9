#ifndef SURVIVAL_HARNESS_SVG_HPP
#define SURVIVAL_HARNESS_SVG_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace survival::harness::svg {

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                           "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

inline const char* color(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof *kPalette)]; }

inline std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v)
    {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void finish()
    {
        if (!(lo <= hi)) lo = 0, hi = 1;
        if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    }
};

/// Plot frame with axes, ticks and a legend; data coordinates map into it.
class Canvas {
public:
    Canvas(double width, double height, std::string title, std::string xlabel, std::string ylabel)
        : w_(width), h_(height)
    {
        body_ << "<text x=\"" << num(w_ / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
              << escape(title) << "</text>\n"
              << "<text x=\"" << num(left_ + plot_w() / 2) << "\" y=\"" << num(h_ - 8)
              << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xlabel) << "</text>\n"
              << "<text x=\"14\" y=\"" << num(top_ + plot_h() / 2) << "\" text-anchor=\"middle\" font-size=\"12\" "
              << "transform=\"rotate(-90 14 " << num(top_ + plot_h() / 2) << ")\">" << escape(ylabel) << "</text>\n";
    }

    void set_ranges(Range x, Range y)
    {
        x.finish();
        y.finish();
        x_ = x;
        y_ = y;
        body_ << "<rect x=\"" << num(left_) << "\" y=\"" << num(top_) << "\" width=\"" << num(plot_w())
              << "\" height=\"" << num(plot_h()) << "\" fill=\"none\" stroke=\"#333\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double fx = x_.lo + (x_.hi - x_.lo) * i / 4.0;
            const double fy = y_.lo + (y_.hi - y_.lo) * i / 4.0;
            body_ << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(top_ + plot_h() + 16)
                  << "\" text-anchor=\"middle\" font-size=\"10\">" << tick(fx) << "</text>\n"
                  << "<text x=\"" << num(left_ - 4) << "\" y=\"" << num(py(fy) + 3)
                  << "\" text-anchor=\"end\" font-size=\"10\">" << tick(fy) << "</text>\n"
                  << "<line x1=\"" << num(left_) << "\" x2=\"" << num(left_ + plot_w()) << "\" y1=\"" << num(py(fy))
                  << "\" y2=\"" << num(py(fy)) << "\" stroke=\"#ddd\"/>\n";
        }
    }

    double px(double x) const { return left_ + (x - x_.lo) / (x_.hi - x_.lo) * plot_w(); }
    double py(double y) const { return top_ + plot_h() - (y - y_.lo) / (y_.hi - y_.lo) * plot_h(); }
    double plot_w() const { return w_ - left_ - right_; }
    double plot_h() const { return h_ - top_ - bottom_; }
    double left() const { return left_; }
    double top() const { return top_; }

    void polyline(const std::vector<double>& x, const std::vector<double>& y, const char* stroke)
    {
        body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i)
            if (std::isfinite(y[i])) body_ << num(px(x[i])) << ',' << num(py(y[i])) << ' ';
        body_ << "\"/>\n";
    }

    void dot(double x, double y, const char* fill, double r = 1.8)
    {
        body_ << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"" << num(r) << "\" fill=\""
              << fill << "\" fill-opacity=\"0.6\"/>\n";
    }

    void rect(double x0, double y0, double x1, double y1, const char* fill)
    {
        body_ << "<rect x=\"" << num(std::min(x0, x1)) << "\" y=\"" << num(std::min(y0, y1)) << "\" width=\""
              << num(std::abs(x1 - x0)) << "\" height=\"" << num(std::abs(y1 - y0)) << "\" fill=\"" << fill
              << "\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size = 10, const char* anchor = "middle")
    {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-size=\""
              << size << "\">" << escape(s) << "</text>\n";
    }

    void legend(const std::vector<std::string>& labels)
    {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double y = top_ + 12 + 14.0 * static_cast<double>(i);
            rect(w_ - right_ + 8, y - 8, w_ - right_ + 18, y + 2, color(i));
            text(w_ - right_ + 22, y, labels[i], 10, "start");
        }
    }

    std::string str() const
    {
        std::ostringstream out;
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\"" << num(h_)
            << "\" viewBox=\"0 0 " << num(w_) << ' ' << num(h_) << "\" font-family=\"sans-serif\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << body_.str() << "</svg>\n";
        return out.str();
    }

private:
    static std::string tick(double v)
    {
        char buf[32];
        if (std::abs(v) >= 1e4)
            std::snprintf(buf, sizeof buf, "%.3g", v);
        else
            std::snprintf(buf, sizeof buf, "%.2f", v);
        return buf;
    }

    double w_, h_;
    double left_ = 60, right_ = 110, top_ = 32, bottom_ = 42;
    Range x_, y_;
    std::ostringstream body_;
};

inline std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series)
{
    Canvas c(720, 420, title, xlabel, ylabel);
    Range xr, yr;
    for (const auto& s : series) {
        for (double v : s.x) xr.add(v);
        for (double v : s.y) yr.add(v);
    }
    c.set_ranges(xr, yr);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < series.size(); ++i) {
        c.polyline(series[i].x, series[i].y, color(i));
        labels.push_back(series[i].label);
    }
    c.legend(labels);
    return c.str();
}

/// Points grouped by class; `groups[i]` is drawn in palette colour i.
inline std::string scatter_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                const std::vector<Series>& groups)
{
    Canvas c(620, 520, title, xlabel, ylabel);
    Range xr, yr;
    for (const auto& g : groups) {
        for (double v : g.x) xr.add(v);
        for (double v : g.y) yr.add(v);
    }
    c.set_ranges(xr, yr);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t k = 0; k < std::min(groups[i].x.size(), groups[i].y.size()); ++k)
            c.dot(groups[i].x[k], groups[i].y[k], color(i));
        labels.push_back(groups[i].label);
    }
    c.legend(labels);
    return c.str();
}

/// Grouped bars: `values[g][s]` is series s within category g.
inline std::string bar_chart(const std::string& title, const std::string& ylabel, const std::vector<std::string>& categories,
                             const std::vector<std::string>& series_labels, const std::vector<std::vector<double>>& values,
                             double ymax = 1.0)
{
    const double width = std::max(480.0, 60.0 * static_cast<double>(categories.size()) + 200.0);
    Canvas c(width, 420, title, "", ylabel);
    Range xr, yr;
    xr.add(0);
    xr.add(static_cast<double>(categories.size()));
    yr.add(0);
    yr.add(ymax);
    c.set_ranges(xr, yr);
    const double ns = static_cast<double>(std::max<std::size_t>(1, series_labels.size()));
    for (std::size_t g = 0; g < categories.size(); ++g) {
        for (std::size_t s = 0; s < values[g].size(); ++s) {
            const double x0 = static_cast<double>(g) + 0.1 + 0.8 * static_cast<double>(s) / ns;
            const double x1 = x0 + 0.8 / ns;
            c.rect(c.px(x0), c.py(0), c.px(x1), c.py(values[g][s]), color(s));
        }
        c.text(c.px(static_cast<double>(g) + 0.5), c.top() + c.plot_h() + 30, categories[g], 9);
    }
    c.legend(series_labels);
    return c.str();
}

} // namespace survival::harness::svg

#endif
