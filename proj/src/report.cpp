#include "mqf/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mqf/errors.hpp"

namespace mqf {

namespace {

std::string f2(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

bool near(double a, double b) { return std::abs(a - b) < 1e-9; }

std::size_t find_level(const std::vector<double>& levels, double q) {
    for (std::size_t j = 0; j < levels.size(); ++j)
        if (near(levels[j], q)) return j;
    return levels.size();
}

// Band column pairs, innermost last so nested fills stack naturally.
std::vector<std::pair<std::size_t, std::size_t>> band_pairs(const std::vector<double>& levels) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (levels.size() >= 20) {
        for (int p = 5; p <= 45; p += 10) {
            std::size_t lo = find_level(levels, p / 100.0);
            std::size_t hi = find_level(levels, (100 - p) / 100.0);
            if (lo < levels.size() && hi < levels.size()) pairs.emplace_back(lo, hi);
        }
        if (!pairs.empty()) return pairs;
    }
    for (std::size_t j = 0; 2 * j + 1 < levels.size(); ++j)
        pairs.emplace_back(j, levels.size() - 1 - j);
    return pairs;
}

}  // namespace

std::string render_series_svg(const SeriesRecord& rec, const std::vector<ForecastGrid>& grids,
                              const ReportOptions& opt) {
    // Data extents over actuals and every band edge.
    double t_min = static_cast<double>(rec.t0);
    double t_max = static_cast<double>(rec.time_at(rec.length() - 1));
    double y_min = rec.y.empty() ? 0.0 : rec.y[0];
    double y_max = y_min;
    for (double v : rec.y) {
        y_min = std::min(y_min, v);
        y_max = std::max(y_max, v);
    }
    for (const ForecastGrid& g : grids) {
        if (g.series_id != rec.id) throw ArgumentError("grid for series " + g.series_id +
                                                       " passed to figure of " + rec.id);
        t_min = std::min(t_min, static_cast<double>(g.fct));
        t_max = std::max(t_max, static_cast<double>(g.fct + static_cast<std::int64_t>(g.values.rows())));
        for (std::size_t i = 0; i < g.values.numel(); ++i) {
            y_min = std::min(y_min, g.values.at(i));
            y_max = std::max(y_max, g.values.at(i));
        }
    }
    if (t_max <= t_min) t_max = t_min + 1.0;
    double pad = (y_max - y_min) * 0.05;
    if (pad <= 0.0) pad = 1.0;
    y_min -= pad;
    y_max += pad;

    const double pw = opt.width - 2.0 * opt.margin;
    const double ph = opt.height - 2.0 * opt.margin;
    auto sx = [&](double t) { return opt.margin + (t - t_min) / (t_max - t_min) * pw; };
    auto sy = [&](double y) { return opt.margin + (y_max - y) / (y_max - y_min) * ph; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(opt.width) + "\" height=\"" +
           f2(opt.height) + "\" viewBox=\"0 0 " + f2(opt.width) + " " + f2(opt.height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<rect x=\"" + f2(opt.margin) + "\" y=\"" + f2(opt.margin) + "\" width=\"" + f2(pw) +
           "\" height=\"" + f2(ph) + "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
    svg += "<text x=\"" + f2(opt.margin) + "\" y=\"" + f2(opt.margin - 12.0) +
           "\" font-family=\"monospace\" font-size=\"14\">" + rec.id + "</text>\n";

    // Bands first so lines stay visible on top.
    for (const ForecastGrid& g : grids) {
        for (auto [lo, hi] : band_pairs(g.quantiles)) {
            std::string pts;
            for (std::size_t k = 0; k < g.values.rows(); ++k) {
                double t = static_cast<double>(g.fct) + static_cast<double>(k + 1);
                pts += f2(sx(t)) + "," + f2(sy(g.values.at(k, hi))) + " ";
            }
            for (std::size_t k = g.values.rows(); k-- > 0;) {
                double t = static_cast<double>(g.fct) + static_cast<double>(k + 1);
                pts += f2(sx(t)) + "," + f2(sy(g.values.at(k, lo)));
                if (k) pts += " ";
            }
            svg += "<polygon points=\"" + pts + "\" fill=\"#1f77b4\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
        }
    }

    // Ground truth.
    if (!rec.y.empty()) {
        std::string pts;
        for (std::size_t i = 0; i < rec.length(); ++i) {
            pts += f2(sx(static_cast<double>(rec.time_at(i)))) + "," + f2(sy(rec.y[i]));
            if (i + 1 < rec.length()) pts += " ";
        }
        svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"#222222\" stroke-width=\"1.2\"/>\n";
    }

    // FCT markers and median lines.
    for (const ForecastGrid& g : grids) {
        double x = sx(static_cast<double>(g.fct));
        svg += "<line x1=\"" + f2(x) + "\" y1=\"" + f2(opt.margin) + "\" x2=\"" + f2(x) +
               "\" y2=\"" + f2(opt.margin + ph) +
               "\" stroke=\"#d62728\" stroke-width=\"1\" stroke-dasharray=\"4,3\"/>\n";
        std::size_t med = find_level(g.quantiles, 0.5);
        if (med < g.quantiles.size()) {
            std::string pts;
            for (std::size_t k = 0; k < g.values.rows(); ++k) {
                double t = static_cast<double>(g.fct) + static_cast<double>(k + 1);
                pts += f2(sx(t)) + "," + f2(sy(g.values.at(k, med)));
                if (k + 1 < g.values.rows()) pts += " ";
            }
            svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n";
        }
    }

    svg += "</svg>\n";
    return svg;
}

}  // namespace mqf
