#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ddvi/tensor.hpp"

namespace ddvi {

// 2-D scatter rendering. Output bytes are a pure function of the inputs.

struct PlotBounds {
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
};

inline const std::vector<std::string>& scatter_palette() {
    static const std::vector<std::string> colors = {
        "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0", "#f032e6",
        "#bcf60c", "#fabebe", "#008080", "#e6beff", "#9a6324", "#fffac8", "#800000",
        "#aaffc3", "#808000", "#ffd8b1", "#000075", "#808080", "#ffe119", "#a9a9a9",
        "#2f4f4f", "#8b4513", "#228b22", "#4b0082", "#ff1493"};
    return colors;
}

inline PlotBounds scatter_bounds(const Tensor& points) {
    PlotBounds b{-1.0, 1.0, -1.0, 1.0};
    if (points.rows() == 0) return b;
    b.x_min = b.x_max = points(0, 0);
    b.y_min = b.y_max = points(0, 1);
    for (std::size_t i = 1; i < points.rows(); ++i) {
        b.x_min = std::min(b.x_min, points(i, 0));
        b.x_max = std::max(b.x_max, points(i, 0));
        b.y_min = std::min(b.y_min, points(i, 1));
        b.y_max = std::max(b.y_max, points(i, 1));
    }
    const double mx = 0.05 * std::max(1e-9, b.x_max - b.x_min);
    const double my = 0.05 * std::max(1e-9, b.y_max - b.y_min);
    b.x_min -= mx;
    b.x_max += mx;
    b.y_min -= my;
    b.y_max += my;
    return b;
}

inline std::string render_scatter(const Tensor& points, const std::vector<int>& labels,
                                  const PlotBounds* bounds = nullptr) {
    detail::check(points.is_matrix() && points.cols() == 2, "render_scatter: points must be n x 2");
    detail::check(labels.empty() || labels.size() == points.rows(),
                  "render_scatter: labels misaligned");

    const PlotBounds b = bounds ? *bounds : scatter_bounds(points);
    const double W = 640, H = 640, pad = 40;
    auto sx = [&](double x) { return pad + (x - b.x_min) / (b.x_max - b.x_min) * (W - 2 * pad); };
    auto sy = [&](double y) { return H - pad - (y - b.y_min) / (b.y_max - b.y_min) * (H - 2 * pad); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", v);
        return std::string(buf);
    };

    const auto& palette = scatter_palette();
    std::map<int, std::string> legend;
    for (std::size_t i = 0; i < labels.size(); ++i)
        legend.emplace(labels[i], palette[static_cast<std::size_t>(labels[i]) % palette.size()]);

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" "
           "viewBox=\"0 0 640 640\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"640\" fill=\"white\"/>\n";
    // axes
    svg += "<line x1=\"" + num(pad) + "\" y1=\"" + num(H - pad) + "\" x2=\"" + num(W - pad) +
           "\" y2=\"" + num(H - pad) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    svg += "<line x1=\"" + num(pad) + "\" y1=\"" + num(pad) + "\" x2=\"" + num(pad) + "\" y2=\"" +
           num(H - pad) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";

    for (std::size_t i = 0; i < points.rows(); ++i) {
        const std::string color =
            labels.empty() ? "#4363d8"
                           : palette[static_cast<std::size_t>(labels[i]) % palette.size()];
        svg += "<circle cx=\"" + num(sx(points(i, 0))) + "\" cy=\"" + num(sy(points(i, 1))) +
               "\" r=\"2.5\" fill=\"" + color + "\" fill-opacity=\"0.7\"/>\n";
    }

    double ly = pad;
    for (const auto& [label, color] : legend) {
        svg += "<g class=\"legend\"><rect x=\"" + num(W - pad + 8) + "\" y=\"" + num(ly) +
               "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>";
        svg += "<text x=\"" + num(W - pad + 22) + "\" y=\"" + num(ly + 9) +
               "\" font-size=\"11\" font-family=\"sans-serif\">" + std::to_string(label) +
               "</text></g>\n";
        ly += 16;
    }
    svg += "</svg>\n";
    return svg;
}

inline void emit_scatter(const Tensor& points, const std::vector<int>& labels,
                         const std::string& out_path, const PlotBounds* bounds = nullptr) {
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw std::runtime_error("emit_scatter: cannot write " + out_path);
    os << render_scatter(points, labels, bounds);
}

}  // namespace ddvi
