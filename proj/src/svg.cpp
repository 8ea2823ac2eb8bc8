#include "unlab/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "unlab/errors.hpp"

namespace unlab {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void write_file(const std::string& path, const std::string& body, int width, int height) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write svg: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\">\n"
        << body << "</svg>\n";
}

// blue (low) -> white (mid) -> red (high), t in [0,1]
std::string diverging_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto mix = [](double a, double b, double u) { return a + (b - a) * u; };
    double r, g, b;
    if (t < 0.5) {
        const double u = t * 2.0;
        r = mix(43, 255, u), g = mix(108, 255, u), b = mix(176, 255, u);
    } else {
        const double u = (t - 0.5) * 2.0;
        r = mix(255, 197, u), g = mix(255, 48, u), b = mix(255, 48, u);
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(r), static_cast<int>(g),
                  static_cast<int>(b));
    return buf;
}

}  // namespace

void write_scatter_svg(const std::string& path, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<ScatterPoint>& points) {
    const int W = 420, H = 420, M = 60;
    std::ostringstream s;
    s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
    s << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << W - 2 * M << "\" height=\""
      << H - 2 * M << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int g = 0; g <= 4; ++g) {
        const double f = g / 4.0;
        const double x = M + f * (W - 2 * M);
        const double y = H - M - f * (H - 2 * M);
        s << "<text x=\"" << num(x) << "\" y=\"" << H - M + 18
          << "\" text-anchor=\"middle\" font-size=\"10\">" << num(f) << "</text>\n";
        s << "<text x=\"" << M - 8 << "\" y=\"" << num(y + 3)
          << "\" text-anchor=\"end\" font-size=\"10\">" << num(f) << "</text>\n";
    }
    s << "<text x=\"" << W / 2 << "\" y=\"" << H - 16
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    s << "<text x=\"16\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
      << H / 2 << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
    for (const auto& p : points) {
        const double x = M + std::clamp(p.x, 0.0, 1.0) * (W - 2 * M);
        const double y = H - M - std::clamp(p.y, 0.0, 1.0) * (H - 2 * M);
        s << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"5\" fill=\"" << p.color
          << "\"/>\n";
        s << "<text x=\"" << num(x + 8) << "\" y=\"" << num(y - 6) << "\" font-size=\"11\">"
          << p.label << "</text>\n";
    }
    write_file(path, s.str(), W, H);
}

void write_heatmap_svg(const std::string& path, const std::string& title,
                       const std::vector<std::string>& row_labels,
                       const std::vector<std::string>& col_labels,
                       const std::vector<std::vector<std::optional<double>>>& values) {
    const int cell = 84, left = 130, top = 70;
    const int W = left + cell * static_cast<int>(col_labels.size()) + 20;
    const int H = top + cell * static_cast<int>(row_labels.size()) + 20;
    std::ostringstream s;
    s << "<text x=\"" << W / 2 << "\" y=\"26\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c)
        s << "<text x=\"" << left + cell * static_cast<int>(c) + cell / 2 << "\" y=\"" << top - 10
          << "\" text-anchor=\"middle\" font-size=\"11\">" << col_labels[c] << "</text>\n";
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        s << "<text x=\"" << left - 8 << "\" y=\"" << top + cell * static_cast<int>(r) + cell / 2
          << "\" text-anchor=\"end\" font-size=\"11\">" << row_labels[r] << "</text>\n";
        for (std::size_t c = 0; c < col_labels.size(); ++c) {
            const int x = left + cell * static_cast<int>(c);
            const int y = top + cell * static_cast<int>(r);
            const auto& v = values[r][c];
            // ASR color scale: -1 .. +3 mapped onto the diverging ramp
            const std::string fill = v ? diverging_color((*v + 1.0) / 4.0) : "#dddddd";
            s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
              << cell << "\" fill=\"" << fill << "\" stroke=\"#666\"/>\n";
            s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
              << "\" text-anchor=\"middle\" font-size=\"12\">" << (v ? num(*v) : "n/a")
              << "</text>\n";
        }
    }
    write_file(path, s.str(), W, H);
}

void write_bars_svg(const std::string& path, const std::string& title,
                    const std::vector<std::string>& labels, const std::vector<double>& values) {
    const int W = 520, H = 320, M = 50;
    const int n = static_cast<int>(labels.size());
    const double bw = static_cast<double>(W - 2 * M) / std::max(1, n);
    std::ostringstream s;
    s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
    s << "<line x1=\"" << M << "\" y1=\"" << H - M << "\" x2=\"" << W - M << "\" y2=\"" << H - M
      << "\" stroke=\"#444\"/>\n";
    for (int i = 0; i < n; ++i) {
        const double v = std::clamp(values[static_cast<std::size_t>(i)], 0.0, 1.0);
        const double bh = v * (H - 2 * M);
        const double x = M + i * bw + bw * 0.15;
        s << "<rect x=\"" << num(x) << "\" y=\"" << num(H - M - bh) << "\" width=\""
          << num(bw * 0.7) << "\" height=\"" << num(bh) << "\" fill=\"#2b6cb0\"/>\n";
        s << "<text x=\"" << num(x + bw * 0.35) << "\" y=\"" << H - M + 16
          << "\" text-anchor=\"middle\" font-size=\"10\">" << labels[static_cast<std::size_t>(i)]
          << "</text>\n";
        s << "<text x=\"" << num(x + bw * 0.35) << "\" y=\"" << num(H - M - bh - 4)
          << "\" text-anchor=\"middle\" font-size=\"10\">" << num(v) << "</text>\n";
    }
    write_file(path, s.str(), W, H);
}

}  // namespace unlab
