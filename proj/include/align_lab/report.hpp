#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "align_lab/errors.hpp"
#include "align_lab/network.hpp"

namespace align_lab {

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
    return v;
}

/// Writes via a sibling temp file and rename, so readers never see a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

/// step,loss,align_1_2,…,align_{d-1}_d,invU_1,…,invU_d,invV_1,…,invV_d
inline std::vector<std::string> trace_columns(std::size_t depth) {
    std::vector<std::string> cols{"step", "loss"};
    for (std::size_t i = 1; i < depth; ++i) cols.push_back("align_" + std::to_string(i) + "_" + std::to_string(i + 1));
    for (std::size_t i = 1; i <= depth; ++i) cols.push_back("invU_" + std::to_string(i));
    for (std::size_t i = 1; i <= depth; ++i) cols.push_back("invV_" + std::to_string(i));
    return cols;
}

inline std::string trace_csv(const TrainTrace& trace) {
    const std::size_t d = trace.depth;
    std::string out;
    const auto cols = trace_columns(d);
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
    out += '\n';
    auto cell = [&](const std::vector<double>& v, std::size_t i) {
        out += ',';
        if (i < v.size()) out += format_double(v[i]);
    };
    for (const auto& row : trace.rows) {
        out += std::to_string(row.step);
        out += ',';
        out += format_double(row.loss);
        for (std::size_t i = 0; i + 1 < d; ++i) cell(row.adjacent, i);
        for (std::size_t i = 0; i < d; ++i) cell(row.inv_u, i);
        for (std::size_t i = 0; i < d; ++i) cell(row.inv_v, i);
        out += '\n';
    }
    return out;
}

inline void emit_csv(const TrainTrace& trace, const std::filesystem::path& path) { atomic_write(path, trace_csv(trace)); }

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Plain comma-separated parsing (no quoting), as produced by this module.
inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            t.rows.push_back(std::move(cells));
        }
    }
    return t;
}

using Metrics = std::vector<std::pair<std::string, std::string>>;

inline std::string metrics_csv(const Metrics& m) {
    std::string out = "key,value\n";
    for (const auto& [k, v] : m) out += k + "," + v + "\n";
    return out;
}

inline void emit_metrics(const Metrics& m, const std::filesystem::path& path) { atomic_write(path, metrics_csv(m)); }

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&apos;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string fixed(double v, int prec = 2) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

inline std::string tick_label(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

} // namespace detail

/// Log scale is used when every value is positive and max/min exceeds 1e3.
inline bool wants_log_scale(const std::vector<Series>& series) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& s : series)
        for (double v : s.y) {
            if (!std::isfinite(v)) continue;
            if (!(v > 0.0)) return false;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    return std::isfinite(lo) && hi / lo > 1e3;
}

/// Self-contained SVG line plot, one polyline per series.
inline std::string svg_plot(const std::string& title, const std::string& x_label, const std::vector<Series>& series) {
    constexpr double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
    const bool logy = wants_log_scale(series);
    auto ty = [&](double v) { return logy ? std::log10(v) : v; };

    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) {
        const double pad = std::max(std::abs(y0) * 1e-3, 1e-12);
        y0 -= pad;
        y1 += pad;
    }
    const double pw = W - L - R, ph = H - T - B;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
       << detail::xml_escape(title) << (logy ? " (log scale)" : "") << "</text>\n";
    os << "<g stroke=\"black\" stroke-width=\"1\">\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph << "\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\"/>\n";
    os << "</g>\n";
    os << "<g font-family=\"sans-serif\" font-size=\"10\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0;
        const double yv = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << detail::fixed(px(xv)) << "\" y=\"" << T + ph + 15 << "\" text-anchor=\"middle\">"
           << detail::tick_label(xv) << "</text>\n";
        os << "<text x=\"" << L - 5 << "\" y=\"" << detail::fixed(py(yv) + 3) << "\" text-anchor=\"end\">"
           << detail::tick_label(logy ? std::pow(10.0, yv) : yv) << "</text>\n";
    }
    os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
       << detail::xml_escape(x_label) << "</text>\n";
    os << "</g>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = palette[s % std::size(palette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
            const double yv = series[s].y[i];
            if (!std::isfinite(yv) || !std::isfinite(series[s].x[i]) || (logy && !(yv > 0.0))) continue;
            os << (first ? "" : " ") << detail::fixed(px(series[s].x[i])) << ',' << detail::fixed(py(ty(yv)));
            first = false;
        }
        os << "\"/>\n";
        const double ly = T + 14.0 * static_cast<double>(s) + 8;
        os << "<line x1=\"" << L + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 30 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << L + pw + 35 << "\" y=\"" << ly + 4
           << "\" font-family=\"sans-serif\" font-size=\"10\">" << detail::xml_escape(series[s].name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline void emit_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series,
                     const std::filesystem::path& path) {
    atomic_write(path, svg_plot(title, x_label, series));
}

} // namespace align_lab
