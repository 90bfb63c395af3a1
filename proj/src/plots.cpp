#include "nrdet/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace nrdet {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

/// Tick spacing rounded to 1/2/5 times a power of ten.
double nice_step(double range, int target_ticks) {
    const double raw = range / std::max(target_ticks, 1);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double norm = raw / mag;
    double mult = 10.0;
    if (norm < 1.5) {
        mult = 1.0;
    } else if (norm < 3.5) {
        mult = 2.0;
    } else if (norm < 7.5) {
        mult = 5.0;
    }
    return mult * mag;
}

std::vector<double> ticks_for(double lo, double hi) {
    const double step = nice_step(hi - lo, 5);
    std::vector<double> out;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) {
        out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
    }
    return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
constexpr int kPaletteSize = 6;

}  // namespace

int CsvTable::column(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(columns.size()); ++i) {
        if (columns[i] == name) {
            return i;
        }
    }
    throw std::runtime_error("csv has no column named '" + name + "'");
}

std::vector<double> CsvTable::values(const std::string& name) const {
    const int c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const std::vector<double>& r : rows) {
        out.push_back(r[c]);
    }
    return out;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open csv file: " + path);
    }
    CsvTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            fields.push_back(field);
        }
        if (!line.empty() && line.back() == ',') {
            fields.push_back("");
        }
        if (line_no == 1) {
            table.columns = fields;
            continue;
        }
        if (fields.size() != table.columns.size()) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                     ": expected " + std::to_string(table.columns.size()) +
                                     " fields, got " + std::to_string(fields.size()));
        }
        std::vector<double> row(fields.size());
        for (size_t i = 0; i < fields.size(); ++i) {
            try {
                size_t used = 0;
                row[i] = std::stod(fields[i], &used);
                if (used != fields[i].size()) {
                    throw std::invalid_argument(fields[i]);
                }
            } catch (const std::exception&) {
                throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                         ": non-numeric field '" + fields[i] + "'");
            }
        }
        table.rows.push_back(std::move(row));
    }
    if (table.columns.empty()) {
        throw std::runtime_error("csv file has no header row: " + path);
    }
    return table;
}

std::vector<double> windowed_mean(const std::vector<double>& values, int window) {
    if (window < 1) {
        throw std::invalid_argument("window must be >= 1");
    }
    if (values.empty()) {
        throw std::invalid_argument("windowed_mean needs at least one value");
    }
    std::vector<double> out;
    for (size_t start = 0; start < values.size(); start += window) {
        const size_t end = std::min(values.size(), start + window);
        double sum = 0.0;
        for (size_t i = start; i < end; ++i) {
            sum += values[i];
        }
        out.push_back(sum / static_cast<double>(end - start));
    }
    return out;
}

std::string line_plot_svg(const std::string& title,
                          const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<Series>& series,
                          int width,
                          int height) {
    if (series.empty()) {
        throw std::invalid_argument("line_plot_svg needs at least one series");
    }
    double xmin = std::numeric_limits<double>::infinity();
    double xmax = -xmin;
    double ymin = xmin;
    double ymax = -xmin;
    for (const Series& s : series) {
        if (s.x.size() != s.y.size()) {
            throw std::invalid_argument("series '" + s.label + "' has mismatched x/y lengths");
        }
        if (s.x.empty()) {
            throw std::invalid_argument("series '" + s.label + "' is empty");
        }
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax - xmin < 1e-12) {
        const double pad = std::max(1.0, std::abs(xmin)) * 0.5;
        xmin -= pad;
        xmax += pad;
    }
    if (ymax - ymin < 1e-12) {
        const double pad = std::max(1e-3, std::abs(ymin)) * 0.5;
        ymin -= pad;
        ymax += pad;
    } else {
        const double pad = (ymax - ymin) * 0.06;
        ymin -= pad;
        ymax += pad;
    }

    const double left = 64.0;
    const double right = 16.0;
    const double top = 34.0;
    const double bottom = 50.0;
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    const auto py = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2.0 << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\""
        << " text-anchor=\"middle\">" << title << "</text>\n";

    for (double t : ticks_for(xmin, xmax)) {
        const double x = px(t);
        svg << "<line x1=\"" << fmt("%.2f", x) << "\" y1=\"" << fmt("%.2f", top) << "\" x2=\""
            << fmt("%.2f", x) << "\" y2=\"" << fmt("%.2f", top + ph)
            << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << fmt("%.2f", x) << "\" y=\"" << fmt("%.2f", top + ph + 16)
            << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">"
            << fmt("%g", t) << "</text>\n";
    }
    for (double t : ticks_for(ymin, ymax)) {
        const double y = py(t);
        svg << "<line x1=\"" << fmt("%.2f", left) << "\" y1=\"" << fmt("%.2f", y) << "\" x2=\""
            << fmt("%.2f", left + pw) << "\" y2=\"" << fmt("%.2f", y)
            << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << fmt("%.2f", left - 6) << "\" y=\"" << fmt("%.2f", y)
            << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\""
            << " dy=\".32em\">" << fmt("%g", t) << "</text>\n";
    }
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << left + pw / 2.0 << "\" y=\"" << height - 12
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << x_label
        << "</text>\n";
    svg << "<text x=\"16\" y=\"" << top + ph / 2.0
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\""
        << " transform=\"rotate(-90 16 " << top + ph / 2.0 << ")\">" << y_label << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = kPalette[si % kPaletteSize];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (i > 0) {
                svg << " ";
            }
            svg << fmt("%.2f", px(s.x[i])) << "," << fmt("%.2f", py(s.y[i]));
        }
        svg << "\"/>\n";
        if (s.x.size() <= 32) {
            for (size_t i = 0; i < s.x.size(); ++i) {
                svg << "<circle cx=\"" << fmt("%.2f", px(s.x[i])) << "\" cy=\""
                    << fmt("%.2f", py(s.y[i])) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
            }
        }
    }

    if (series.size() > 1) {
        double ly = top + 14;
        for (size_t si = 0; si < series.size(); ++si) {
            const char* color = kPalette[si % kPaletteSize];
            const double lx = left + pw - 150;
            svg << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 22
                << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
                << "\" stroke-width=\"2\"/>\n";
            svg << "<text x=\"" << lx + 28 << "\" y=\"" << ly
                << "\" font-family=\"sans-serif\" font-size=\"10\">" << series[si].label
                << "</text>\n";
            ly += 16;
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string divergence_plot_svg(const std::string& metrics_csv, int window) {
    const CsvTable table = read_csv(metrics_csv);
    const std::vector<double> iters = table.values("iter");
    const std::vector<double> div = table.values("divergence");
    if (div.empty()) {
        throw std::runtime_error("metrics csv has no data rows: " + metrics_csv);
    }
    const int w = std::min<int>(window, static_cast<int>(div.size()));
    const std::vector<double> means = windowed_mean(div, w);
    Series raw{"per-iteration", iters, div};
    Series windowed{"window mean (" + std::to_string(w) + ")", {}, means};
    for (size_t k = 0; k < means.size(); ++k) {
        const size_t end = std::min(div.size(), (k + 1) * static_cast<size_t>(w)) - 1;
        windowed.x.push_back(iters[end]);
    }
    return line_plot_svg("Head divergence", "iteration", "divergence", {raw, windowed});
}

std::string temperature_plot_svg(const std::string& sweep_csv) {
    const CsvTable table = read_csv(sweep_csv);
    const int tc = table.column("temperature");
    const int mc = table.column("map50");
    if (table.rows.empty()) {
        throw std::runtime_error("sweep csv has no data rows: " + sweep_csv);
    }
    std::vector<std::vector<double>> rows = table.rows;
    std::stable_sort(rows.begin(), rows.end(),
                     [&](const std::vector<double>& a, const std::vector<double>& b) {
                         return a[tc] < b[tc];
                     });
    Series s{"mAP@0.5", {}, {}};
    for (const std::vector<double>& r : rows) {
        s.x.push_back(r[tc]);
        s.y.push_back(r[mc]);
    }
    return line_plot_svg("Sharpening temperature sweep", "temperature", "mAP@0.5", {s});
}

void write_text_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open file for writing: " + path);
    }
    out << content;
    if (!out) {
        throw std::runtime_error("failed writing file: " + path);
    }
}

}  // namespace nrdet
