#pragma once

#include <string>
#include <vector>

namespace nrdet {

/// One named curve for line_plot_svg.
struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Numeric CSV with a single header row.
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    /// Index of a header column; throws std::runtime_error if absent.
    int column(const std::string& name) const;
    /// All values of one column, in row order.
    std::vector<double> values(const std::string& name) const;
};

/// Parses a comma-separated file whose first line names the columns and whose
/// remaining lines are numeric. Ragged or non-numeric rows throw
/// std::runtime_error naming the offending line.
CsvTable read_csv(const std::string& path);

/// Means over consecutive non-overlapping windows of `window` values. The
/// trailing window may be shorter and is averaged over its actual length.
/// window < 1 or empty input throws std::invalid_argument.
std::vector<double> windowed_mean(const std::vector<double>& values, int window);

/// Renders one or more curves as a standalone SVG document with axes, ticks
/// and a legend. Throws std::invalid_argument on empty input or a series
/// whose x and y lengths differ.
std::string line_plot_svg(const std::string& title,
                          const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<Series>& series,
                          int width = 720,
                          int height = 440);

/// Divergence curve from a training metrics CSV (needs `iter` and
/// `divergence` columns): the raw per-iteration trace plus its windowed mean.
/// The window is clamped to the number of rows.
std::string divergence_plot_svg(const std::string& metrics_csv, int window = 1000);

/// Sharpening-temperature sweep from a CSV with `temperature` and `map50`
/// columns, one row per finished run.
std::string temperature_plot_svg(const std::string& sweep_csv);

/// Writes `content` to `path`, creating parent directories as needed.
void write_text_file(const std::string& path, const std::string& content);

}  // namespace nrdet
