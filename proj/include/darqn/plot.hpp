#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "darqn/tensor.hpp"

/// CSV reading and self-contained SVG rendering for run outputs.
namespace darqn::plot {

/// Raised for malformed CSV input; the message names the file and row.
class CsvError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A CSV file whose first line is a "# <schema> v<N>" comment and whose
/// second line names the columns.
struct CsvTable {
  std::string schema;  // comment text without the leading "# "
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  double number(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(std::istream& in, const std::string& source);
CsvTable read_csv_file(const std::string& path);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Trailing moving average over at most `window` points.
std::vector<double> moving_average(const std::vector<double>& values, std::size_t window);

std::string line_chart_svg(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label);

/// One cell per weight, shaded by magnitude and labelled; the total is
/// printed under the strip.
std::string attention_strip_svg(const std::vector<double>& weights, const std::string& title);

}  // namespace darqn::plot
