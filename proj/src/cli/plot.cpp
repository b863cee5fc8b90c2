#include "darqn/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace darqn::plot {
namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string svg_open(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
         "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
         std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw CsvError("CSV has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& cell = rows.at(row).at(col);
  if (cell == "nan") return std::nan("");
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw CsvError("row " + std::to_string(row + 1) + ", column '" + columns.at(col) +
                   "': not a number: '" + cell + "'");
  }
  return v;
}

CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw CsvError(source + ": line 1: expected a '# <schema> v<N>' header comment");
  }
  t.schema = line.substr(2);
  if (!std::getline(in, line) || line.empty()) {
    throw CsvError(source + ": line 2: expected a column header");
  }
  t.columns = split(line);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    auto cells = split(line);
    if (cells.size() != t.columns.size()) {
      throw CsvError(source + ": row " + std::to_string(row) + ": expected " +
                     std::to_string(t.columns.size()) + " fields, got " +
                     std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path);
  return read_csv(in, path);
}

std::vector<double> moving_average(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out;
  out.reserve(values.size());
  const std::size_t w = std::max<std::size_t>(window, 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= w) sum -= values[i - w];
    out.push_back(sum / static_cast<double>(std::min(i + 1, w)));
  }
  return out;
}

std::string line_chart_svg(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label) {
  const int width = 720, height = 420;
  const double left = 70, right = 20, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  y0 = std::min(y0, 0.0);
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << svg_open(width, height);
  o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(title) << "</text>\n";
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw)
    << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(top + ph + 16)
      << "\" text-anchor=\"middle\">" << tick(fx) << "</text>\n";
    o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(fy) + 4)
      << "\" text-anchor=\"end\">" << tick(fy) << "</text>\n";
    o << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(fy)) << "\" x2=\"" << num(left + pw)
      << "\" y2=\"" << num(py(fy)) << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << height - 10
    << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  o << "<text transform=\"translate(16 " << num(top + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += num(px(s.x[i])) + "," + num(py(s.y[i]));
    }
    if (!points.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
        << points << "\"/>\n";
    }
    const double ly = top + 14 + 16.0 * static_cast<double>(k);
    o << "<line x1=\"" << num(left + 10) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + 30)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(left + 36) << "\" y=\"" << num(ly + 4) << "\">" << escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string attention_strip_svg(const std::vector<double>& weights, const std::string& title) {
  const int cell = 56;
  const int left = 20, top = 40;
  const int width = std::max(260, left * 2 + cell * static_cast<int>(weights.size()));
  const int height = top + cell + 60;
  double peak = 0.0, total = 0.0;
  for (double w : weights) {
    peak = std::max(peak, w);
    total += w;
  }
  std::ostringstream o;
  o << svg_open(width, height);
  o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(title) << "</text>\n";
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double level = peak > 0 ? weights[i] / peak : 0.0;
    const int shade = static_cast<int>(std::lround(255.0 * (1.0 - level)));
    char fill[16];
    std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
    const int x = left + cell * static_cast<int>(i);
    o << "<rect x=\"" << x << "\" y=\"" << top << "\" width=\"" << cell << "\" height=\"" << cell
      << "\" fill=\"" << fill << "\" stroke=\"#333\"/>\n";
    o << "<text x=\"" << x + cell / 2 << "\" y=\"" << top + cell / 2 + 4
      << "\" text-anchor=\"middle\">" << num(weights[i]).substr(0, 4) << "</text>\n";
    o << "<text x=\"" << x + cell / 2 << "\" y=\"" << top + cell + 16
      << "\" text-anchor=\"middle\">t-" << weights.size() - 1 - i << "</text>\n";
  }
  char sum[64];
  std::snprintf(sum, sizeof sum, "sum of weights = %.6f", total);
  o << "<text x=\"" << left << "\" y=\"" << top + cell + 44 << "\">" << sum << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace darqn::plot
