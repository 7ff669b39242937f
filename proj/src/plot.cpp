#include "kinodrive/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace kinodrive::harness {

std::vector<double> decade_ticks(double lo, double hi) {
  if (!(lo > 0.0) || !(hi >= lo)) throw Error("invalid log-axis range");
  const int a = static_cast<int>(std::floor(std::log10(lo) + 1e-12));
  const int b = static_cast<int>(std::ceil(std::log10(hi) - 1e-12));
  std::vector<double> out;
  for (int e = a; e <= std::max(a, b); ++e) out.push_back(std::pow(10.0, e));
  if (out.size() == 1) out.push_back(std::pow(10.0, a + 1));
  return out;
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
  if (!(hi >= lo)) throw Error("invalid axis range");
  if (hi == lo) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  const double step = (r <= 1.0 ? 1.0 : r <= 2.0 ? 2.0 : r <= 5.0 ? 5.0 : 10.0) * mag;
  const double first = std::floor(lo / step + 1e-9) * step;
  const double last = std::ceil(hi / step - 1e-9) * step;
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double v = first + i * step;
    if (v > last + step * 1e-6) break;
    out.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  }
  return out;
}

std::string tick_label(double v, bool decade) {
  char buf[32];
  if (decade) {
    const int e = static_cast<int>(std::lround(std::log10(v)));
    if (e >= 3 || e <= -3) {
      std::snprintf(buf, sizeof buf, "1e%d", e);
      return buf;
    }
  }
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

Series series_from_log(const TrainLog& log, const std::string& name) {
  Series s;
  s.name = name;
  if (log.column("mean_cost") >= 0) s.y_column = "mean_cost";
  else if (log.column("mean_return") >= 0) s.y_column = "mean_return";
  else throw Error("log has no mean_cost or mean_return column: " + name);
  s.x = log.values("env_steps");
  s.y = log.values(s.y_column);
  return s;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

}  // namespace

std::string render_svg(const std::vector<Series>& series, const PlotOptions& opt) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!opt.log_x || x > 0.0);
  };
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (!std::isfinite(xlo)) throw Error("no data");

  const std::vector<double> xt = opt.log_x ? decade_ticks(xlo, xhi) : nice_ticks(xlo, xhi);
  const std::vector<double> yt = nice_ticks(ylo, yhi);
  const double x0 = xt.front(), x1 = xt.back(), y0 = yt.front(), y1 = yt.back();

  const double left = 80, right = 180, top = 20, bottom = 50;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  auto px = [&](double x) {
    const double u = opt.log_x ? (std::log10(x) - std::log10(x0)) / (std::log10(x1) - std::log10(x0))
                               : (x - x0) / (x1 - x0);
    return left + u * pw;
  };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::vector<std::string> ycols;
  for (const Series& s : series)
    if (std::find(ycols.begin(), ycols.end(), s.y_column) == ycols.end()) ycols.push_back(s.y_column);
  std::string ylabel;
  for (std::size_t i = 0; i < ycols.size(); ++i) ylabel += (i ? " / " : "") + ycols[i];

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" viewBox=\"0 0 " << opt.width << ' ' << opt.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g class=\"grid\" stroke=\"#dddddd\">\n";
  for (double t : xt)
    os << "<line x1=\"" << num(px(t)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(px(t)) << "\" y2=\""
       << num(top + ph) << "\"/>\n";
  for (double t : yt)
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(t)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
       << num(py(t)) << "\"/>\n";
  os << "</g>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\""
     << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<g class=\"xticks\" text-anchor=\"middle\">\n";
  for (double t : xt)
    os << "<text x=\"" << num(px(t)) << "\" y=\"" << num(top + ph + 16) << "\">" << tick_label(t, opt.log_x)
       << "</text>\n";
  os << "</g>\n<g class=\"yticks\" text-anchor=\"end\">\n";
  for (double t : yt)
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(t) + 4) << "\">" << tick_label(t, false)
       << "</text>\n";
  os << "</g>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(opt.height - 10.0)
     << "\" text-anchor=\"middle\">env_steps</text>\n";
  os << "<text transform=\"translate(16 " << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(ylabel) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      os << (first ? "" : " ") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(left + pw + 32)
       << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(left + pw + 38) << "\" y=\"" << num(ly) << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

int plot_compare(const std::vector<std::string>& csv_paths, const std::string& out_svg,
                 const PlotOptions& opt, std::ostream& warn) {
  if (csv_paths.empty()) throw Error("no input files");
  std::vector<Series> series;
  for (const std::string& path : csv_paths) {
    const TrainLog log = read_train_log_file(path);
    const std::string name = std::filesystem::path(path).stem().string();
    if (log.empty()) {
      warn << "warning: skipping empty log " << path << '\n';
      continue;
    }
    series.push_back(series_from_log(log, name));
  }
  if (series.empty()) throw Error("no data");
  const std::string svg = render_svg(series, opt);
  std::ofstream f(out_svg, std::ios::binary);
  if (!f) throw Error("cannot write: " + out_svg);
  f << svg;
  return static_cast<int>(series.size());
}

}  // namespace kinodrive::harness
