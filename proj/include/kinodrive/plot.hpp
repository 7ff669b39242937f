#pragma once

#include "kinodrive/train_log.hpp"

#include <string>
#include <vector>

namespace kinodrive::harness {

/// Powers of ten covering [lo, hi] (lo > 0): from 10^floor(log10 lo) to
/// 10^ceil(log10 hi).
std::vector<double> decade_ticks(double lo, double hi);

/// Round 1/2/5 x 10^k ticks covering [lo, hi] with about `target` intervals.
std::vector<double> nice_ticks(double lo, double hi, int target = 5);

/// Compact tick label: "1e3" style for exact powers of ten >= 1e3, else %g.
std::string tick_label(double v, bool decade);

struct Series {
  std::string name;
  std::string y_column;
  std::vector<double> x;
  std::vector<double> y;
};

/// env_steps against mean_cost (gps, cem) or mean_return (sac). Throws when
/// the log has neither column.
Series series_from_log(const TrainLog& log, const std::string& name);

struct PlotOptions {
  bool log_x = false;
  int width = 720;
  int height = 440;
};

/// Line chart, one polyline per series, axes spanning the union of ranges.
std::string render_svg(const std::vector<Series>& series, const PlotOptions& opt = {});

/// Reads each CSV, skips empty ones with a warning on `warn`, writes the
/// SVG. Returns the number of series plotted; throws "no data" if none.
int plot_compare(const std::vector<std::string>& csv_paths, const std::string& out_svg,
                 const PlotOptions& opt, std::ostream& warn);

}  // namespace kinodrive::harness
