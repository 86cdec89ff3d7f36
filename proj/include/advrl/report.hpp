#pragma once

#include <string>
#include <vector>

#include "advrl/evaluation.hpp"

namespace advrl {

struct ChartPoint {
  double x = 0.0;
  double y = 0.0;
  double err = 0.0;  // half-length of the whisker
};

struct ChartSeries {
  std::string label;
  std::vector<ChartPoint> points;
};

/// Line chart over ε: log-scaled x axis with x = 0 pinned as the leftmost
/// tick, whiskers at y ± err.
struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ChartSeries> series;
};

/// Deterministic SVG text for `chart`.
std::string render_svg(const LineChart& chart);

struct Figure {
  std::string filename;  // {env}_{algorithm}_{kind}.svg
  LineChart chart;
};

/// One white-box figure per (env, algorithm) with a series per norm, and one
/// transfer figure per (env, algorithm, norm) with a series per transfer
/// mode. Rows of the same cell (several targets or sources) are pooled.
std::vector<Figure> build_figures(const EvalReport& report);

/// Human-readable notes, e.g. when ℓ1 is not the most damaging norm at the
/// largest ε on dqn policies.
std::vector<std::string> report_flags(const EvalReport& report);

}  // namespace advrl
