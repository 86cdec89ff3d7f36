#include "advrl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <tuple>

#include "advrl/numfmt.hpp"

namespace advrl {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;
// Share of the plot width kept between the pinned zero tick and the
// smallest positive ε.
constexpr double kZeroGap = 0.12;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

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

// Maps ε to [0, 1] along the x axis.
class XScale {
 public:
  explicit XScale(const std::set<double>& xs) {
    for (double x : xs) {
      if (x > 0.0) positive_.push_back(x);
      else has_zero_ = true;
    }
    if (!positive_.empty()) {
      lo_ = std::log10(positive_.front());
      hi_ = std::log10(positive_.back());
    }
  }

  double operator()(double x) const {
    if (x <= 0.0) return 0.0;
    const double start = has_zero_ ? kZeroGap : 0.0;
    if (hi_ == lo_) return has_zero_ ? (1.0 + start) / 2.0 : 0.5;
    return start + (1.0 - start) * (std::log10(x) - lo_) / (hi_ - lo_);
  }

 private:
  std::vector<double> positive_;
  bool has_zero_ = false;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

}  // namespace

std::string render_svg(const LineChart& chart) {
  std::set<double> xs;
  double ymin = 0.0, ymax = 0.0;
  bool any = false;
  for (const auto& s : chart.series) {
    for (const auto& p : s.points) {
      xs.insert(p.x);
      const double lo = p.y - p.err, hi = p.y + p.err;
      ymin = any ? std::min(ymin, lo) : lo;
      ymax = any ? std::max(ymax, hi) : hi;
      any = true;
    }
  }
  if (!any || ymax - ymin < 1e-9) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const XScale xscale(xs);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + pw * xscale(x); };
  auto py = [&](double y) { return kTop + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
       "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       escape(chart.title) + "</text>\n";
  o += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";

  // y ticks
  for (int i = 0; i <= 5; ++i) {
    const double v = ymin + (ymax - ymin) * i / 5.0;
    const double y = py(v);
    o += "<line x1=\"" + num(kLeft - 4) + "\" y1=\"" + num(y) + "\" x2=\"" + num(kLeft) + "\" y2=\"" + num(y) +
         "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
  }
  // x ticks, one per distinct ε
  for (double x : xs) {
    const double X = px(x);
    o += "<line x1=\"" + num(X) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(X) + "\" y2=\"" +
         num(kTop + ph + 4) + "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + num(X) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"end\" transform=\"rotate(-35 " +
         num(X) + " " + num(kTop + ph + 16) + ")\">" + escape(format_double(x)) + "</text>\n";
  }
  o += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 8) + "\" text-anchor=\"middle\">" +
       escape(chart.x_label) + "</text>\n";
  o += "<text x=\"16\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num(kTop + ph / 2) + ")\">" + escape(chart.y_label) + "</text>\n";

  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const auto& s = chart.series[si];
    const std::string color = kPalette[si % std::size(kPalette)];
    std::vector<ChartPoint> pts = s.points;
    std::stable_sort(pts.begin(), pts.end(), [](const ChartPoint& a, const ChartPoint& b) { return a.x < b.x; });
    o += "<g stroke=\"" + color + "\" fill=\"" + color + "\">\n";
    if (pts.size() > 1) {
      o += "<polyline fill=\"none\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i) o += ' ';
        o += num(px(pts[i].x)) + "," + num(py(pts[i].y));
      }
      o += "\"/>\n";
    }
    for (const auto& p : pts) {
      const double X = px(p.x);
      o += "<line x1=\"" + num(X) + "\" y1=\"" + num(py(p.y - p.err)) + "\" x2=\"" + num(X) + "\" y2=\"" +
           num(py(p.y + p.err)) + "\"/>\n";
      o += "<line x1=\"" + num(X - 3) + "\" y1=\"" + num(py(p.y - p.err)) + "\" x2=\"" + num(X + 3) + "\" y2=\"" +
           num(py(p.y - p.err)) + "\"/>\n";
      o += "<line x1=\"" + num(X - 3) + "\" y1=\"" + num(py(p.y + p.err)) + "\" x2=\"" + num(X + 3) + "\" y2=\"" +
           num(py(p.y + p.err)) + "\"/>\n";
      o += "<circle cx=\"" + num(X) + "\" cy=\"" + num(py(p.y)) + "\" r=\"2.5\"/>\n";
    }
    o += "</g>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(si);
    o += "<line x1=\"" + num(kLeft + pw + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(kLeft + pw + 32) +
         "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + num(kLeft + pw + 38) + "\" y=\"" + num(ly + 4) + "\">" + escape(s.label) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

namespace {

using CellKey = std::tuple<std::string, std::string, Norm, TransferMode>;  // env, algorithm, norm, mode

std::string mode_label(TransferMode m) {
  switch (m) {
    case TransferMode::none: return "white-box";
    case TransferMode::policy: return "cross-policy";
    case TransferMode::algorithm: return "cross-algorithm";
  }
  return "";
}

ChartSeries pooled_series(const std::string& label, const std::map<double, std::vector<ReportRow>>& by_eps) {
  ChartSeries s{label, {}};
  for (const auto& [eps, rows] : by_eps) {
    const ReportRow pooled = pool_rows(rows);
    s.points.push_back({eps, pooled.mean_return, pooled.std_return});
  }
  return s;
}

}  // namespace

std::vector<Figure> build_figures(const EvalReport& report) {
  std::map<CellKey, std::map<double, std::vector<ReportRow>>> cells;
  for (const auto& r : report.rows) cells[{r.env, r.algorithm, r.norm, r.transfer_mode}][r.epsilon].push_back(r);

  std::set<std::pair<std::string, std::string>> groups;
  for (const auto& [key, _] : cells) groups.insert({std::get<0>(key), std::get<1>(key)});

  const Norm norms[] = {Norm::linf, Norm::l2, Norm::l1};
  const TransferMode modes[] = {TransferMode::none, TransferMode::policy, TransferMode::algorithm};
  std::vector<Figure> figures;
  for (const auto& [env, algo] : groups) {
    LineChart wb{env + " / " + algo + ": white-box", "epsilon", "mean return", {}};
    for (Norm n : norms) {
      auto it = cells.find({env, algo, n, TransferMode::none});
      if (it != cells.end()) wb.series.push_back(pooled_series(to_string(n), it->second));
    }
    if (!wb.series.empty()) figures.push_back({env + "_" + algo + "_whitebox.svg", std::move(wb)});

    for (Norm n : norms) {
      const bool has_transfer = cells.count({env, algo, n, TransferMode::policy}) ||
                                cells.count({env, algo, n, TransferMode::algorithm});
      if (!has_transfer) continue;
      LineChart tr{env + " / " + algo + ": transfer, " + to_string(n), "epsilon", "mean return", {}};
      for (TransferMode m : modes) {
        auto it = cells.find({env, algo, n, m});
        if (it != cells.end()) tr.series.push_back(pooled_series(mode_label(m), it->second));
      }
      figures.push_back({env + "_" + algo + "_transfer_" + to_string(n) + ".svg", std::move(tr)});
    }
  }
  return figures;
}

std::vector<std::string> report_flags(const EvalReport& report) {
  // env -> norm -> rows at that env's largest ε (white-box dqn only)
  std::map<std::string, double> largest;
  for (const auto& r : report.rows) {
    if (r.algorithm != "dqn" || r.transfer_mode != TransferMode::none) continue;
    auto [it, fresh] = largest.emplace(r.env, r.epsilon);
    if (!fresh) it->second = std::max(it->second, r.epsilon);
  }
  std::vector<std::string> flags;
  for (const auto& [env, eps] : largest) {
    std::map<Norm, std::vector<ReportRow>> by_norm;
    for (const auto& r : report.rows) {
      if (r.env == env && r.algorithm == "dqn" && r.transfer_mode == TransferMode::none && r.epsilon == eps) {
        by_norm[r.norm].push_back(r);
      }
    }
    if (!by_norm.count(Norm::l1) || by_norm.size() < 2) continue;
    std::map<Norm, double> mean;
    for (const auto& [n, rows] : by_norm) mean[n] = pool_rows(rows).mean_return;
    bool l1_lowest = true;
    for (const auto& [n, m] : mean) {
      if (n != Norm::l1 && m < mean[Norm::l1]) l1_lowest = false;
    }
    if (!l1_lowest) {
      std::string msg = env + " dqn: l1 is not the most damaging norm at epsilon " + format_double(eps) + " (";
      bool first = true;
      for (const auto& [n, m] : mean) {
        msg += (first ? "" : ", ") + to_string(n) + " " + format_double(m);
        first = false;
      }
      flags.push_back(msg + ")");
    }
  }
  return flags;
}

}  // namespace advrl
