#include "mhal/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mhal {

namespace {

namespace fs = std::filesystem;

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string tick(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

void header(std::ostringstream& os, const std::string& title, const std::string& x_label, const std::string& y_label) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << num(kW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n"
     << "<text x=\"" << num((kLeft + kW - kRight) / 2) << "\" y=\"" << num(kH - 10)
     << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << num(kH / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << num(kH / 2) << ")\">" << escape(y_label) << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, bool x_ticks, bool log_y) {
  os << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(kW - kLeft - kRight)
     << "\" height=\"" << num(kH - kTop - kBottom) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(f.py(y) + 4) << "\" text-anchor=\"end\">"
       << tick(log_y ? std::pow(10.0, y) : y) << "</text>\n";
    if (x_ticks) {
      const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
      os << "<text x=\"" << num(f.px(x)) << "\" y=\"" << num(kH - kBottom + 16) << "\" text-anchor=\"middle\">"
         << tick(x) << "</text>\n";
    }
  }
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

void write_file(const fs::path& p, const std::string& text, std::vector<std::string>& written) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  written.push_back(p.string());
}

void plot_run(const fs::path& run, const fs::path& out, const std::string& prefix, std::vector<std::string>& written) {
  const auto rows = read_csv(run / "metrics.csv");
  if (rows.size() < 2) return;
  const auto& head = rows.front();
  auto column = [&](const std::string& name) {
    const auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) throw std::runtime_error("metrics.csv lacks column " + name);
    const auto k = static_cast<std::size_t>(it - head.begin());
    std::vector<double> v;
    for (std::size_t r = 1; r < rows.size(); ++r) v.push_back(std::stod(rows[r].at(k)));
    return v;
  };
  const auto epoch = column("epoch");
  LineChart losses{"Training losses", "epoch", "loss", {}, false};
  for (const char* name : {"L_seg", "L_trans", "L_con"}) {
    const auto y = column(name);
    if (std::any_of(y.begin(), y.end(), [](double v) { return v != 0; })) losses.series.push_back({name, epoch, y});
  }
  write_file(out / (prefix + "losses.svg"), line_chart_svg(losses), written);
  LineChart sched{"Schedules", "epoch", "value", {}, false};
  sched.series.push_back({"lambda", epoch, column("lambda_con")});
  auto lr = column("lr");
  for (auto& v : lr) v *= 1000.0;
  sched.series.push_back({"lr x 1000", epoch, lr});
  write_file(out / (prefix + "schedules.svg"), line_chart_svg(sched), written);
  LineChart val{"Validation Dice", "epoch", "mean Dice", {{"val_dice", epoch, column("val_dice")}}, false};
  write_file(out / (prefix + "val_dice.svg"), line_chart_svg(val), written);
}

}  // namespace

std::string line_chart_svg(const LineChart& chart) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto ty = [&](double v) { return chart.log_y ? std::log10(std::max(v, 1e-12)) : v; };
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      if (std::isfinite(s.y[i])) {
        y0 = std::min(y0, ty(s.y[i]));
        y1 = std::max(y1, ty(s.y[i]));
      }
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!(x1 > x0)) x1 = x0 + 1;
  pad_range(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::ostringstream os;
  header(os, chart.title, chart.x_label, chart.y_label);
  axes(os, f, true, chart.log_y);
  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* color = kColors[k % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << num(f.px(s.x[i])) << "," << num(f.py(ty(s.y[i]))) << " ";
    }
    os << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << num(kW - kRight + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(kW - kRight + 30)
       << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << num(kW - kRight + 36) << "\" y=\"" << num(ly) << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string box_plot_svg(const std::string& title, const std::string& y_label, const std::vector<BoxGroup>& groups) {
  double y0 = 1e300, y1 = -1e300;
  for (const auto& g : groups)
    for (double v : g.values) y0 = std::min(y0, v), y1 = std::max(y1, v);
  if (y0 > y1) y0 = 0, y1 = 1;
  pad_range(y0, y1);
  const Frame f{0, static_cast<double>(std::max<std::size_t>(groups.size(), 1)), y0, y1};
  std::ostringstream os;
  header(os, title, "", y_label);
  axes(os, f, false, false);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& g = groups[k];
    const double cx = f.px(static_cast<double>(k) + 0.5);
    const double half = 0.3 * (f.px(1) - f.px(0));
    os << "<text x=\"" << num(cx) << "\" y=\"" << num(kH - kBottom + 16) << "\" text-anchor=\"middle\">"
       << escape(g.label) << "</text>\n";
    if (g.values.empty()) continue;
    const double q1 = quantile(g.values, 0.25), q2 = quantile(g.values, 0.5), q3 = quantile(g.values, 0.75);
    const double lo = *std::min_element(g.values.begin(), g.values.end());
    const double hi = *std::max_element(g.values.begin(), g.values.end());
    const char* color = kColors[k % std::size(kColors)];
    os << "<line x1=\"" << num(cx) << "\" y1=\"" << num(f.py(lo)) << "\" x2=\"" << num(cx) << "\" y2=\""
       << num(f.py(hi)) << "\" stroke=\"black\"/>\n"
       << "<rect x=\"" << num(cx - half) << "\" y=\"" << num(f.py(q3)) << "\" width=\"" << num(2 * half)
       << "\" height=\"" << num(std::max(f.py(q1) - f.py(q3), 0.5)) << "\" fill=\"" << color
       << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\"/>\n"
       << "<line x1=\"" << num(cx - half) << "\" y1=\"" << num(f.py(q2)) << "\" x2=\"" << num(cx + half)
       << "\" y2=\"" << num(f.py(q2)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double v : g.values)
      os << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(f.py(v)) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> write_plots(const fs::path& run_dir, const fs::path& out_dir) {
  if (!fs::is_directory(run_dir)) throw std::runtime_error("not a directory: " + run_dir.string());
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  if (fs::exists(run_dir / "metrics.csv")) {
    plot_run(run_dir, out_dir, "", written);
    return written;
  }
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(run_dir))
    if (e.is_directory() && fs::exists(e.path() / "metrics.csv")) runs.push_back(e.path());
  std::sort(runs.begin(), runs.end());
  if (runs.empty()) throw std::runtime_error("no runs (metrics.csv) under " + run_dir.string());
  std::map<std::string, std::vector<double>> by_mode;
  std::vector<std::string> order;
  for (const auto& r : runs) {
    plot_run(r, out_dir, r.filename().string() + "_", written);
    if (!fs::exists(r / "report.json") || !fs::exists(r / "config.json")) continue;
    std::ifstream cin(r / "config.json"), rin(r / "report.json");
    const auto cfg = nlohmann::json::parse(cin);
    const auto rep = nlohmann::json::parse(rin);
    const auto mode = cfg.at("train").at("mode").get<std::string>();
    if (!by_mode.count(mode)) order.push_back(mode);
    by_mode[mode].push_back(100.0 * rep.at("dice_mean").get<double>());
  }
  if (!by_mode.empty()) {
    const std::vector<std::string> canonical{"no_adapt", "mt", "meta_seg", "meta_hal", "full", "supervised_only"};
    std::vector<BoxGroup> groups;
    for (const auto& m : canonical)
      if (by_mode.count(m)) groups.push_back({m, by_mode[m]});
    for (const auto& m : order)
      if (std::find(canonical.begin(), canonical.end(), m) == canonical.end()) groups.push_back({m, by_mode[m]});
    write_file(out_dir / "dice_by_arm.svg", box_plot_svg("Mean Dice by arm", "Dice (%)", groups), written);
  }
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace mhal
