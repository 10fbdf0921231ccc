#include "act/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace act {
namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
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

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text) || !out.flush())
    throw std::runtime_error("failed writing " + path.string());
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& path) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error(path.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first)
      t.header = std::move(cells);
    else
      t.rows.push_back(std::move(cells));
    first = false;
  }
  return t;
}

LineChart sweep_chart(const fs::path& csv_path, const std::string& axis_label) {
  const CsvTable t = read_csv(csv_path);
  const auto value = t.column("value", csv_path);
  const auto mean = t.column("dsc_mean", csv_path);
  const auto sd = t.column("dsc_std", csv_path);
  Series m{"mean DSC", {}, {}}, lo{"mean - std", {}, {}}, hi{"mean + std", {}, {}};
  for (const auto& row : t.rows) {
    const double x = std::stod(row.at(value));
    const double y = std::stod(row.at(mean));
    const double s = std::stod(row.at(sd));
    m.x.push_back(x);
    m.y.push_back(y);
    lo.x.push_back(x);
    lo.y.push_back(y - s);
    hi.x.push_back(x);
    hi.y.push_back(y + s);
  }
  return {"Whole-foreground DSC vs " + axis_label, axis_label, "DSC", {m, lo, hi}};
}

}  // namespace

std::string render_svg(const LineChart& chart) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : chart.series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(chart.title) << "</text>\n";
  o << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
    << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(px(xv))
      << "\" y2=\"" << num(kTop + ph + 5) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">"
      << tick_label(xv) << "</text>\n";
    o << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(kLeft)
      << "\" y2=\"" << num(py(yv)) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
      << tick_label(yv) << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 12) << "\" text-anchor=\"middle\">"
    << escape(chart.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(chart.y_label) << "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      o << (i ? " " : "") << num(px(s.x[i])) << "," << num(py(s.y[i]));
    o << "\"/>\n";
    if (s.x.size() <= 20)
      for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
        o << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << num(kLeft + pw + 10) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kLeft + pw + 30)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(kLeft + pw + 35) << "\" y=\"" << num(ly + 4) << "\">" << escape(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<fs::path> emit_plots(const fs::path& dir) {
  std::vector<fs::path> written;
  const fs::path config_path = dir / "config.json";
  const fs::path n_lt_csv = dir / "sweep_n_lt.csv";
  const fs::path pf_csv = dir / "sweep_pair_fraction.csv";

  if (fs::exists(config_path)) {
    const RunConfig config = load_run_config(config_path);
    std::vector<std::string> missing;
    for (int i = 0; i < config.runs; ++i) {
      const auto name = report_file_name(run_seed(config, i));
      if (!fs::exists(dir / name)) missing.push_back(name);
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += " " + m;
      throw std::runtime_error("missing reports in " + dir.string() + ":" + list);
    }
    const RunReport first = load_report(dir / report_file_name(run_seed(config, 0)));

    Series lambda{"lambda", {}, {}};
    for (const auto& it : first.per_iteration) {
      lambda.x.push_back(it.iteration);
      lambda.y.push_back(it.lambda);
    }
    const fs::path lambda_svg = dir / "lambda.svg";
    write_file(lambda_svg, render_svg({"Mixing weight lambda", "iteration I", "lambda", {lambda}}));
    written.push_back(lambda_svg);

    Series both{"both", {}, {}}, one{"only one", {}, {}}, none{"none", {}, {}};
    for (const auto& c : first.checkpoints) {
      if (!c.consensus) continue;
      both.x.push_back(c.iteration);
      both.y.push_back(c.consensus->both);
      one.x.push_back(c.iteration);
      one.y.push_back(c.consensus->only_one);
      none.x.push_back(c.iteration);
      none.y.push_back(c.consensus->none);
    }
    if (!both.x.empty()) {
      const fs::path consensus_svg = dir / "consensus.svg";
      write_file(consensus_svg, render_svg({"Confident test pixels (seed " + std::to_string(first.seed) + ")",
                                            "iteration I", "fraction of pixels", {both, one, none}}));
      written.push_back(consensus_svg);
    }
  }
  if (fs::exists(n_lt_csv)) {
    const fs::path svg = dir / "dsc_vs_n_lt.svg";
    write_file(svg, render_svg(sweep_chart(n_lt_csv, "labeled target subjects N^lt")));
    written.push_back(svg);
  }
  if (fs::exists(pf_csv)) {
    const fs::path svg = dir / "dsc_vs_pair_fraction.svg";
    write_file(svg, render_svg(sweep_chart(pf_csv, "pair fraction")));
    written.push_back(svg);
  }
  if (written.empty() && !fs::exists(config_path))
    throw std::runtime_error("nothing to plot in " + dir.string() +
                             ": expected config.json with report_<seed>.jsonl files, "
                             "sweep_n_lt.csv or sweep_pair_fraction.csv");
  return written;
}

}  // namespace act
