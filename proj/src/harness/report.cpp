#include "reason/harness/report.hpp"
#include "reason/core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace reason::harness {

namespace fs = std::filesystem;

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

class Writer {
public:
  Writer(const fs::path &path, std::vector<fs::path> &written) : os_(path, std::ios::binary) {
    if (!os_)
      throw ValidationError("cannot write " + path.string());
    written.push_back(path);
  }
  std::ostream &os() { return os_; }

private:
  std::ofstream os_;
};

bool is_plotted_axis(const std::string &axis) { return axis == "gamma" || axis == "beta" || axis == "u"; }

} // namespace

std::vector<fs::path> emit_report(const RunReport &report, const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ValidationError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));

  std::vector<fs::path> written;
  bool any_failed = false;
  for (const auto &f : report.folds) {
    if (!f.ok) {
      any_failed = true;
      continue;
    }
    Writer w(dir / ("fold_" + std::to_string(f.fold) + "_metrics.csv"), written);
    w.os() << "metric,value\n";
    for (const auto &[name, value] : fold_metric_values(f))
      w.os() << name << ',' << format_number(value) << '\n';
  }

  if (report.folds_ok() > 0) {
    {
      Writer w(dir / "aggregate_metrics.csv", written);
      w.os() << "metric,mean,std,n\n";
      for (const auto &m : report.aggregate())
        w.os() << m.name << ',' << format_number(m.mean) << ',' << format_number(m.std) << ',' << m.values.size()
               << '\n';
    }
    {
      Writer w(dir / "confusion_matrix.csv", written);
      w.os() << report.confusion_sum().to_csv();
    }
    Writer w(dir / "predictions.jsonl", written);
    for (const auto &f : report.folds) {
      if (!f.ok)
        continue;
      for (const auto &p : f.predictions) {
        auto j = p.to_json();
        j["fold"] = f.fold;
        w.os() << j.dump() << '\n';
      }
    }
  }

  if (any_failed) {
    Writer w(dir / "failures.csv", written);
    w.os() << "fold,error\n";
    for (const auto &f : report.folds)
      if (!f.ok) {
        std::string msg = f.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        w.os() << f.fold << ',' << msg << '\n';
      }
  }

  for (const auto &t : report.ablations) {
    {
      Writer w(dir / ("ablation_" + t.axis + ".csv"), written);
      w.os() << "value,acc,acc_std,precision,precision_std,recall,recall_std,f1,f1_std,delta_params,folds_ok\n";
      for (const auto &r : t.rows) {
        w.os() << r.value << ',' << format_number(r.acc) << ',' << format_number(r.acc_std) << ','
               << format_number(r.precision) << ',' << format_number(r.precision_std) << ','
               << format_number(r.recall) << ',' << format_number(r.recall_std) << ',' << format_number(r.f1) << ','
               << format_number(r.f1_std) << ',';
        if (r.delta_params)
          w.os() << *r.delta_params;
        w.os() << ',' << r.folds_ok << '\n';
      }
    }
    if (is_plotted_axis(t.axis) && !t.rows.empty()) {
      std::vector<double> x;
      std::vector<PlotSeries> s{{"Acc", {}}, {"Pre", {}}, {"Rec", {}}, {"F1", {}}};
      for (const auto &r : t.rows) {
        x.push_back(std::stod(r.value));
        s[0].y.push_back(r.acc);
        s[1].y.push_back(r.precision);
        s[2].y.push_back(r.recall);
        s[3].y.push_back(r.f1);
      }
      const fs::path p = dir / ("ablation_" + t.axis + ".svg");
      write_line_plot_svg(p, "Ablation over " + t.axis, t.axis, x, s);
      written.push_back(p);
    }
  }

  if (!report.comparisons.empty()) {
    Writer w(dir / "comparisons.csv", written);
    w.os() << "a,b,metric,t,p,mean_diff,dof,degenerate,p_lt_0.01,p_lt_0.05\n";
    for (const auto &c : report.comparisons)
      for (const auto &m : c.metrics)
        w.os() << c.label_a << ',' << c.label_b << ',' << m.metric << ',' << format_number(m.test.t) << ','
               << format_number(m.test.p) << ',' << format_number(m.test.mean_diff) << ',' << m.test.dof << ','
               << m.test.degenerate << ',' << m.significant_01 << ',' << m.significant_05 << '\n';
  }

  if (!report.gallery.empty()) {
    const fs::path gdir = dir / "gallery";
    fs::create_directories(gdir, ec);
    if (ec)
      throw ValidationError("cannot create " + gdir.string() + ": " + ec.message());
    for (const auto &g : report.gallery) {
      const fs::path p = gdir / (g.study_id + "_" + std::string(to_string(g.view)) + ".png");
      cls::export_guidance_triptych(g.raw, g.p, g.gamma, p);
      written.push_back(p);
    }
  }

  Writer w(dir / "run_report.json", written);
  w.os() << report.to_json().dump(2) << '\n';
  return written;
}

std::vector<std::vector<std::string>> read_csv(const fs::path &path) {
  std::ifstream is(path);
  if (!is)
    throw ValidationError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    if (line.back() == ',')
      cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

void write_line_plot_svg(const fs::path &path, const std::string &title, const std::string &x_label,
                         const std::vector<double> &x, const std::vector<PlotSeries> &series) {
  constexpr double W = 560, H = 360, L = 60, R = 110, T = 40, B = 50;
  static const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double x0 = x.empty() ? 0 : *std::min_element(x.begin(), x.end());
  double x1 = x.empty() ? 1 : *std::max_element(x.begin(), x.end());
  if (x1 - x0 < 1e-12) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  double y0 = 1, y1 = 0;
  for (const auto &s : series)
    for (double v : s.y) {
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  if (y0 > y1)
    y0 = 0, y1 = 1;
  y0 = std::floor(y0 * 10) / 10;
  y1 = std::ceil(y1 * 10) / 10;
  if (y1 - y0 < 0.1)
    y1 = y0 + 0.1;
  const auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ofstream os(path);
  if (!os)
    throw ValidationError("cannot write " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << format_number(std::round(v * 1000) / 1000)
       << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << py(v) << "\" x2=\"" << W - R << "\" y2=\"" << py(v)
       << "\" stroke=\"#ddd\"/>\n";
  }
  for (double v : x)
    os << "<text x=\"" << px(v) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_number(v)
       << "</text>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char *col = colors[k % 6];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < x.size() && i < series[k].y.size(); ++i)
      os << px(x[i]) << ',' << py(series[k].y[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < x.size() && i < series[k].y.size(); ++i)
      os << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(series[k].y[i]) << "\" r=\"3\" fill=\"" << col
         << "\"/>\n";
    const double ly = T + 10 + 18.0 * k;
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << series[k].name << "</text>\n";
  }
  os << "</svg>\n";
}

} // namespace reason::harness
