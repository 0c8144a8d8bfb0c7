#include "datacl/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "datacl/runner.hpp"

namespace datacl {

namespace {

namespace fs = std::filesystem;

struct RunRecord {
  std::string name;
  std::string method;
  std::uint64_t order = 0;
  std::uint64_t seed = 0;
  double fp_value = 0.0;
  double ap_value = 0.0;
  double forget_value = 0.0;
  AccuracyMatrix acc;
};

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
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

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string accuracy_chart_svg(const AccuracyMatrix& acc, const std::string& title) {
  const double width = 640, height = 420;
  const double left = 56, right = 150, top = 40, bottom = 46;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const std::size_t n = acc.n();

  const auto x_of = [&](std::size_t m) {
    return n <= 1 ? left + plot_w / 2
                  : left + plot_w * static_cast<double>(m) / static_cast<double>(n - 1);
  };
  const auto y_of = [&](double v) { return top + plot_h * (1.0 - v / 100.0); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";

  // Axes and gridlines.
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = y_of(tick);
    svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w << "\" y2=\""
        << y << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick
        << "</text>\n";
  }
  for (std::size_t m = 0; m < n; ++m) {
    svg << "<text x=\"" << x_of(m) << "\" y=\"" << top + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << (m + 1) << "</text>\n";
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << "tasks trained</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\" stroke-width=\"1\"/>\n";

  // One polyline per task, starting at the column where it was first scored.
  for (std::size_t q = 0; q < n; ++q) {
    std::ostringstream points;
    for (std::size_t m = 0; m < n; ++m) {
      if (!acc.filled(q, m)) continue;
      points << x_of(m) << "," << y_of(acc.at(q, m)) << " ";
    }
    const char* color = kPalette[q % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
        << points.str() << "\"/>\n";
    svg << "<text x=\"" << left + plot_w + 10 << "\" y=\"" << top + 14 + 16 * q
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">task "
        << (q + 1) << "</text>\n";
  }

  // FP overlay with the Forget value.
  bool final_column = true;
  for (std::size_t q = 0; q < n; ++q) final_column = final_column && acc.filled(q, n - 1);
  if (final_column) {
    const double fp_v = fp(acc);
    const double fg_v = forget(acc);
    const double y = y_of(fp_v);
    svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w << "\" y2=\""
        << y << "\" stroke=\"#333333\" stroke-width=\"1\" stroke-dasharray=\"6,4\"/>\n";
    svg << "<text x=\"" << left + plot_w + 10 << "\" y=\"" << top + 14 + 16 * n + 8
        << "\" font-family=\"sans-serif\" font-size=\"11\">FP " << fmt1(fp_v) << "</text>\n";
    svg << "<text x=\"" << left + plot_w + 10 << "\" y=\"" << top + 14 + 16 * n + 24
        << "\" font-family=\"sans-serif\" font-size=\"11\">Forget " << fmt1(fg_v)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::size_t write_report(const std::string& results_dir) {
  std::vector<RunRecord> runs;
  std::vector<fs::path> dirs;
  if (fs::is_regular_file(fs::path(results_dir) / "metrics.json")) {
    dirs.push_back(results_dir);
  } else if (fs::is_directory(results_dir)) {
    for (const auto& entry : fs::directory_iterator(results_dir)) {
      if (entry.is_directory() && fs::is_regular_file(entry.path() / "metrics.json")) {
        dirs.push_back(entry.path());
      }
    }
  }
  std::sort(dirs.begin(), dirs.end());

  for (const fs::path& dir : dirs) {
    std::ifstream in(dir / "metrics.json");
    nlohmann::json j;
    in >> j;
    RunRecord rec;
    rec.name = dir.filename().string();
    rec.method = j.at("method").get<std::string>();
    rec.order = j.at("order").get<std::uint64_t>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    rec.fp_value = j.at("fp").get<double>();
    rec.ap_value = j.at("ap").get<double>();
    rec.forget_value = j.at("forget").get<double>();
    rec.acc = read_accuracy_csv((dir / "accuracy_matrix.csv").string());
    runs.push_back(std::move(rec));
  }
  if (runs.empty()) return 0;

  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.order != b.order) return a.order < b.order;
    return a.seed < b.seed;
  });

  const fs::path base(results_dir);
  {
    std::ofstream csv(base / "summary.csv", std::ios::trunc);
    csv << "run,method,order,seed,fp,ap,forget\n";
    for (const RunRecord& r : runs) {
      csv << r.name << "," << r.method << "," << r.order << "," << r.seed << ","
          << fmt1(r.fp_value) << "," << fmt1(r.ap_value) << "," << fmt1(r.forget_value) << "\n";
    }
  }
  {
    std::ofstream txt(base / "summary.txt", std::ios::trunc);
    char line[256];
    std::snprintf(line, sizeof(line), "%-28s %-12s %6s %6s %8s %8s %8s\n", "run", "method",
                  "order", "seed", "FP", "AP", "Forget");
    txt << line;
    for (const RunRecord& r : runs) {
      std::snprintf(line, sizeof(line), "%-28s %-12s %6llu %6llu %8.2f %8.2f %8.2f\n",
                    r.name.c_str(), r.method.c_str(),
                    static_cast<unsigned long long>(r.order),
                    static_cast<unsigned long long>(r.seed), r.fp_value, r.ap_value,
                    r.forget_value);
      txt << line;
    }
    // Per-method means.
    std::map<std::string, std::vector<const RunRecord*>> by_method;
    for (const RunRecord& r : runs) by_method[r.method].push_back(&r);
    txt << "\n";
    for (const auto& [method, list] : by_method) {
      double sfp = 0, sap = 0, sfg = 0;
      for (const RunRecord* r : list) {
        sfp += r->fp_value;
        sap += r->ap_value;
        sfg += r->forget_value;
      }
      const double k = static_cast<double>(list.size());
      std::snprintf(line, sizeof(line), "mean[%s] over %zu runs: FP %.2f  AP %.2f  Forget %.2f\n",
                    method.c_str(), list.size(), sfp / k, sap / k, sfg / k);
      txt << line;
    }
  }
  for (const RunRecord& r : runs) {
    const std::string title =
        r.method + " (order " + std::to_string(r.order) + ", seed " + std::to_string(r.seed) + ")";
    std::ofstream svg(base / (r.name + "_accuracy.svg"), std::ios::trunc);
    svg << accuracy_chart_svg(r.acc, title);
  }
  return runs.size();
}

}  // namespace datacl
