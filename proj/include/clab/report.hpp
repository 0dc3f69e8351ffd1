#pragma once

// Renders a results directory's summary.json into standalone SVG charts and a
// markdown index under <dir>/report. Output depends only on summary.json.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace clab {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string short_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {}

  void text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12) {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size << "\" text-anchor=\""
          << anchor << "\" font-family=\"sans-serif\">" << xml_escape(s) << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, const char* color = "#000", double width = 1.0) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
          << "\" stroke=\"" << color << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const char* fill, const char* stroke = "none") {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
          << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void circle(double x, double y, double r, const char* fill) {
    body_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill
          << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) body_ << (i ? " " : "") << num(pts[i].first) << ',' << num(pts[i].second);
    body_ << "\"/>\n";
  }
  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_, 0) << "\" height=\"" << num(h_, 0)
        << "\" viewBox=\"0 0 " << num(w_, 0) << ' ' << num(h_, 0) << "\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << num(w_, 0) << "\" height=\"" << num(h_, 0) << "\" fill=\"#fff\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (sweep value, metric)
};

inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series, bool unit_range) {
  const double W = 640, H = 400, L = 70, R = 170, T = 40, B = 60;
  Svg svg(W, H);
  svg.text(W / 2, 24, title, "middle", 15);
  std::set<double> xs_set;
  double lo = unit_range ? 0.0 : 1e300, hi = unit_range ? 1.0 : -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xs_set.insert(x);
      if (!unit_range) {
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      }
    }
  const std::vector<double> xs(xs_set.begin(), xs_set.end());
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  } else if (!unit_range) {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) {
    const auto i = std::lower_bound(xs.begin(), xs.end(), x) - xs.begin();
    return xs.size() == 1 ? L + pw / 2 : L + pw * static_cast<double>(i) / static_cast<double>(xs.size() - 1);
  };
  auto py = [&](double y) { return T + ph * (1.0 - (y - lo) / (hi - lo)); };
  svg.line(L, T + ph, L + pw, T + ph);
  svg.line(L, T, L, T + ph);
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    svg.line(L - 4, py(v), L, py(v));
    svg.text(L - 8, py(v) + 4, short_num(v), "end", 11);
  }
  for (double x : xs) {
    svg.line(px(x), T + ph, px(x), T + ph + 4);
    svg.text(px(x), T + ph + 18, short_num(x), "middle", 11);
  }
  svg.text(L + pw / 2, H - 18, xlabel, "middle", 12);
  svg.text(18, T + ph / 2, ylabel, "middle", 12);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : series[i].points) pts.emplace_back(px(x), py(y));
    svg.polyline(pts, palette(i));
    for (const auto& [x, y] : pts) svg.circle(x, y, 3, palette(i));
    const double ly = T + 14 + 18 * static_cast<double>(i);
    svg.line(L + pw + 14, ly - 4, L + pw + 34, ly - 4, palette(i), 2);
    svg.text(L + pw + 40, ly, series[i].label, "start", 11);
  }
  return svg.str();
}

inline std::string no_data_panel(const std::string& title) {
  Svg svg(640, 200);
  svg.text(320, 30, title, "middle", 15);
  svg.rect(20, 50, 600, 130, "#f4f4f4", "#999");
  svg.text(320, 122, "no data", "middle", 20);
  return svg.str();
}

inline std::string histogram_panels(const std::string& title, const nlohmann::json& entry) {
  const auto& panels = entry.at("panels");
  const std::size_t cols = 4, n = panels.size();
  const std::size_t rows = std::max<std::size_t>(1, (n + cols - 1) / cols);
  const double pw = 180, ph = 120, gap = 16, top = 40;
  Svg svg(cols * (pw + gap) + gap, top + rows * (ph + gap + 14) + gap);
  svg.text((cols * (pw + gap) + gap) / 2, 24, title, "middle", 14);
  const auto ks = entry.at("ks");
  for (std::size_t p = 0; p < n; ++p) {
    const auto counts = panels[p].at("counts").get<std::vector<double>>();
    const double ox = gap + (p % cols) * (pw + gap), oy = top + (p / cols) * (ph + gap + 14);
    svg.rect(ox, oy, pw, ph, "#fafafa", "#ccc");
    const double peak = counts.empty() ? 1.0 : std::max(1.0, *std::max_element(counts.begin(), counts.end()));
    const double bw = counts.empty() ? pw : pw / static_cast<double>(counts.size());
    for (std::size_t b = 0; b < counts.size(); ++b) {
      const double h = (ph - 4) * counts[b] / peak;
      svg.rect(ox + b * bw, oy + ph - h, bw, h, "#1f77b4");
    }
    svg.text(ox + pw / 2, oy + ph + 12, "KS " + num(ks.at(p).get<double>(), 3), "middle", 10);
  }
  return svg.str();
}

inline std::string sweep_text(const nlohmann::json& sweep) {
  std::string s;
  for (auto it = sweep.begin(); it != sweep.end(); ++it) {
    s += (s.empty() ? "" : ", ") + it.key() + "=" + short_num(it.value().get<double>());
  }
  return s;
}

}  // namespace detail

/// Writes report/index.md plus one SVG per (metric, swept parameter) and one
/// histogram SVG per diagnostics entry. Returns the written paths.
inline std::vector<std::filesystem::path> render_report(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path summary_path = dir / "summary.json";
  std::ifstream in(summary_path, std::ios::binary);
  if (!in) throw ReportError("no summary.json in " + dir.string());
  nlohmann::json summary;
  try {
    summary = nlohmann::json::parse(in);
    if (!summary.is_object() || !summary.at("methods").is_object() || !summary.at("sweep").is_object()) {
      throw ReportError("summary.json has an unexpected layout");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("corrupt summary.json: " + std::string(e.what()));
  }

  const fs::path out_dir = dir / "report";
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    std::ofstream out(out_dir / name, std::ios::binary);
    if (!out) throw ReportError("cannot write " + (out_dir / name).string());
    out << text;
    written.push_back(out_dir / name);
  };

  std::ostringstream md;
  const std::string preset = summary.value("preset", std::string("experiment"));
  md << "# " << preset << "\n\n";
  md << "Records: " << summary.value("records", 0) << ", failures: " << summary.value("failures", 0)
     << ", config hash `" << summary.value("config_hash", std::string()) << "`.\n\n";

  static const std::vector<std::pair<std::string, std::string>> metrics{
      {"acc_base", "base probe accuracy"}, {"acc_glyph", "glyph probe accuracy"}, {"acc_bit", "bit probe accuracy"},
      {"final_loss", "final loss"},        {"initial_loss", "initial loss"},      {"ks_mean", "mean projection KS"}};

  std::size_t charts = 0;
  try {
    for (const auto& [metric, label] : metrics) {
      std::map<std::string, std::vector<detail::Series>> by_param;
      for (auto mit = summary["methods"].begin(); mit != summary["methods"].end(); ++mit) {
        const std::string method = mit.key();
        std::map<std::string, detail::Series> grouped;  // key: other-axis values
        std::string param;
        for (const auto& pt : mit.value().at("points")) {
          const auto& sweep = pt.at("sweep");
          if (sweep.empty() || !pt.at("mean").contains(metric)) continue;
          auto first = sweep.begin();
          param = first.key();
          nlohmann::json rest = sweep;
          rest.erase(param);
          const std::string key = detail::sweep_text(rest);
          auto& s = grouped[key];
          s.label = key.empty() ? method : method + " (" + key + ")";
          s.points.emplace_back(first.value().get<double>(), pt["mean"][metric].get<double>());
        }
        for (auto& [_, s] : grouped) {
          std::sort(s.points.begin(), s.points.end());
          by_param[param].push_back(std::move(s));
        }
      }
      for (const auto& [param, series] : by_param) {
        const std::string name = metric + "_vs_" + param + ".svg";
        emit(name, detail::line_chart(label + " vs " + param, param, metric, series, metric.rfind("acc_", 0) == 0));
        md << "## " << label << " vs " << param << "\n\n![" << metric << "](" << name << ")\n\n";
        ++charts;
      }
    }
    if (charts == 0) {
      emit("no_data.svg", detail::no_data_panel(preset + ": no data"));
      md << "## Results\n\nThe summary contains no data points.\n\n![no data](no_data.svg)\n\n";
    }
    if (summary.contains("histograms") && !summary["histograms"].empty()) {
      md << "## Projection histograms\n\n";
      for (const auto& h : summary["histograms"]) {
        const std::string title = h.at("method").get<std::string>() + " " + detail::sweep_text(h.at("sweep")) +
                                  " seed " + std::to_string(h.at("seed").get<std::uint64_t>());
        char name[64];
        std::snprintf(name, sizeof name, "hist_%04zu.svg", h.at("index").get<std::size_t>());
        emit(name, detail::histogram_panels(title, h));
        md << "### " << title << "\n\nmean KS " << detail::num(h.at("ks_mean").get<double>(), 4) << "\n\n![" << title
           << "](" << name << ")\n\n";
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("corrupt summary.json: " + std::string(e.what()));
  }
  emit("index.md", md.str());
  return written;
}

}  // namespace clab
