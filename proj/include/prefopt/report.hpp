#pragma once

// Report serialization. Files are written to a temporary sibling and renamed
// into place, so a reader never sees a partial report.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefopt/error.hpp"
#include "prefopt/experiments.hpp"
#include "prefopt/numeric.hpp"
#include "prefopt/verify.hpp"

namespace prefopt {

inline constexpr const char* kCsvHeader = "experiment,loss,lambda,alpha,partition,metric,epoch,value,seed";

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(tmp.string() + ": cannot open for writing");
        out << content;
        out.flush();
        if (!out) throw std::runtime_error(tmp.string() + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

namespace detail {

// Quotes a CSV field only when needed.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string csv_rows(const ExperimentReport& r) {
    std::string out;
    for (const auto& row : r.rows) {
        out += csv_field(row.experiment) + ',' + csv_field(row.loss) + ',' + format_exact(row.lambda) + ',' +
               format_exact(row.alpha) + ',' + csv_field(row.partition) + ',' + csv_field(row.metric) + ',' +
               std::to_string(row.epoch) + ',' + format_exact(row.value) + ',' + std::to_string(row.seed) + '\n';
    }
    return out;
}

}  // namespace detail

inline std::string to_csv(const ExperimentReport& r) { return std::string(kCsvHeader) + '\n' + detail::csv_rows(r); }

inline nlohmann::json to_json(const ExperimentReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"experiment", row.experiment},
                        {"loss", row.loss},
                        {"lambda", row.lambda},
                        {"alpha", row.alpha},
                        {"partition", row.partition},
                        {"metric", row.metric},
                        {"epoch", row.epoch},
                        {"value", row.value},
                        {"seed", row.seed}});
    return {{"experiment", r.experiment}, {"rows", rows}};
}

inline std::string identity_csv(const std::vector<IdentityReport>& reports) {
    std::string out = "name,probes,max_error,threshold,passed\n";
    for (const auto& r : reports)
        out += detail::csv_field(r.name) + ',' + std::to_string(r.probes) + ',' + format_exact(r.max_error) + ',' +
               format_exact(r.threshold) + ',' + (r.passed ? "true" : "false") + '\n';
    return out;
}

inline nlohmann::json identity_json(const std::vector<IdentityReport>& reports) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : reports)
        a.push_back({{"name", r.name},
                     {"probes", r.probes},
                     {"max_error", r.max_error},
                     {"threshold", r.threshold},
                     {"passed", r.passed}});
    return a;
}

// ---------------------------------------------------------------------------
// SVG line charts. X positions are the sorted grid values placed at equal
// spacing (the grids are log-spaced or contain 0, so this is the readable
// choice); each series is one loss.

struct ChartSeries {
    std::string name;
    std::map<double, double> points;
};

inline std::string svg_escape(const std::string& s) {
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

inline std::string render_svg_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                                    const std::vector<ChartSeries>& series) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    const double W = 640, H = 400, L = 70, R = 150, T = 40, B = 60;
    std::set<double> xs;
    double ymin = 0.0;
    double ymax = 0.0;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            xs.insert(x);
            if (first) {
                ymin = ymax = y;
                first = false;
            }
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    ymin = std::min(ymin, 0.0);
    if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
    const std::vector<double> xv(xs.begin(), xs.end());
    auto px = [&](double x) {
        const auto i = static_cast<double>(std::lower_bound(xv.begin(), xv.end(), x) - xv.begin());
        return xv.size() <= 1 ? L + (W - L - R) / 2 : L + i * (W - L - R) / static_cast<double>(xv.size() - 1);
    };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" style=\"font-family:sans-serif;font-size:11px\">\n";
    o << "<rect width=\"100%\" height=\"100%\" style=\"fill:#ffffff\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"22\" style=\"text-anchor:middle;font-size:14px\">" << svg_escape(title)
      << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" style=\"stroke:#000\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" style=\"stroke:#000\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = ymin + (ymax - ymin) * i / 4.0;
        o << "<line x1=\"" << L - 4 << "\" y1=\"" << num(py(y)) << "\" x2=\"" << W - R << "\" y2=\"" << num(py(y))
          << "\" style=\"stroke:#ddd\"/>\n";
        o << "<text x=\"" << L - 6 << "\" y=\"" << num(py(y) + 4) << "\" style=\"text-anchor:end\">" << format_short(y)
          << "</text>\n";
    }
    for (double x : xv)
        o << "<text x=\"" << num(px(x)) << "\" y=\"" << H - B + 14 << "\" transform=\"rotate(40 " << num(px(x)) << ' '
          << H - B + 14 << ")\">" << format_short(x) << "</text>\n";
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" style=\"text-anchor:middle\">"
      << svg_escape(x_label) << "</text>\n";
    o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
      << ")\" style=\"text-anchor:middle\">" << svg_escape(y_label) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = palette[i % (sizeof palette / sizeof *palette)];
        std::string pts;
        for (const auto& [x, y] : series[i].points) pts += num(px(x)) + "," + num(py(y)) + " ";
        o << "<polyline points=\"" << pts << "\" style=\"fill:none;stroke:" << color << ";stroke-width:2\"/>\n";
        for (const auto& [x, y] : series[i].points)
            o << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"3\" style=\"fill:" << color
              << "\"/>\n";
        const double ly = T + 16.0 * static_cast<double>(i);
        o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
          << "\" style=\"stroke:" << color << ";stroke-width:2\"/>\n";
        o << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << svg_escape(series[i].name) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

struct ChartSpec {
    std::string file;
    std::string partition;
    std::string metric;
    bool over_alpha;
};

// One chart per final metric of interest, per-loss series over lambda (or
// alpha for the constraint study).
inline std::map<std::string, std::string> report_charts(const ExperimentReport& r) {
    std::vector<ChartSpec> specs;
    std::set<std::pair<std::string, std::string>> available;
    for (const auto& row : r.rows) available.insert({row.partition, row.metric});
    for (const auto& [partition, metric] : available) {
        const bool distance = metric.find("_to_") != std::string::npos || metric.find("_between_") != std::string::npos;
        if (!distance || metric.rfind("tv", 0) != 0) continue;
        if (partition.find('/') != std::string::npos) continue;  // per-reference detail
        std::string file = r.experiment + "_" + metric + "_" + partition;
        std::replace(file.begin(), file.end(), '~', '-');
        specs.push_back({file + ".svg", partition, metric, r.experiment == "constraint"});
    }
    std::map<std::string, std::string> out;
    for (const auto& s : specs) {
        std::map<std::string, ChartSeries> by_loss;
        for (const auto& row : r.rows) {
            if (row.partition != s.partition || row.metric != s.metric || row.loss == "reference") continue;
            auto& series = by_loss[row.loss];
            series.name = row.loss;
            series.points[s.over_alpha ? row.alpha : row.lambda] = row.value;
        }
        std::vector<ChartSeries> series;
        for (auto& [_, v] : by_loss) series.push_back(std::move(v));
        if (series.empty()) continue;
        out[s.file] = render_svg_chart(r.experiment + ": " + s.metric + " (" + s.partition + ")",
                                       s.over_alpha ? "alpha" : "lambda", s.metric, series);
    }
    return out;
}

enum class ReportFormat { Csv, Json };

inline const std::vector<std::string>& known_experiments() {
    static const std::vector<std::string> names = {"interpolation", "preservation", "constraint", "degenerate"};
    return names;
}

// Writes <experiment>.csv (or .json) into `dir`. For CSV, report.csv is
// rebuilt from every per-experiment CSV present in `dir`, in a fixed order.
inline std::vector<std::filesystem::path> write_report(const ExperimentReport& r, const std::filesystem::path& dir,
                                                       ReportFormat format, bool svg) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    if (format == ReportFormat::Csv) {
        const auto file = dir / (r.experiment + ".csv");
        write_atomic(file, to_csv(r));
        written.push_back(file);
        std::string combined = std::string(kCsvHeader) + '\n';
        for (const auto& name : known_experiments()) {
            std::ifstream in(dir / (name + ".csv"), std::ios::binary);
            if (!in) continue;
            std::string line;
            std::getline(in, line);
            if (line != kCsvHeader) continue;
            std::ostringstream ss;
            ss << in.rdbuf();
            combined += ss.str();
        }
        write_atomic(dir / "report.csv", combined);
        written.push_back(dir / "report.csv");
    } else {
        const auto file = dir / (r.experiment + ".json");
        write_atomic(file, to_json(r).dump(1) + "\n");
        written.push_back(file);
    }
    if (svg)
        for (const auto& [name, content] : report_charts(r)) {
            write_atomic(dir / name, content);
            written.push_back(dir / name);
        }
    return written;
}

}  // namespace prefopt
