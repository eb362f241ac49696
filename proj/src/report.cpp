#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "scenedet/error.h"
#include "scenedet/harness.h"

namespace scenedet::harness {

namespace {

namespace fs = std::filesystem;

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

std::string fmt3(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3f", x);
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#bcbd22"};
constexpr int kPaletteSize = 8;

struct RunData {
    std::string name;
    std::vector<EpochMetrics> metrics;
    // From an optional report.txt next to the metrics.
    double map25 = -1.0;
    double map50 = -1.0;
    double label_accuracy = -1.0;
    std::map<int, double> category_ap;  // at IoU 0.25
};

std::vector<EpochMetrics> parse_metrics_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("missing metrics file: " + path);
    std::vector<EpochMetrics> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        EpochMetrics m;
        std::string extra;
        if (!(ls >> m.epoch >> m.train_loss >> m.val_map25 >> m.val_map50) ||
            (ls >> extra)) {
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": expected 'epoch loss map25 map50'");
        }
        out.push_back(m);
    }
    if (out.empty()) throw ParseError(path + ": no metric lines");
    return out;
}

void parse_report_file(const std::string& path, RunData& run) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return;  // the report is optional
    std::string line;
    while (std::getline(in, line)) {
        std::size_t colon = line.find(": ");
        if (colon == std::string::npos) continue;
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 2);
        try {
            if (key == "map@0.25") run.map25 = std::stod(value);
            else if (key == "map@0.5") run.map50 = std::stod(value);
            else if (key == "label_accuracy@0.25") run.label_accuracy = std::stod(value);
            else if (key.rfind("ap@0.25/cat", 0) == 0)
                run.category_ap[std::stoi(key.substr(11))] = std::stod(value);
        } catch (const std::logic_error&) {
            throw ParseError(path + ": malformed value for " + key);
        }
    }
}

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;
};

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

// Shared frame: white canvas, axis box, five ticks per axis, legend on the
// right. Coordinates are mapped into the plot rectangle.
class Chart {
  public:
    Chart(const std::string& title, const std::string& x_label,
          const std::string& y_label, double x_min, double x_max, double y_min,
          double y_max)
        : x_min_(x_min), x_max_(std::max(x_max, x_min + 1e-9)),
          y_min_(y_min), y_max_(std::max(y_max, y_min + 1e-9)) {
        out_ << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW
             << "' height='" << kH << "' viewBox='0 0 " << kW << " " << kH
             << "' font-family='sans-serif'>\n";
        out_ << "<rect width='" << kW << "' height='" << kH << "' fill='white'/>\n";
        out_ << "<text x='" << (kL + plot_w() / 2) << "' y='24' font-size='15' "
             << "text-anchor='middle'>" << svg_escape(title) << "</text>\n";
        out_ << "<rect x='" << kL << "' y='" << kT << "' width='" << plot_w()
             << "' height='" << plot_h() << "' fill='none' stroke='#888'/>\n";
        for (int i = 0; i <= 4; ++i) {
            double fx = i / 4.0;
            double vx = x_min_ + fx * (x_max_ - x_min_);
            double px = kL + fx * plot_w();
            out_ << "<line x1='" << px << "' y1='" << (kT + plot_h()) << "' x2='"
                 << px << "' y2='" << (kT + plot_h() + 4) << "' stroke='#888'/>\n";
            out_ << "<text x='" << px << "' y='" << (kT + plot_h() + 18)
                 << "' font-size='11' text-anchor='middle'>" << fmt3(vx)
                 << "</text>\n";
            double vy = y_min_ + fx * (y_max_ - y_min_);
            double py = kT + (1.0 - fx) * plot_h();
            out_ << "<line x1='" << (kL - 4) << "' y1='" << py << "' x2='" << kL
                 << "' y2='" << py << "' stroke='#888'/>\n";
            out_ << "<text x='" << (kL - 8) << "' y='" << (py + 4)
                 << "' font-size='11' text-anchor='end'>" << fmt3(vy)
                 << "</text>\n";
        }
        out_ << "<text x='" << (kL + plot_w() / 2) << "' y='" << (kH - 8)
             << "' font-size='12' text-anchor='middle'>" << svg_escape(x_label)
             << "</text>\n";
        out_ << "<text x='16' y='" << (kT + plot_h() / 2)
             << "' font-size='12' text-anchor='middle' transform='rotate(-90 16 "
             << (kT + plot_h() / 2) << ")'>" << svg_escape(y_label) << "</text>\n";
    }

    void add_line(const Series& s, int color_index) {
        const char* color = kPalette[color_index % kPaletteSize];
        out_ << "<polyline fill='none' stroke='" << color
             << "' stroke-width='1.5' points='";
        for (const auto& [x, y] : s.pts) out_ << px(x) << "," << py(y) << " ";
        out_ << "'/>\n";
        legend(s.name, color_index);
    }

    void add_bar(double x0, double x1, double y, int color_index) {
        double left = px(x0);
        double top = py(y);
        out_ << "<rect x='" << left << "' y='" << top << "' width='"
             << (px(x1) - left) << "' height='" << (kT + plot_h() - top)
             << "' fill='" << kPalette[color_index % kPaletteSize] << "'/>\n";
    }

    void add_x_tick_label(double x, const std::string& label) {
        out_ << "<text x='" << px(x) << "' y='" << (kT + plot_h() + 18)
             << "' font-size='11' text-anchor='middle'>" << svg_escape(label)
             << "</text>\n";
    }

    void legend(const std::string& name, int color_index) {
        double y = kT + 14 + 18 * legend_rows_++;
        out_ << "<rect x='" << (kL + plot_w() + 12) << "' y='" << (y - 9)
             << "' width='12' height='12' fill='"
             << kPalette[color_index % kPaletteSize] << "'/>\n";
        out_ << "<text x='" << (kL + plot_w() + 30) << "' y='" << (y + 2)
             << "' font-size='12'>" << svg_escape(name) << "</text>\n";
    }

    std::string finish() {
        out_ << "</svg>\n";
        return out_.str();
    }

  private:
    static constexpr int kW = 760, kH = 420, kL = 62, kT = 40;
    static constexpr int kR = 170, kB = 54;
    static double clampf(double v) { return std::isfinite(v) ? v : 0.0; }
    double plot_w() const { return kW - kL - kR; }
    double plot_h() const { return kH - kT - kB; }
    double px(double x) const {
        return kL + (clampf(x) - x_min_) / (x_max_ - x_min_) * plot_w();
    }
    double py(double y) const {
        return kT + (1.0 - (clampf(y) - y_min_) / (y_max_ - y_min_)) * plot_h();
    }

    double x_min_, x_max_, y_min_, y_max_;
    int legend_rows_ = 0;
    std::ostringstream out_;
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

std::string curves_svg(const std::vector<RunData>& runs, const std::string& title,
                       const std::string& y_label,
                       double EpochMetrics::* field) {
    double y_min = 1e300, y_max = -1e300, x_max = 1.0;
    for (const auto& run : runs)
        for (const auto& m : run.metrics) {
            y_min = std::min(y_min, m.*field);
            y_max = std::max(y_max, m.*field);
            x_max = std::max(x_max, double(m.epoch));
        }
    if (y_min > y_max) y_min = 0.0, y_max = 1.0;
    double pad = 0.05 * std::max(y_max - y_min, 1e-9);
    Chart chart(title, "epoch", y_label, 0.0, x_max, y_min - pad, y_max + pad);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        Series s;
        s.name = runs[i].name;
        for (const auto& m : runs[i].metrics)
            s.pts.push_back({double(m.epoch), m.*field});
        chart.add_line(s, int(i));
    }
    return chart.finish();
}

std::string ap_bars_svg(const std::vector<RunData>& runs) {
    std::map<int, int> cat_slot;
    for (const auto& run : runs)
        for (const auto& [cat, ap] : run.category_ap)
            cat_slot.emplace(cat, int(cat_slot.size()));
    int groups = std::max<int>(1, int(cat_slot.size()));
    Chart chart("per-category AP at IoU 0.25", "category", "AP", 0.0,
                double(groups), 0.0, 1.0);
    double width = 0.8 / double(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (const auto& [cat, ap] : runs[i].category_ap) {
            double x0 = cat_slot[cat] + 0.1 + double(i) * width;
            chart.add_bar(x0, x0 + width, ap, int(i));
        }
        chart.legend(runs[i].name, int(i));
    }
    for (const auto& [cat, slot] : cat_slot)
        chart.add_x_tick_label(slot + 0.5, "cat" + std::to_string(cat));
    return chart.finish();
}

std::string summary_table(const std::vector<RunData>& runs) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-20s %7s %12s %11s %11s %11s %11s\n",
                  "run", "epochs", "final_loss", "best_map25", "map25", "map50",
                  "label_acc");
    out << line;
    for (const auto& run : runs) {
        double best = 0.0;
        for (const auto& m : run.metrics) best = std::max(best, m.val_map25);
        auto opt = [](double v) { return v < 0.0 ? std::string("-") : fmt3(v); };
        std::snprintf(line, sizeof(line), "%-20s %7zu %12s %11s %11s %11s %11s\n",
                      run.name.c_str(), run.metrics.size(),
                      fmt(run.metrics.back().train_loss).c_str(),
                      fmt3(best).c_str(), opt(run.map25).c_str(),
                      opt(run.map50).c_str(), opt(run.label_accuracy).c_str());
        out << line;
    }
    return out.str();
}

}  // namespace

void report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report: no run directories given");
    std::vector<RunData> runs;
    for (const auto& dir : run_dirs) {
        RunData run;
        run.name = fs::path(dir).filename().string();
        if (run.name.empty()) run.name = dir;
        run.metrics = parse_metrics_file(dir + "/metrics.txt");
        parse_report_file(dir + "/report.txt", run);
        runs.push_back(std::move(run));
    }

    fs::create_directories(out_dir);
    write_file(out_dir + "/loss_curves.svg",
               curves_svg(runs, "training loss", "loss", &EpochMetrics::train_loss));
    write_file(out_dir + "/map_curves.svg",
               curves_svg(runs, "validation mAP at IoU 0.25", "mAP",
                          &EpochMetrics::val_map25));
    write_file(out_dir + "/ap_bars.svg", ap_bars_svg(runs));
    write_file(out_dir + "/summary.txt", summary_table(runs));
}

}  // namespace scenedet::harness
