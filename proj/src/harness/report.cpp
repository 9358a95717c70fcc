#include "driftlab/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "driftlab/gradcore/checkpoint.hpp"
#include "driftlab/gradcore/error.hpp"

namespace dlab {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
constexpr const char* kControlColor = "#444444";

std::string num(double v) { return nlohmann::json(v).dump(); }

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

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

std::string series_key(const std::string& method, const std::string& scope) {
    return scope.empty() ? method : method + "/" + scope;
}

class Svg {
public:
    Svg(int w, int h, const std::string& title) : h_(h) {
        out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
             << "\" viewBox=\"0 0 " << w << " " << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
             << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
        text(w / 2.0, 18, title, "middle", 14);
    }
    void line(double x1, double y1, double x2, double y2, const std::string& color, double width = 1.0,
              bool dashed = false) {
        out_ << "<line x1=\"" << fixed(x1) << "\" y1=\"" << fixed(y1) << "\" x2=\"" << fixed(x2) << "\" y2=\""
             << fixed(y2) << "\" stroke=\"" << color << "\" stroke-width=\"" << fixed(width) << "\""
             << (dashed ? " stroke-dasharray=\"4 3\"" : "") << "/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color, bool closed = false,
                  bool dashed = false) {
        out_ << (closed ? "<polygon" : "<polyline") << " fill=\"none\" stroke=\"" << color
             << "\" stroke-width=\"1.5\"" << (dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i)
            out_ << (i ? " " : "") << fixed(pts[i].first) << "," << fixed(pts[i].second);
        out_ << "\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& color) {
        out_ << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" width=\"" << fixed(w) << "\" height=\""
             << fixed(h) << "\" fill=\"" << color << "\"/>\n";
    }
    void circle(double x, double y, double r, const std::string& color) {
        out_ << "<circle cx=\"" << fixed(x) << "\" cy=\"" << fixed(y) << "\" r=\"" << fixed(r) << "\" fill=\"" << color
             << "\"/>\n";
    }
    void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 11) {
        out_ << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" text-anchor=\"" << anchor
             << "\" font-size=\"" << size << "\">" << xml_escape(s) << "</text>\n";
    }
    void legend(const std::vector<std::pair<std::string, std::string>>& entries, double x, double y) {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const double yy = y + 15.0 * static_cast<double>(i);
            rect(x, yy - 8, 10, 10, entries[i].second);
            text(x + 14, yy, entries[i].first);
        }
    }
    std::string finish(const std::string& footer) {
        if (!footer.empty()) text(8, h_ - 8, footer, "start", 10);
        out_ << "</svg>\n";
        return out_.str();
    }

private:
    int h_;
    std::ostringstream out_;
};

/// Maps [lo, hi] onto pixel range [a, b].
struct Axis {
    double lo, hi, a, b;
    double operator()(double v) const { return hi == lo ? (a + b) / 2 : a + (v - lo) / (hi - lo) * (b - a); }
};

void draw_frame(Svg& svg, const Axis& x, const Axis& y, const std::string& xlabel, const std::string& ylabel) {
    svg.line(x.a, y.a, x.b, y.a, "#000");
    svg.line(x.a, y.a, x.a, y.b, "#000");
    for (int i = 0; i <= 4; ++i) {
        const double fx = x.lo + (x.hi - x.lo) * i / 4.0, fy = y.lo + (y.hi - y.lo) * i / 4.0;
        svg.line(x(fx), y.a, x(fx), y.a + 4, "#000");
        svg.text(x(fx), y.a + 16, fixed(fx, 3), "middle", 10);
        svg.line(x.a - 4, y(fy), x.a, y(fy), "#000");
        svg.text(x.a - 6, y(fy) + 3, fixed(fy, 3), "end", 10);
    }
    svg.text((x.a + x.b) / 2, y.a + 32, xlabel, "middle");
    svg.text(14, (y.a + y.b) / 2, ylabel, "middle");
}

std::vector<std::string> metric_columns(const auto& rows) {
    std::set<std::string> keys;
    for (const auto& r : rows)
        for (const auto& [k, v] : r.metrics) keys.insert(k);
    return {keys.begin(), keys.end()};
}

std::string omitted_note(const DriftReport& r) {
    std::vector<std::string> empty;
    if (r.models.empty()) empty.push_back("models");
    if (r.similarity.empty()) empty.push_back("similarity");
    if (r.conditions.empty()) empty.push_back("conditions");
    if (r.sweeps.empty()) empty.push_back("sweeps");
    if (empty.empty()) return "";
    std::string s = "omitted (no rows):";
    for (const auto& e : empty) s += " " + e;
    return s;
}

std::string footer_for(const DriftReport& r) {
    const std::string om = omitted_note(r);
    return r.experiment_id + (om.empty() ? "" : "  |  " + om);
}

bool has_condition_metric(const DriftReport& r, const std::string& metric) {
    return std::ranges::any_of(r.conditions, [&](const ConditionRow& c) { return c.metrics.contains(metric); });
}

}  // namespace

std::string models_csv(const DriftReport& report) {
    const auto cols = metric_columns(report.models);
    std::string out = "label,concept_id,concept_name,method,scope,seed,model_hash,accuracy,accuracy_delta,worst_drop,worst_class";
    for (const auto& c : cols) out += "," + csv_field(c);
    out += "\n";
    for (const auto& m : report.models) {
        out += csv_field(m.label) + "," + std::to_string(m.concept_id) + "," + csv_field(m.concept_name) + "," +
               m.method + "," + m.scope + "," + std::to_string(m.seed) + "," + m.model_hash + "," + opt(m.accuracy) +
               "," + opt(m.accuracy_delta) + "," + opt(m.worst_drop) + "," +
               (m.worst_class ? std::to_string(*m.worst_class) : "");
        for (const auto& c : cols) {
            auto it = m.metrics.find(c);
            out += "," + (it == m.metrics.end() ? std::string() : num(it->second));
        }
        out += "\n";
    }
    return out;
}

std::string per_class_csv(const DriftReport& report) {
    std::string out = "label,method,scope,seed,class,accuracy\n";
    for (const auto& [cls, acc] : report.base_per_class)
        out += "base,base,,0," + std::to_string(cls) + "," + num(acc) + "\n";
    for (const auto& m : report.models) {
        if (m.label == "base") continue;
        for (const auto& [cls, acc] : m.per_class)
            out += csv_field(m.label) + "," + m.method + "," + m.scope + "," + std::to_string(m.seed) + "," +
                   std::to_string(cls) + "," + num(acc) + "\n";
    }
    return out;
}

std::string similarity_csv(const DriftReport& report) {
    std::string out = "label,concept_id,method,scope,seed,index,cond,similarity\n";
    for (const auto& s : report.similarity)
        for (std::size_t i = 0; i < s.values.size(); ++i)
            out += csv_field(s.label) + "," + std::to_string(s.concept_id) + "," + s.method + "," + s.scope + "," +
                   std::to_string(s.seed) + "," + std::to_string(i) + "," +
                   (i < s.conds.size() ? std::to_string(s.conds[i]) : "") + "," + num(s.values[i]) + "\n";
    return out;
}

std::string conditions_csv(const DriftReport& report) {
    const auto cols = metric_columns(report.conditions);
    std::string out = "label,concept_id,method,scope,seed,condition";
    for (const auto& c : cols) out += "," + csv_field(c);
    out += "\n";
    for (const auto& r : report.conditions) {
        out += csv_field(r.label) + "," + std::to_string(r.concept_id) + "," + r.method + "," + r.scope + "," +
               std::to_string(r.seed) + "," + std::to_string(r.condition);
        for (const auto& c : cols) {
            auto it = r.metrics.find(c);
            out += "," + (it == r.metrics.end() ? std::string() : num(it->second));
        }
        out += "\n";
    }
    return out;
}

std::string sweeps_csv(const DriftReport& report) {
    std::string out = "parameter,method,scope,value,mean,runs,per_run\n";
    for (const auto& s : report.sweeps) {
        std::string runs;
        for (std::size_t i = 0; i < s.per_run.size(); ++i) runs += (i ? ";" : "") + num(s.per_run[i]);
        out += s.parameter + "," + s.method + "," + s.scope + "," + num(s.value) + "," + num(s.mean) + "," +
               std::to_string(s.per_run.size()) + "," + runs + "\n";
    }
    return out;
}

std::string similarity_svg(const DriftReport& report, const std::string& footer) {
    std::map<std::string, std::vector<double>> groups;
    double lo = 1.0;
    for (const auto& s : report.similarity) {
        auto& g = groups[series_key(s.method, s.scope)];
        g.insert(g.end(), s.values.begin(), s.values.end());
        for (double v : s.values) lo = std::min(lo, v);
    }
    lo = std::max(-1.0, std::floor(lo * 10.0) / 10.0);
    if (lo >= 1.0) lo = 0.9;
    constexpr std::size_t bins = 40;
    const double width = (1.0 - lo) / bins;
    std::map<std::string, std::vector<double>> density;
    double peak = 0.0;
    for (const auto& [key, vals] : groups) {
        std::vector<double> d(bins, 0.0);
        for (double v : vals) {
            const auto b = std::min<std::size_t>(bins - 1, static_cast<std::size_t>(std::max(0.0, (v - lo) / width)));
            d[b] += 1.0;
        }
        for (double& x : d) {
            x /= static_cast<double>(vals.size()) * width;
            peak = std::max(peak, x);
        }
        density[key] = std::move(d);
    }
    Svg svg(640, 400, "Seed-matched similarity to the base model");
    const Axis x{lo, 1.0, 70, 500}, y{0.0, peak > 0 ? peak : 1.0, 340, 40};
    draw_frame(svg, x, y, "cosine similarity", "density");
    std::vector<std::pair<std::string, std::string>> legend;
    std::size_t i = 0;
    for (const auto& [key, d] : density) {
        const std::string color = kPalette[i++ % std::size(kPalette)];
        std::vector<std::pair<double, double>> pts;
        for (std::size_t b = 0; b < bins; ++b) pts.emplace_back(x(lo + (b + 0.5) * width), y(d[b]));
        svg.polyline(pts, color);
        legend.emplace_back(key + " (n=" + std::to_string(groups[key].size()) + ")", color);
    }
    svg.legend(legend, 510, 50);
    return svg.finish(footer);
}

std::string radar_svg(const DriftReport& report, const std::string& metric, const std::string& footer) {
    std::set<int> cond_set;
    std::map<std::string, std::map<int, std::pair<double, int>>> sums;
    std::map<int, std::pair<double, int>> control;
    for (const auto& r : report.conditions) {
        auto it = r.metrics.find(metric);
        if (it == r.metrics.end()) continue;
        cond_set.insert(r.condition);
        auto& slot = r.label == "control" ? control[r.condition] : sums[series_key(r.method, r.scope)][r.condition];
        slot.first += it->second;
        slot.second += 1;
    }
    const std::vector<int> conds(cond_set.begin(), cond_set.end());
    double peak = 0.0;
    auto mean_at = [](const std::map<int, std::pair<double, int>>& m, int c) {
        auto it = m.find(c);
        return it == m.end() || it->second.second == 0 ? 0.0 : it->second.first / it->second.second;
    };
    for (int c : conds) {
        peak = std::max(peak, mean_at(control, c));
        for (const auto& [k, m] : sums) peak = std::max(peak, mean_at(m, c));
    }
    if (peak <= 0.0) peak = 1.0;
    Svg svg(640, 480, "Per-condition " + metric + " against the base model");
    const double cx = 260, cy = 250, radius = 180;
    const auto n = conds.size();
    auto point = [&](std::size_t i, double v) {
        const double ang = -std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
        const double r = radius * std::max(0.0, v) / peak;
        return std::pair{cx + r * std::cos(ang), cy + r * std::sin(ang)};
    };
    for (int ring = 1; ring <= 4; ++ring) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < n; ++i) pts.push_back(point(i, peak * ring / 4.0));
        svg.polyline(pts, "#dddddd", true);
        svg.text(cx + 3, cy - radius * ring / 4.0, fixed(peak * ring / 4.0, 4), "start", 9);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto [px, py] = point(i, peak);
        svg.line(cx, cy, px, py, "#dddddd");
        const auto [lx, ly] = point(i, peak * 1.08);
        svg.text(lx, ly + 3, std::to_string(conds[i]), "middle", 10);
    }
    std::vector<std::pair<std::string, std::string>> legend;
    std::size_t idx = 0;
    for (const auto& [key, m] : sums) {
        const std::string color = kPalette[idx++ % std::size(kPalette)];
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < n; ++i) pts.push_back(point(i, mean_at(m, conds[i])));
        svg.polyline(pts, color, true);
        legend.emplace_back(key, color);
    }
    if (!control.empty()) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < n; ++i) pts.push_back(point(i, mean_at(control, conds[i])));
        svg.polyline(pts, kControlColor, true, true);
        legend.emplace_back("control (base vs base)", kControlColor);
    }
    svg.legend(legend, 480, 60);
    return svg.finish(footer);
}

std::string per_class_svg(const DriftReport& report, const std::string& footer) {
    std::map<std::string, std::map<int, std::pair<double, int>>> series;
    for (const auto& [cls, acc] : report.base_per_class) series["base"][cls] = {acc, 1};
    for (const auto& m : report.models) {
        if (m.label == "base") continue;
        for (const auto& [cls, acc] : m.per_class) {
            auto& slot = series[series_key(m.method, m.scope)][cls];
            slot.first += acc;
            slot.second += 1;
        }
    }
    std::set<int> cls_set;
    for (const auto& [k, m] : series)
        for (const auto& [c, v] : m) cls_set.insert(c);
    const std::vector<int> classes(cls_set.begin(), cls_set.end());
    Svg svg(720, 400, "Per-class zero-shot accuracy");
    const Axis y{0.0, 1.0, 340, 40};
    const double x0 = 70, x1 = 560;
    const double group_w = classes.empty() ? 1.0 : (x1 - x0) / static_cast<double>(classes.size());
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
    draw_frame(svg, Axis{0.0, 1.0, x0, x1}, y, "class", "accuracy");
    std::vector<std::pair<std::string, std::string>> legend;
    std::size_t s = 0;
    for (const auto& [key, m] : series) {
        const std::string color = key == "base" ? kControlColor : kPalette[s % std::size(kPalette)];
        for (std::size_t i = 0; i < classes.size(); ++i) {
            auto it = m.find(classes[i]);
            if (it == m.end() || it->second.second == 0) continue;
            const double v = it->second.first / it->second.second;
            const double bx = x0 + group_w * (static_cast<double>(i) + 0.1) + bar_w * static_cast<double>(s);
            svg.rect(bx, y(v), bar_w, y(0.0) - y(v), color);
        }
        legend.emplace_back(key, color);
        ++s;
    }
    for (std::size_t i = 0; i < classes.size(); ++i)
        svg.text(x0 + group_w * (static_cast<double>(i) + 0.5), 372, std::to_string(classes[i]), "middle", 10);
    svg.legend(legend, 575, 50);
    return svg.finish(footer);
}

std::string sweep_svg(const DriftReport& report, const std::string& parameter, const std::string& footer) {
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
    bool first = true;
    for (const auto& s : report.sweeps) {
        if (s.parameter != parameter) continue;
        series[series_key(s.method, s.scope)].emplace_back(s.value, s.mean);
        if (first) {
            xlo = xhi = s.value;
            ylo = yhi = s.mean;
            first = false;
        }
        xlo = std::min(xlo, s.value);
        xhi = std::max(xhi, s.value);
        ylo = std::min(ylo, s.mean);
        yhi = std::max(yhi, s.mean);
    }
    const double pad = std::max(1e-3, (yhi - ylo) * 0.1);
    Svg svg(640, 400, "Sweep over " + parameter);
    const Axis x{xlo, xhi, 70, 500}, y{ylo - pad, yhi + pad, 340, 40};
    draw_frame(svg, x, y, parameter, "mean");
    std::vector<std::pair<std::string, std::string>> legend;
    std::size_t i = 0;
    for (auto& [key, pts] : series) {
        std::ranges::sort(pts);
        const std::string color = kPalette[i++ % std::size(kPalette)];
        std::vector<std::pair<double, double>> px;
        for (const auto& [vx, vy] : pts) {
            px.emplace_back(x(vx), y(vy));
            svg.circle(x(vx), y(vy), 3, color);
        }
        svg.polyline(px, color);
        legend.emplace_back(key, color);
    }
    svg.legend(legend, 510, 50);
    return svg.finish(footer);
}

std::vector<std::filesystem::path> render_report(const DriftReport& report, const std::vector<std::string>& formats,
                                                 const std::filesystem::path& outdir) {
    for (const auto& f : formats)
        if (f != "csv" && f != "json" && f != "svg") throw ConfigError("unknown report format: " + f);
    std::filesystem::create_directories(outdir);
    std::vector<std::filesystem::path> written;
    std::vector<std::string> index;
    auto emit = [&](const std::string& name, const std::string& body) {
        write_file(outdir / name, body);
        written.push_back(outdir / name);
        index.push_back(name);
    };
    const std::string footer = footer_for(report);
    const bool has_per_class =
        !report.base_per_class.empty() ||
        std::ranges::any_of(report.models, [](const ModelRow& m) { return !m.per_class.empty(); });
    for (const auto& f : formats) {
        if (f == "json") emit("report.json", report.to_json().dump(2) + "\n");
        if (f == "csv") {
            if (!report.models.empty()) emit("models.csv", models_csv(report));
            if (has_per_class) emit("per_class.csv", per_class_csv(report));
            if (!report.similarity.empty()) emit("similarity.csv", similarity_csv(report));
            if (!report.conditions.empty()) emit("conditions.csv", conditions_csv(report));
            if (!report.sweeps.empty()) emit("sweeps.csv", sweeps_csv(report));
        }
        if (f == "svg") {
            if (!report.similarity.empty()) emit("similarity.svg", similarity_svg(report, footer));
            for (const char* metric : {"cdi", "kid", "fid", "diversity", "similarity"})
                if (has_condition_metric(report, metric))
                    emit(std::string("conditions_") + metric + ".svg", radar_svg(report, metric, footer));
            if (has_per_class) emit("per_class_accuracy.svg", per_class_svg(report, footer));
            std::set<std::string> params;
            for (const auto& s : report.sweeps) params.insert(s.parameter);
            for (const auto& p : params) emit("sweep_" + p + ".svg", sweep_svg(report, p, footer));
        }
    }
    std::string idx = "experiment " + report.experiment_id + "\n";
    for (const auto& n : index) idx += n + "\n";
    const std::string om = omitted_note(report);
    if (!om.empty()) idx += om + "\n";
    write_file(outdir / "index.txt", idx);
    written.push_back(outdir / "index.txt");
    return written;
}

}  // namespace dlab
