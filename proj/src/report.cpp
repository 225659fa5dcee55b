#include "pedsynth/report.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/format.hpp"
#include "pedsynth/json_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace pedsynth {

void StudyReport::validate() const {
    if (cells.size() != variants.size()) throw InvalidArgument("study report: row count does not match variants");
    for (const auto &row : cells) {
        if (row.size() != configs.size()) throw InvalidArgument("study report: column count does not match configs");
        for (const auto &c : row) {
            if (c.fid && !(*c.fid >= 0)) throw InvalidArgument("study report: negative or NaN FID");
            if (!c.fid && c.failures == 0) throw InvalidArgument("study report: missing cell without a failure");
        }
    }
}

std::string study_report_to_json(const StudyReport &r) {
    json j;
    j["experiment"] = r.experiment;
    j["variants"] = r.variants;
    j["configs"] = r.configs;
    json grid = json::array();
    for (const auto &row : r.cells) {
        json jr = json::array();
        for (const auto &c : row) {
            json jc;
            jc["fid"] = c.fid ? json(*c.fid) : json(nullptr);
            jc["generated"] = c.generated;
            jc["failures"] = c.failures;
            jr.push_back(std::move(jc));
        }
        grid.push_back(std::move(jr));
    }
    j["cells"] = std::move(grid);
    j["reference_fid"] = r.reference_fid;
    j["n_conditional"] = r.n_conditional;
    j["full_set_size"] = r.full_set_size;
    j["embedder"] = r.embedder_id;
    j["backend"] = r.backend_id;
    j["metadata"] = r.metadata;
    return j.dump(2) + "\n";
}

StudyReport study_report_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        StudyReport r;
        r.experiment = j.at("experiment").get<std::string>();
        r.variants = j.at("variants").get<std::vector<std::string>>();
        r.configs = j.at("configs").get<std::vector<std::string>>();
        for (const auto &jr : j.at("cells")) {
            auto &row = r.cells.emplace_back();
            for (const auto &jc : jr) {
                StudyCell c;
                if (!jc.at("fid").is_null()) c.fid = jc.at("fid").get<double>();
                c.generated = jc.at("generated").get<std::size_t>();
                c.failures = jc.at("failures").get<std::size_t>();
                row.push_back(c);
            }
        }
        r.reference_fid = j.at("reference_fid").get<double>();
        r.n_conditional = j.at("n_conditional").get<std::size_t>();
        r.full_set_size = j.at("full_set_size").get<std::size_t>();
        r.embedder_id = j.at("embedder").get<std::string>();
        r.backend_id = j.at("backend").get<std::string>();
        r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
        r.validate();
        return r;
    } catch (const json::exception &e) {
        throw ParseError(std::string("study report: ") + e.what(), 0);
    }
}

void save_study_report(const StudyReport &report, const std::filesystem::path &path) {
    write_file(path, study_report_to_json(report));
}

StudyReport load_study_report(const std::filesystem::path &path) { return study_report_from_json(read_file(path)); }

std::string cell_text(const StudyCell &cell, int digits) {
    if (cell.failures > 0) return "FAIL(" + std::to_string(cell.failures) + ")";
    if (!cell.fid) return "NA";
    return format_fixed(*cell.fid, digits);
}

// ---------------------------------------------------------------------------

namespace {

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    std::size_t line = 1;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        if (c == '"') {
            if (!field.empty()) throw ParseError("csv: stray quote", line, i);
            quoted = any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            any = false;
            ++line;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) throw ParseError("csv: unterminated quote", line);
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

GridValue grid_value(const StudyCell &c) {
    if (c.failures > 0) return {std::nullopt, c.failures};
    return {c.fid, 0};
}

GridValue parse_grid_value(const std::string &s, std::size_t line) {
    if (s == "NA") return {};
    if (s.starts_with("FAIL(") && s.ends_with(")")) {
        std::size_t n = 0;
        const char *b = s.data() + 5, *e = s.data() + s.size() - 1;
        const auto res = std::from_chars(b, e, n);
        if (res.ec != std::errc{} || res.ptr != e || n == 0) throw ParseError("csv: bad failure count '" + s + "'", line);
        return {std::nullopt, n};
    }
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ParseError("csv: bad value '" + s + "'", line);
    return {v, 0};
}

} // namespace

StudyGrid study_grid(const StudyReport &report) {
    StudyGrid g{report.variants, report.configs, {}};
    for (const auto &row : report.cells) {
        auto &out = g.values.emplace_back();
        for (const auto &c : row) out.push_back(grid_value(c));
    }
    return g;
}

std::string study_csv(const StudyReport &report) {
    std::string out = "variant";
    for (const auto &c : report.configs) out += "," + csv_field(c);
    out += "\n";
    for (std::size_t r = 0; r < report.variants.size(); ++r) {
        out += csv_field(report.variants[r]);
        for (std::size_t c = 0; c < report.configs.size(); ++c) {
            const auto &cell = report.at(r, c);
            out += ",";
            out += cell.failures > 0 || !cell.fid ? cell_text(cell) : format_double(*cell.fid);
        }
        out += "\n";
    }
    return out;
}

StudyGrid parse_study_csv(std::string_view text) {
    const auto rows = parse_csv(text);
    if (rows.empty() || rows[0].empty() || rows[0][0] != "variant") throw ParseError("csv: missing 'variant' header", 1);
    StudyGrid g;
    g.configs.assign(rows[0].begin() + 1, rows[0].end());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
            throw ParseError("csv: row has " + std::to_string(rows[i].size()) + " fields, expected " +
                                 std::to_string(rows[0].size()),
                             i + 1);
        g.variants.push_back(rows[i][0]);
        auto &out = g.values.emplace_back();
        for (std::size_t c = 1; c < rows[i].size(); ++c) out.push_back(parse_grid_value(rows[i][c], i + 1));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Text tables

namespace {

// First column left-aligned, the rest right-aligned.
std::string align(const std::vector<std::vector<std::string>> &rows) {
    std::vector<std::size_t> width;
    for (const auto &r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (width.size() <= c) width.push_back(0);
            width[c] = std::max(width[c], r[c].size());
        }
    std::string out;
    for (const auto &r : rows) {
        std::string line;
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c == 0) {
                line += r[c] + std::string(width[c] - r[c].size(), ' ');
            } else {
                line += "  " + std::string(width[c] - r[c].size(), ' ') + r[c];
            }
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

} // namespace

std::string study_table(const StudyReport &report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"variant"});
    for (const auto &c : report.configs) rows[0].push_back(c);
    for (std::size_t r = 0; r < report.variants.size(); ++r) {
        auto &row = rows.emplace_back();
        row.push_back(report.variants[r]);
        for (std::size_t c = 0; c < report.configs.size(); ++c) row.push_back(cell_text(report.at(r, c)));
    }
    std::string out = report.experiment + ": FID per configuration (" + report.embedder_id + ", " +
                      std::to_string(report.n_conditional) + " conditional images)\n\n";
    out += align(rows);
    out += "\nreference FID, conditional real images vs full set (" + std::to_string(report.full_set_size) +
           " images): " + format_fixed(report.reference_fid, 2) + "\n";
    return out;
}

std::string ma_table(const MAReport &report) {
    std::vector<std::vector<std::string>> rows{{"attribute", "mA", "TPR", "TNR", "TP", "FN", "TN", "FP"}};
    for (const auto &a : report.per_attribute)
        rows.push_back({a.attribute, format_fixed(a.ma, 2), format_fixed(a.tpr, 4), format_fixed(a.tnr, 4),
                        std::to_string(a.tp), std::to_string(a.fn), std::to_string(a.tn), std::to_string(a.fp)});
    std::string out = align(rows);
    out += "\nmean mA: " + format_fixed(report.mean_ma, 2) + " over " + std::to_string(report.per_attribute.size()) +
           " attributes (threshold " + format_double(report.threshold) + ")\n";
    if (!report.skipped.empty()) {
        out += "skipped:";
        for (const auto &s : report.skipped) out += " " + s;
        out += "\n";
    }
    return out;
}

std::string comparison_table(const ComparisonTable &table, std::string_view label_a, std::string_view label_b) {
    std::vector<std::vector<std::string>> rows{{"attribute", std::string(label_a), std::string(label_b), "delta"}};
    auto signed_fixed = [](double v) { return (v > 0 ? "+" : "") + format_fixed(v, 2); };
    for (const auto &r : table.rows)
        rows.push_back({r.attribute, format_fixed(r.ma_a, 2), format_fixed(r.ma_b, 2), signed_fixed(r.delta)});
    rows.push_back({"mean", format_fixed(table.mean_a, 2), format_fixed(table.mean_b, 2), signed_fixed(table.mean_delta)});
    std::string out = align(rows);
    if (!table.excluded.empty()) {
        out += "\nexcluded:";
        for (const auto &s : table.excluded) out += " " + s;
        out += "\n";
    }
    return out;
}

std::string ma_csv(const MAReport &report) {
    std::string out = "attribute,ma,tpr,tnr,tp,fn,tn,fp\n";
    for (const auto &a : report.per_attribute)
        out += csv_field(a.attribute) + "," + format_double(a.ma) + "," + format_double(a.tpr) + "," +
               format_double(a.tnr) + "," + std::to_string(a.tp) + "," + std::to_string(a.fn) + "," +
               std::to_string(a.tn) + "," + std::to_string(a.fp) + "\n";
    return out;
}

std::string comparison_csv(const ComparisonTable &table) {
    std::string out = "attribute,ma_a,ma_b,delta\n";
    for (const auto &r : table.rows)
        out += csv_field(r.attribute) + "," + format_double(r.ma_a) + "," + format_double(r.ma_b) + "," +
               format_double(r.delta) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// SVG bar charts

namespace {

std::string xml_escape(std::string_view s) {
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

constexpr const char *kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                                    "#59a14f", "#edc948", "#b07aa1", "#9c755f"};

// A "nice" axis maximum: 1, 2 or 5 times a power of ten.
double nice_ceiling(double v) {
    if (!(v > 0)) return 1;
    const double p = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * p >= v) return m * p;
    return 10 * p;
}

struct BarChart {
    std::string title;
    std::string y_label;
    std::vector<std::string> groups;
    std::vector<std::string> series;
    std::vector<std::vector<std::optional<double>>> values; ///< [group][series]
    std::optional<double> y_max;
    bool rotate_labels = false;
};

std::string render(const BarChart &chart) {
    const double bar = 14, inner_gap = 2, group_gap = 18;
    const double left = 60, top = 40, plot_h = 220;
    const double bottom = chart.rotate_labels ? 110 : 50;
    const auto ns = std::max<std::size_t>(chart.series.size(), 1);
    const double group_w = double(ns) * (bar + inner_gap) - inner_gap;
    const double plot_w = double(chart.groups.size()) * (group_w + group_gap) + group_gap;
    const double legend_w = chart.series.size() > 1 ? 170 : 20;
    const double width = left + plot_w + legend_w, height = top + plot_h + bottom;

    double max_v = 0;
    for (const auto &g : chart.values)
        for (const auto &v : g)
            if (v) max_v = std::max(max_v, *v);
    const double y_max = chart.y_max.value_or(nice_ceiling(max_v * 1.05));
    auto y_of = [&](double v) { return top + plot_h - plot_h * std::clamp(v / y_max, 0.0, 1.0); };
    const auto f1 = [](double v) { return format_fixed(v, 1); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f1(width) << "\" height=\"" << f1(height)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << f1(left) << "\" y=\"20\" font-size=\"14\">" << xml_escape(chart.title) << "</text>\n";
    for (int t = 0; t <= 5; ++t) {
        const double v = y_max * t / 5, y = y_of(v);
        o << "<line x1=\"" << f1(left) << "\" x2=\"" << f1(left + plot_w) << "\" y1=\"" << f1(y) << "\" y2=\"" << f1(y)
          << "\" stroke=\"#dddddd\"/>\n";
        o << "<text x=\"" << f1(left - 6) << "\" y=\"" << f1(y + 4) << "\" text-anchor=\"end\">" << format_double(v)
          << "</text>\n";
    }
    o << "<text transform=\"translate(16," << f1(top + plot_h / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(chart.y_label) << "</text>\n";

    for (std::size_t g = 0; g < chart.groups.size(); ++g) {
        const double gx = left + group_gap + double(g) * (group_w + group_gap);
        for (std::size_t s = 0; s < chart.series.size(); ++s) {
            const double x = gx + double(s) * (bar + inner_gap);
            const auto &v = chart.values[g][s];
            if (!v) {
                o << "<text x=\"" << f1(x + bar / 2) << "\" y=\"" << f1(top + plot_h - 4)
                  << "\" text-anchor=\"middle\" font-size=\"8\" fill=\"#c00000\">FAIL</text>\n";
                continue;
            }
            const double y = y_of(*v);
            o << "<rect x=\"" << f1(x) << "\" y=\"" << f1(y) << "\" width=\"" << f1(bar) << "\" height=\""
              << f1(top + plot_h - y) << "\" fill=\"" << kPalette[s % std::size(kPalette)] << "\"><title>"
              << xml_escape(chart.series[s]) << ": " << format_fixed(*v, 2) << "</title></rect>\n";
        }
        const double cx = gx + group_w / 2, ly = top + plot_h + 16;
        if (chart.rotate_labels) {
            o << "<text transform=\"translate(" << f1(cx) << "," << f1(ly - 6) << ") rotate(-60)\" text-anchor=\"end\">"
              << xml_escape(chart.groups[g]) << "</text>\n";
        } else {
            o << "<text x=\"" << f1(cx) << "\" y=\"" << f1(ly) << "\" text-anchor=\"middle\">"
              << xml_escape(chart.groups[g]) << "</text>\n";
        }
    }
    o << "<line x1=\"" << f1(left) << "\" x2=\"" << f1(left + plot_w) << "\" y1=\"" << f1(top + plot_h) << "\" y2=\""
      << f1(top + plot_h) << "\" stroke=\"black\"/>\n";

    if (chart.series.size() > 1) {
        const double lx = left + plot_w + 16;
        for (std::size_t s = 0; s < chart.series.size(); ++s) {
            const double ly = top + double(s) * 16;
            o << "<rect x=\"" << f1(lx) << "\" y=\"" << f1(ly) << "\" width=\"10\" height=\"10\" fill=\""
              << kPalette[s % std::size(kPalette)] << "\"/>\n";
            o << "<text x=\"" << f1(lx + 14) << "\" y=\"" << f1(ly + 9) << "\">" << xml_escape(chart.series[s])
              << "</text>\n";
        }
    }
    o << "</svg>\n";
    return o.str();
}

} // namespace

std::string study_svg(const StudyReport &report) {
    BarChart chart{report.experiment + ": FID per configuration", "FID", report.configs, report.variants, {}, {}, false};
    for (std::size_t c = 0; c < report.configs.size(); ++c) {
        auto &g = chart.values.emplace_back();
        for (std::size_t r = 0; r < report.variants.size(); ++r) {
            const auto &cell = report.at(r, c);
            g.push_back(cell.failures > 0 ? std::nullopt : cell.fid);
        }
    }
    return render(chart);
}

std::string ma_svg(const MAReport &report) {
    BarChart chart{"mA per attribute (mean " + format_fixed(report.mean_ma, 2) + ")", "mA", {}, {"mA"}, {}, 100.0, true};
    for (const auto &a : report.per_attribute) {
        chart.groups.push_back(a.attribute);
        chart.values.push_back({a.ma});
    }
    return render(chart);
}

std::string comparison_svg(const ComparisonTable &table, std::string_view label_a, std::string_view label_b) {
    BarChart chart{"mA per attribute", "mA", {}, {std::string(label_a), std::string(label_b)}, {}, 100.0, true};
    for (const auto &r : table.rows) {
        chart.groups.push_back(r.attribute);
        chart.values.push_back({r.ma_a, r.ma_b});
    }
    return render(chart);
}

// ---------------------------------------------------------------------------

std::string_view to_string(ReportFormat f) noexcept {
    switch (f) {
    case ReportFormat::table: return "table";
    case ReportFormat::csv: return "csv";
    case ReportFormat::plot: return "plot";
    }
    return "?";
}

ReportFormat parse_report_format(std::string_view s) {
    for (auto f : {ReportFormat::table, ReportFormat::csv, ReportFormat::plot})
        if (s == to_string(f)) return f;
    throw InvalidArgument("unknown report format '" + std::string(s) + "' (expected table, csv or plot)");
}

std::set<ReportFormat> parse_report_formats(const std::vector<std::string> &names) {
    std::set<ReportFormat> out;
    for (const auto &n : names)
        if (!n.empty()) out.insert(parse_report_format(n));
    return out;
}

namespace {

std::vector<std::filesystem::path> write_renderings(const std::set<ReportFormat> &formats,
                                                    const std::filesystem::path &dir, std::string_view stem,
                                                    const auto &make) {
    std::vector<std::filesystem::path> out;
    if (formats.empty()) return out;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (auto f : formats) {
        const char *ext = f == ReportFormat::table ? ".txt" : f == ReportFormat::csv ? ".csv" : ".svg";
        const auto path = dir / (std::string(stem) + ext);
        write_file(path, make(f));
        out.push_back(path);
    }
    return out;
}

} // namespace

std::vector<std::filesystem::path> emit_report(const StudyReport &report, const std::set<ReportFormat> &formats,
                                               const std::filesystem::path &dir, std::string_view stem) {
    if (!formats.empty()) report.validate();
    return write_renderings(formats, dir, stem, [&](ReportFormat f) {
        return f == ReportFormat::table ? study_table(report) : f == ReportFormat::csv ? study_csv(report) : study_svg(report);
    });
}

std::vector<std::filesystem::path> emit_report(const MAReport &report, const std::set<ReportFormat> &formats,
                                               const std::filesystem::path &dir, std::string_view stem) {
    return write_renderings(formats, dir, stem, [&](ReportFormat f) {
        return f == ReportFormat::table ? ma_table(report) : f == ReportFormat::csv ? ma_csv(report) : ma_svg(report);
    });
}

std::vector<std::filesystem::path> emit_report(const ComparisonTable &table, const std::set<ReportFormat> &formats,
                                               const std::filesystem::path &dir, std::string_view stem,
                                               std::string_view label_a, std::string_view label_b) {
    return write_renderings(formats, dir, stem, [&](ReportFormat f) {
        return f == ReportFormat::table ? comparison_table(table, label_a, label_b)
               : f == ReportFormat::csv ? comparison_csv(table)
                                        : comparison_svg(table, label_a, label_b);
    });
}

} // namespace pedsynth
