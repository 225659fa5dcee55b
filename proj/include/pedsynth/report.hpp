#pragma once

// Study grids and their renderings: aligned text tables, CSV and SVG bar
// charts. MA reports and report comparisons share the same emitters.

#include "pedsynth/metrics.hpp"
#include "pedsynth/partrainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pedsynth {

struct StudyCell {
    std::optional<double> fid; ///< absent when fewer than two images were generated
    std::size_t generated = 0;
    std::size_t failures = 0;

    bool operator==(const StudyCell &) const = default;
};

struct StudyReport {
    std::string experiment;
    std::vector<std::string> variants; ///< grid rows
    std::vector<std::string> configs;  ///< grid columns
    std::vector<std::vector<StudyCell>> cells;
    double reference_fid = 0; ///< conditional real images vs the full set
    std::size_t n_conditional = 0;
    std::size_t full_set_size = 0;
    std::string embedder_id;
    std::string backend_id;
    std::map<std::string, std::string> metadata;

    [[nodiscard]] const StudyCell &at(std::size_t variant, std::size_t config) const {
        return cells.at(variant).at(config);
    }
    /// Throws InvalidArgument on a grid of the wrong shape or a negative value.
    void validate() const;

    bool operator==(const StudyReport &) const = default;
};

std::string study_report_to_json(const StudyReport &report);
StudyReport study_report_from_json(std::string_view text);
void save_study_report(const StudyReport &report, const std::filesystem::path &path);
StudyReport load_study_report(const std::filesystem::path &path);

/// "12.34", or "FAIL(n)" when any sample of the cell failed.
std::string cell_text(const StudyCell &cell, int digits = 2);

// ---------------------------------------------------------------------------
// CSV grid

/// What a CSV cell carries: the FID (full precision) or a failure count.
struct GridValue {
    std::optional<double> value;
    std::size_t failures = 0;

    bool operator==(const GridValue &) const = default;
};

struct StudyGrid {
    std::vector<std::string> variants;
    std::vector<std::string> configs;
    std::vector<std::vector<GridValue>> values;

    bool operator==(const StudyGrid &) const = default;
};

StudyGrid study_grid(const StudyReport &report);
/// Header "variant,<config>...", one row per variant.
std::string study_csv(const StudyReport &report);
StudyGrid parse_study_csv(std::string_view text);

// ---------------------------------------------------------------------------
// Renderings

std::string study_table(const StudyReport &report);
std::string ma_table(const MAReport &report);
std::string comparison_table(const ComparisonTable &table, std::string_view label_a = "a",
                             std::string_view label_b = "b");

std::string ma_csv(const MAReport &report);
std::string comparison_csv(const ComparisonTable &table);

/// Grouped bars: one group per configuration, one bar per variant.
std::string study_svg(const StudyReport &report);
std::string ma_svg(const MAReport &report);
/// Paired bars per attribute.
std::string comparison_svg(const ComparisonTable &table, std::string_view label_a = "a",
                           std::string_view label_b = "b");

enum class ReportFormat { table, csv, plot };

std::string_view to_string(ReportFormat f) noexcept;
ReportFormat parse_report_format(std::string_view s);
std::set<ReportFormat> parse_report_formats(const std::vector<std::string> &names);

/// Writes <stem>.txt, <stem>.csv and <stem>.svg for the requested formats
/// and returns the paths written. An empty set writes nothing.
std::vector<std::filesystem::path> emit_report(const StudyReport &report, const std::set<ReportFormat> &formats,
                                               const std::filesystem::path &dir, std::string_view stem = "study");
std::vector<std::filesystem::path> emit_report(const MAReport &report, const std::set<ReportFormat> &formats,
                                               const std::filesystem::path &dir, std::string_view stem = "ma");
std::vector<std::filesystem::path> emit_report(const ComparisonTable &table, const std::set<ReportFormat> &formats,
                                               const std::filesystem::path &dir, std::string_view stem = "comparison",
                                               std::string_view label_a = "a", std::string_view label_b = "b");

} // namespace pedsynth
