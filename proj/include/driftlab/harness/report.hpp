#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "driftlab/harness/experiment.hpp"

namespace dlab {

/// Writes the report in each requested format ("csv", "json", "svg") into
/// `outdir` and returns the written paths in order. Metric families with no
/// rows are skipped and listed in index.txt and in every SVG footer.
/// ConfigError for an unknown format.
std::vector<std::filesystem::path> render_report(const DriftReport& report, const std::vector<std::string>& formats,
                                                 const std::filesystem::path& outdir);

/// Individual renderers, exposed for tests.
std::string models_csv(const DriftReport& report);
std::string per_class_csv(const DriftReport& report);
std::string similarity_csv(const DriftReport& report);
std::string conditions_csv(const DriftReport& report);
std::string sweeps_csv(const DriftReport& report);

std::string similarity_svg(const DriftReport& report, const std::string& footer);
/// Radar chart of one condition metric ("cdi", "kid", ...); series are the
/// mean per method/scope plus the control line when present.
std::string radar_svg(const DriftReport& report, const std::string& metric, const std::string& footer);
std::string per_class_svg(const DriftReport& report, const std::string& footer);
std::string sweep_svg(const DriftReport& report, const std::string& parameter, const std::string& footer);

}  // namespace dlab
