#pragma once

#include <filesystem>
#include <string>

#include "protoaudit/audit/sweep.hpp"
#include "protoaudit/prp/relevance.hpp"

namespace protoaudit::audit {

inline constexpr const char* kCurvesHeader = "x,acc_test100H1,acc_test100H2,acc_test5050";

/// Deterministic JSON text (sorted keys, two-space indent, trailing newline).
std::string report_json(const SweepReport& report);
/// Throws ConfigError on malformed input.
SweepReport report_from_json(const std::string& text);

std::string curves_csv(const SweepReport& report);

/// Writes `report.json` and `curves.csv` into `dir`.
void emit_report(const SweepReport& report, const std::filesystem::path& dir);
SweepReport load_report(const std::filesystem::path& path);

/// 8-bit PGM, three 64-wide panels: the image, the map scaled so its maximum
/// is 255 (all zero for an all-zero map), and the 50/50 blend of both.
void export_heatmap(const prp::RelevanceMap& map, const numerics::Tensor& image,
                    const std::filesystem::path& path);

/// Pixel rows of the three-panel heatmap, for tests and the writer.
std::vector<std::uint8_t> heatmap_panels(const prp::RelevanceMap& map, const numerics::Tensor& image);

}  // namespace protoaudit::audit
