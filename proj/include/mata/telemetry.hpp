#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mata/sequence.hpp"

namespace mata {

/// Post-softmax attention of the last query row for one (step, layer, head).
/// Step 0 is the prefill; step k is the k-th cached decode step.
struct AttentionRecord {
    std::size_t step = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::vector<double> row;  // length = context length at that step
};

using RegionMasses = std::array<double, kRegionCount>;

inline double& mass_of(RegionMasses& m, Region r) { return m[static_cast<std::size_t>(r)]; }
inline double mass_of(const RegionMasses& m, Region r) { return m[static_cast<std::size_t>(r)]; }

struct LayerRegionSummary {
    std::size_t layer = 0;
    RegionMasses mean_mass{};  // indexed by Region
    std::size_t n_steps = 0;

    friend bool operator==(const LayerRegionSummary&, const LayerRegionSummary&) = default;
};

/// Sums `row` over each region. Segments may extend past `current_length` (a record
/// taken before later tokens were generated); only positions below it count.
/// Throws ShapeError on a length mismatch and SegmentationError on a coverage gap.
RegionMasses region_mass(std::span<const double> row, std::span<const Segment> segments,
                         std::size_t current_length);

/// Per layer (ascending), the mean of region_mass over every record of that layer,
/// i.e. uniformly over steps and heads. n_steps counts distinct steps.
std::vector<LayerRegionSummary> aggregate(std::span<const AttentionRecord> records,
                                          std::span<const Segment> segments);

enum class ExportFormat { Csv, Json };

/// Header of the telemetry CSV, exactly.
inline constexpr std::string_view kTelemetryCsvHeader = "layer,region,mean_mass,n_steps";

/// One line per (layer, region), regions in system, audio, instruction, generated order.
std::string summaries_to_csv(std::span<const LayerRegionSummary> summaries);
std::vector<LayerRegionSummary> summaries_from_csv(std::string_view text);

/// {"summaries": [{"layer", "region", "mean_mass", "n_steps"}, ...]} in CSV row order.
std::string summaries_to_json(std::span<const LayerRegionSummary> summaries);
std::vector<LayerRegionSummary> summaries_from_json(std::string_view text);

void export_summaries(std::span<const LayerRegionSummary> summaries, ExportFormat format,
                      const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace mata
