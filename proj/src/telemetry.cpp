#include "mata/telemetry.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mata/errors.hpp"

namespace mata {

RegionMasses region_mass(std::span<const double> row, std::span<const Segment> segments,
                         std::size_t current_length) {
    if (row.size() != current_length) {
        throw ShapeError("attention row has " + std::to_string(row.size()) +
                         " entries, context length is " + std::to_string(current_length));
    }
    RegionMasses masses{};
    std::size_t covered = 0;
    for (const auto& seg : segments) {
        if (seg.start != covered) break;
        if (seg.start >= current_length) break;
        const std::size_t stop = std::min(seg.end_inclusive + 1, current_length);
        double sum = 0.0;
        for (std::size_t j = seg.start; j < stop; ++j) sum += row[j];
        mass_of(masses, seg.region) += sum;
        covered = stop;
        if (stop < seg.end_inclusive + 1) break;
    }
    if (covered < current_length) {
        throw SegmentationError("segments cover positions [0, " + std::to_string(covered) +
                                ") but the row has " + std::to_string(current_length));
    }
    return masses;
}

std::vector<LayerRegionSummary> aggregate(std::span<const AttentionRecord> records,
                                          std::span<const Segment> segments) {
    if (records.empty()) throw EmptyInputError("no attention records to aggregate");
    struct Acc {
        RegionMasses sum{};
        std::size_t count = 0;
        std::set<std::size_t> steps;
    };
    std::map<std::size_t, Acc> by_layer;
    for (const auto& rec : records) {
        const auto m = region_mass(rec.row, segments, rec.row.size());
        auto& acc = by_layer[rec.layer];
        for (std::size_t r = 0; r < kRegionCount; ++r) acc.sum[r] += m[r];
        ++acc.count;
        acc.steps.insert(rec.step);
    }
    std::vector<LayerRegionSummary> out;
    out.reserve(by_layer.size());
    for (const auto& [layer, acc] : by_layer) {
        LayerRegionSummary s;
        s.layer = layer;
        for (std::size_t r = 0; r < kRegionCount; ++r) {
            s.mean_mass[r] = acc.sum[r] / static_cast<double>(acc.count);
        }
        s.n_steps = acc.steps.size();
        out.push_back(s);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

namespace {

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* name) {
    T v{};
    auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || p != field.data() + field.size() || field.empty()) {
        throw ParseError("telemetry csv", line, name, "cannot parse '" + std::string(field) + "'");
    }
    return v;
}

Region parse_region(std::string_view name, std::size_t line) {
    auto r = region_from_name(name);
    if (!r) throw ParseError("telemetry", line, "region", "unknown region '" + std::string(name) + "'");
    return *r;
}

// Rebuilds summaries from flat (layer, region, mass, n_steps) rows, preserving first-seen order.
struct SummaryBuilder {
    std::vector<LayerRegionSummary> out;
    std::map<std::size_t, std::size_t> index;

    void add(std::size_t layer, Region region, double mass, std::size_t n_steps) {
        auto [it, inserted] = index.try_emplace(layer, out.size());
        if (inserted) {
            out.push_back({});
            out.back().layer = layer;
            out.back().n_steps = n_steps;
        }
        mass_of(out[it->second].mean_mass, region) = mass;
    }
};

}  // namespace

std::string summaries_to_csv(std::span<const LayerRegionSummary> summaries) {
    std::string out(kTelemetryCsvHeader);
    out += '\n';
    for (const auto& s : summaries) {
        for (Region r : kAllRegions) {
            out += std::to_string(s.layer);
            out += ',';
            out += region_name(r);
            out += ',';
            out += format_double(mass_of(s.mean_mass, r));
            out += ',';
            out += std::to_string(s.n_steps);
            out += '\n';
        }
    }
    return out;
}

std::vector<LayerRegionSummary> summaries_from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kTelemetryCsvHeader) {
        throw ParseError("telemetry csv", 1, "", "expected header '" +
                                                     std::string(kTelemetryCsvHeader) + "'");
    }
    SummaryBuilder b;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest = line;
        while (true) {
            const auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
        }
        if (f.size() != 4) throw ParseError("telemetry csv", line_no, "", "expected 4 fields");
        b.add(parse_number<std::size_t>(f[0], line_no, "layer"), parse_region(f[1], line_no),
              parse_number<double>(f[2], line_no, "mean_mass"),
              parse_number<std::size_t>(f[3], line_no, "n_steps"));
    }
    return std::move(b.out);
}

std::string summaries_to_json(std::span<const LayerRegionSummary> summaries) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : summaries) {
        for (Region r : kAllRegions) {
            rows.push_back({{"layer", s.layer},
                            {"region", region_name(r)},
                            {"mean_mass", mass_of(s.mean_mass, r)},
                            {"n_steps", s.n_steps}});
        }
    }
    return nlohmann::json{{"summaries", rows}}.dump(2) + "\n";
}

std::vector<LayerRegionSummary> summaries_from_json(std::string_view text) {
    SummaryBuilder b;
    try {
        const auto doc = nlohmann::json::parse(text);
        for (const auto& row : doc.at("summaries")) {
            b.add(row.at("layer").get<std::size_t>(),
                  parse_region(row.at("region").get<std::string>(), 0),
                  row.at("mean_mass").get<double>(), row.at("n_steps").get<std::size_t>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("telemetry json", 0, "", e.what());
    }
    return std::move(b.out);
}

void export_summaries(std::span<const LayerRegionSummary> summaries, ExportFormat format,
                      const std::filesystem::path& path) {
    const std::string text =
        format == ExportFormat::Csv ? summaries_to_csv(summaries) : summaries_to_json(summaries);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace mata
