#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mata/engine.hpp"
#include "mata/experiment.hpp"

namespace mata::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,   // bad arguments, unreadable or malformed input files
    kExitEngine = 2,  // failure while running the model
};

/// Environment variable overriding the default telemetry/output directory ("telemetry").
inline constexpr const char* kTelemetryDirEnv = "MATA_TELEMETRY_DIR";

/// FNV-1a 64 over each token id as 8 little-endian bytes.
std::uint64_t token_hash(std::span<const std::size_t> tokens);
std::string token_hash_hex(std::span<const std::size_t> tokens);

/// First index at which the two generations differ; the shorter length if one is a
/// prefix of the other; nullopt when identical.
std::optional<std::size_t> first_divergence(std::span<const std::size_t> a,
                                            std::span<const std::size_t> b);

struct CompareReport {
    InterventionSpec intervention;
    std::vector<std::size_t> baseline_tokens;
    std::vector<std::size_t> intervened_tokens;
    std::optional<std::size_t> first_divergence_step;
    std::vector<double> audio_mass_delta;  // per layer: intervened minus baseline
    double mean_delta_in_range = 0.0;
    double mean_delta_outside_range = 0.0;
    double max_abs_delta = 0.0;

    std::string to_text() const;
    std::string to_json() const;
    static CompareReport from_json(std::string_view text);

    friend bool operator==(const CompareReport&, const CompareReport&) = default;
};

/// Decodes the experiment twice on identical inputs: without any hook, and with
/// its intervention.
CompareReport compare(const ExperimentSpec& spec, const ModelWeights& weights);

struct LayerRange {
    std::size_t start;
    std::size_t end;  // exclusive

    friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

/// "10-20" -> [10, 20). Throws SpanError unless start < end <= n_layers.
LayerRange parse_layer_range(std::string_view text, std::size_t n_layers);

/// A grid cell; both fields empty for the hook-free baseline row.
struct SweepCell {
    std::optional<double> alpha;
    std::optional<LayerRange> range;

    friend bool operator==(const SweepCell&, const SweepCell&) = default;
};

/// Baseline, then alpha 0.05/0.10/0.15 on [10,20), then alpha 0.10 on
/// [0,10), [20,28), [0,28): seven rows.
std::vector<SweepCell> default_sweep_grid();

/// Baseline row followed by every (alpha, range) pair, alphas outermost.
std::vector<SweepCell> make_sweep_grid(std::span<const double> alphas,
                                       std::span<const LayerRange> ranges);

struct SweepRow {
    SweepCell cell;
    std::string token_hash;
    std::size_t n_generated = 0;
    double mean_audio_mass = 0.0;      // this run, averaged over layers in range
    double baseline_audio_mass = 0.0;  // baseline run, same layers
    std::optional<std::size_t> divergence_step;

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

inline constexpr std::string_view kSweepCsvHeader =
    "alpha,layer_start,layer_end,token_hash,n_generated,mean_audio_mass,baseline_audio_mass,"
    "divergence_step";

/// Cells run concurrently; rows come back in grid order. The experiment's own
/// intervention fields are ignored.
std::vector<SweepRow> run_sweep(const ExperimentSpec& spec, const ModelWeights& weights,
                                std::span<const SweepCell> grid);

std::string sweep_to_csv(std::span<const SweepRow> rows);
std::vector<SweepRow> sweep_from_csv(std::string_view text);
std::string sweep_to_json(std::span<const SweepRow> rows);

/// Entry point behind the `mata` binary. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mata::cli
