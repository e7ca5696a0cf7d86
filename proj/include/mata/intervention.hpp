#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mata/sequence.hpp"

namespace mata {

/// Multiplicative boost of the last query row's scores over the audio columns,
/// applied between raw scoring and softmax in layers [layer_start, layer_end).
struct InterventionSpec {
    double alpha = 0.1;
    std::size_t layer_start = 10;  // inclusive
    std::size_t layer_end = 20;    // exclusive
    Region target_region = Region::Audio;
    bool enabled = true;

    /// Throws ConfigError on a negative or non-finite alpha. Enabled specs must also
    /// name a non-empty band inside [0, n_layers) and target Audio.
    void validate(std::size_t n_layers) const;

    friend bool operator==(const InterventionSpec&, const InterventionSpec&) = default;
};

bool is_active(const InterventionSpec& spec, std::size_t layer) noexcept;

/// Disabled spec; engine output is bit-identical to a run without any hook.
InterventionSpec make_noop() noexcept;

/// Scales row[j] by (1 + alpha) for j in the audio span when the spec is active at
/// `layer` and `query_pos == seq_len - 1`. Every other entry is left untouched, so
/// mask sentinels stay sentinels. Negative scores become more negative.
///
/// Throws ShapeError if row.size() != seq_len and SpanError if the span is inverted
/// or reaches past seq_len - 1.
void mata_transform_inplace(std::span<double> row, const InterventionSpec& spec,
                            std::size_t layer, std::size_t query_pos, std::size_t seq_len,
                            AudioSpan audio);

std::vector<double> mata_transform(std::span<const double> row, const InterventionSpec& spec,
                                   std::size_t layer, std::size_t query_pos, std::size_t seq_len,
                                   AudioSpan audio);

}  // namespace mata
