#include "mata/intervention.hpp"

#include <cmath>
#include <string>

#include "mata/errors.hpp"

namespace mata {

void InterventionSpec::validate(std::size_t n_layers) const {
    if (!std::isfinite(alpha) || alpha < 0.0) {
        throw ConfigError("intervention alpha must be finite and >= 0, got " +
                          std::to_string(alpha));
    }
    if (!enabled) return;
    if (layer_start >= layer_end || layer_end > n_layers) {
        throw ConfigError("intervention layers [" + std::to_string(layer_start) + ", " +
                          std::to_string(layer_end) + ") must satisfy 0 <= start < end <= " +
                          std::to_string(n_layers));
    }
    if (target_region != Region::Audio) {
        throw ConfigError("intervention target region must be audio, got " +
                          std::string(region_name(target_region)));
    }
}

bool is_active(const InterventionSpec& spec, std::size_t layer) noexcept {
    return spec.enabled && spec.layer_start <= layer && layer < spec.layer_end;
}

InterventionSpec make_noop() noexcept {
    InterventionSpec spec;
    spec.alpha = 0.0;
    spec.enabled = false;
    return spec;
}

void mata_transform_inplace(std::span<double> row, const InterventionSpec& spec,
                            std::size_t layer, std::size_t query_pos, std::size_t seq_len,
                            AudioSpan audio) {
    if (row.size() != seq_len) {
        throw ShapeError("score row has " + std::to_string(row.size()) + " entries, sequence length is " +
                         std::to_string(seq_len));
    }
    if (audio.start > audio.end_inclusive || audio.end_inclusive >= seq_len) {
        throw SpanError("audio span [" + std::to_string(audio.start) + ", " +
                        std::to_string(audio.end_inclusive) + "] is invalid for sequence length " +
                        std::to_string(seq_len));
    }
    if (!is_active(spec, layer) || query_pos + 1 != seq_len) return;
    const double scale = 1.0 + spec.alpha;
    for (std::size_t j = audio.start; j <= audio.end_inclusive; ++j) row[j] *= scale;
}

std::vector<double> mata_transform(std::span<const double> row, const InterventionSpec& spec,
                                   std::size_t layer, std::size_t query_pos, std::size_t seq_len,
                                   AudioSpan audio) {
    std::vector<double> out(row.begin(), row.end());
    mata_transform_inplace(out, spec, layer, query_pos, seq_len, audio);
    return out;
}

}  // namespace mata
