#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace mata {

enum class Region : std::size_t { System = 0, Audio = 1, Instruction = 2, Generated = 3 };

inline constexpr std::size_t kRegionCount = 4;
inline constexpr std::array<Region, kRegionCount> kAllRegions = {
    Region::System, Region::Audio, Region::Instruction, Region::Generated};

/// Lower-case name used in every file format: system, audio, instruction, generated.
std::string_view region_name(Region r);
std::optional<Region> region_from_name(std::string_view name);

struct Segment {
    Region region;
    std::size_t start;
    std::size_t end_inclusive;

    std::size_t length() const noexcept { return end_inclusive - start + 1; }

    friend bool operator==(const Segment&, const Segment&) = default;
};

/// Inclusive bounds of the audio tokens.
struct AudioSpan {
    std::size_t start;
    std::size_t end_inclusive;

    friend bool operator==(const AudioSpan&, const AudioSpan&) = default;
};

/// Token ids plus their modality segmentation. Segments are contiguous, ordered,
/// non-empty and cover every position; exactly one is Audio.
class TokenSequence {
public:
    TokenSequence() = default;
    /// Throws SegmentationError if the invariants do not hold.
    TokenSequence(std::vector<std::size_t> tokens, std::vector<Segment> segments);

    /// Builds System, Audio, Instruction segments in that order; empty System or
    /// Instruction lists are omitted, audio must be non-empty.
    static TokenSequence from_regions(std::span<const std::size_t> system,
                                      std::span<const std::size_t> audio,
                                      std::span<const std::size_t> instruction);

    const std::vector<std::size_t>& tokens() const noexcept { return tokens_; }
    const std::vector<Segment>& segments() const noexcept { return segments_; }
    std::size_t size() const noexcept { return tokens_.size(); }
    AudioSpan audio_span() const;

    /// Appends to the trailing Generated segment, opening it if needed.
    void append_generated(std::size_t token);

private:
    void validate() const;

    std::vector<std::size_t> tokens_;
    std::vector<Segment> segments_;
};

}  // namespace mata
