#include "mata/sequence.hpp"

#include <string>

#include "mata/errors.hpp"

namespace mata {

std::string_view region_name(Region r) {
    switch (r) {
        case Region::System: return "system";
        case Region::Audio: return "audio";
        case Region::Instruction: return "instruction";
        case Region::Generated: return "generated";
    }
    return "unknown";
}

std::optional<Region> region_from_name(std::string_view name) {
    for (Region r : kAllRegions) {
        if (region_name(r) == name) return r;
    }
    return std::nullopt;
}

TokenSequence::TokenSequence(std::vector<std::size_t> tokens, std::vector<Segment> segments)
    : tokens_(std::move(tokens)), segments_(std::move(segments)) {
    validate();
}

TokenSequence TokenSequence::from_regions(std::span<const std::size_t> system,
                                          std::span<const std::size_t> audio,
                                          std::span<const std::size_t> instruction) {
    std::vector<std::size_t> tokens;
    std::vector<Segment> segments;
    auto add = [&](Region r, std::span<const std::size_t> ids) {
        if (ids.empty()) return;
        segments.push_back({r, tokens.size(), tokens.size() + ids.size() - 1});
        tokens.insert(tokens.end(), ids.begin(), ids.end());
    };
    add(Region::System, system);
    add(Region::Audio, audio);
    add(Region::Instruction, instruction);
    return TokenSequence(std::move(tokens), std::move(segments));
}

void TokenSequence::validate() const {
    if (tokens_.empty()) throw SegmentationError("token sequence is empty");
    std::size_t next = 0;
    std::size_t audio_segments = 0;
    for (const auto& s : segments_) {
        if (s.start != next || s.end_inclusive < s.start) {
            throw SegmentationError("segment " + std::string(region_name(s.region)) + " [" +
                                    std::to_string(s.start) + ", " +
                                    std::to_string(s.end_inclusive) +
                                    "] is not contiguous with position " + std::to_string(next));
        }
        if (s.region == Region::Audio) ++audio_segments;
        next = s.end_inclusive + 1;
    }
    if (next != tokens_.size()) {
        throw SegmentationError("segments cover " + std::to_string(next) + " of " +
                                std::to_string(tokens_.size()) + " positions");
    }
    if (audio_segments != 1) {
        throw SegmentationError("expected exactly one audio segment, found " +
                                std::to_string(audio_segments));
    }
}

AudioSpan TokenSequence::audio_span() const {
    for (const auto& s : segments_) {
        if (s.region == Region::Audio) return {s.start, s.end_inclusive};
    }
    throw SegmentationError("sequence has no audio segment");
}

void TokenSequence::append_generated(std::size_t token) {
    const std::size_t pos = tokens_.size();
    tokens_.push_back(token);
    if (!segments_.empty() && segments_.back().region == Region::Generated) {
        segments_.back().end_inclusive = pos;
    } else {
        segments_.push_back({Region::Generated, pos, pos});
    }
}

}  // namespace mata
