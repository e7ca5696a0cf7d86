#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mata/intervention.hpp"
#include "mata/model.hpp"
#include "mata/sequence.hpp"

namespace mata {

/// One decode experiment, read from a "key = value" text file:
///
///   model = toy.mata          # weight file, relative to the experiment file
///   seed = 7                  # used with inline config keys when `model` is absent
///   system = 1 2 3            # region token ids, listed in system, audio, instruction order
///   audio = 10 11 12
///   instruction = 4 5
///   alpha = 0.1               # intervention fields default to alpha 0.1, layers [10, 20)
///   layer_start = 10
///   layer_end = 20
///   enabled = true
///   max_new_tokens = 16
///   stop_token = 3            # or "none"
///
/// Inline model keys (n_layers, n_heads, d_model, d_ff, vocab_size, max_seq_len, norm_eps)
/// are accepted only without `model`.
struct ExperimentSpec {
    std::optional<std::filesystem::path> model_path;
    ModelConfig inline_config;
    std::uint64_t seed = 0;
    std::vector<std::size_t> system;
    std::vector<std::size_t> audio;
    std::vector<std::size_t> instruction;
    InterventionSpec intervention;
    std::size_t max_new_tokens = 16;
    std::optional<std::size_t> stop_token;

    TokenSequence prompt() const;

    /// Throws ConfigError when token ids or the intervention do not fit `config`.
    void validate_against(const ModelConfig& config) const;
};

ExperimentSpec parse_experiment_text(std::string_view text, const std::string& source_name,
                                     const std::filesystem::path& base_dir = {});
ExperimentSpec load_experiment_file(const std::filesystem::path& path);

/// Loads the referenced weight file, or generates weights from the inline config and seed.
ModelWeights resolve_model(const ExperimentSpec& spec);

}  // namespace mata
