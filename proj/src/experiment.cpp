#include "mata/experiment.hpp"

#include <fstream>
#include <sstream>

#include "config_kv.hpp"
#include "mata/errors.hpp"

namespace mata {

TokenSequence ExperimentSpec::prompt() const {
    return TokenSequence::from_regions(system, audio, instruction);
}

void ExperimentSpec::validate_against(const ModelConfig& config) const {
    for (const auto* ids : {&system, &audio, &instruction}) {
        for (std::size_t id : *ids) {
            if (id >= config.vocab_size) {
                throw ConfigError("token id " + std::to_string(id) + " is outside vocabulary of " +
                                  std::to_string(config.vocab_size));
            }
        }
    }
    if (stop_token && *stop_token >= config.vocab_size) {
        throw ConfigError("stop_token " + std::to_string(*stop_token) +
                          " is outside vocabulary of " + std::to_string(config.vocab_size));
    }
    intervention.validate(config.n_layers);
}

ExperimentSpec parse_experiment_text(std::string_view text, const std::string& source,
                                     const std::filesystem::path& base_dir) {
    ExperimentSpec spec;
    std::string model_config_key;
    int last_region = -1;
    bool saw_audio = false;
    for (const auto& e : detail::parse_kv(text, source)) {
        auto region_order = [&](int order) {
            if (order < last_region) {
                throw ParseError(source, e.line, e.key,
                                 "regions must be listed in system, audio, instruction order");
            }
            last_region = order;
        };
        if (e.key == "model") {
            if (e.value.empty()) throw ParseError(source, e.line, e.key, "empty path");
            std::filesystem::path p(e.value);
            spec.model_path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
        } else if (e.key == "seed") {
            spec.seed = detail::parse_count(e, source);
        } else if (e.key == "system") {
            region_order(0);
            spec.system = detail::parse_count_list(e, source);
        } else if (e.key == "audio") {
            region_order(1);
            spec.audio = detail::parse_count_list(e, source);
            if (spec.audio.empty()) throw ParseError(source, e.line, e.key, "audio region is empty");
            saw_audio = true;
        } else if (e.key == "instruction") {
            region_order(2);
            spec.instruction = detail::parse_count_list(e, source);
        } else if (e.key == "alpha") {
            spec.intervention.alpha = detail::parse_double(e, source);
            if (!(spec.intervention.alpha >= 0.0)) {
                throw ParseError(source, e.line, e.key, "alpha must be >= 0");
            }
        } else if (e.key == "layer_start") {
            spec.intervention.layer_start = detail::parse_count(e, source);
        } else if (e.key == "layer_end") {
            spec.intervention.layer_end = detail::parse_count(e, source);
        } else if (e.key == "enabled") {
            spec.intervention.enabled = detail::parse_bool(e, source);
        } else if (e.key == "target_region") {
            if (e.value != "audio") {
                throw ParseError(source, e.line, e.key, "only 'audio' is supported");
            }
        } else if (e.key == "max_new_tokens") {
            spec.max_new_tokens = detail::parse_count(e, source);
            if (spec.max_new_tokens == 0) {
                throw ParseError(source, e.line, e.key, "must be >= 1");
            }
        } else if (e.key == "stop_token") {
            if (e.value == "none") spec.stop_token.reset();
            else spec.stop_token = detail::parse_count(e, source);
        } else {
            if (!detail::apply_config_entry(spec.inline_config, e, source)) {
                throw ParseError(source, e.line, e.key, "unknown experiment key");
            }
            model_config_key = e.key;
        }
    }
    if (!saw_audio) throw ParseError(source, 0, "audio", "missing required audio region");
    if (spec.model_path && !model_config_key.empty()) {
        throw ParseError(source, 0, model_config_key,
                         "inline model config keys cannot be combined with 'model'");
    }
    return spec;
}

ExperimentSpec load_experiment_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open experiment file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_experiment_text(ss.str(), path.string(), path.parent_path());
}

ModelWeights resolve_model(const ExperimentSpec& spec) {
    ModelWeights w = spec.model_path ? load_weights(*spec.model_path)
                                     : gen_synthetic_weights(spec.inline_config, spec.seed);
    spec.validate_against(w.config);
    return w;
}

}  // namespace mata
