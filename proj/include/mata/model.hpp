#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mata/tensor.hpp"

namespace mata {

struct ModelConfig {
    std::size_t n_layers = 28;
    std::size_t n_heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ff = 128;
    std::size_t vocab_size = 512;
    std::size_t max_seq_len = 512;
    double norm_eps = 1e-6;

    std::size_t d_head() const noexcept { return n_heads == 0 ? 0 : d_model / n_heads; }

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
    Matrix wq;  // d_model x d_model
    Matrix wk;
    Matrix wv;
    Matrix wo;
    std::vector<double> attn_norm_gain;  // d_model
    std::vector<double> mlp_norm_gain;   // d_model
    Matrix w_up;    // d_model x 2*d_ff, columns [0, d_ff) gate, [d_ff, 2*d_ff) up
    Matrix w_down;  // d_ff x d_model

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
    ModelConfig config;
    Matrix token_embedding;  // vocab_size x d_model
    std::vector<LayerWeights> layers;
    std::vector<double> final_norm_gain;  // d_model
    Matrix lm_head;  // d_model x vocab_size

    /// Throws ConfigError if any tensor disagrees with config or holds a non-finite value.
    void validate() const;

    friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// xorshift64* generator, seeded through one splitmix64 round.
///
///   state0 = splitmix64(seed), replaced by 0x9E3779B97F4A7C15 if it is 0
///   next:  x ^= x >> 12; x ^= x << 25; x ^= x >> 27; return x * 0x2545F4914F6CDD1D
///   uniform01: (next() >> 11) * 2^-53
///
/// Only integer ops and one exact scaling, so the stream is identical on every platform.
class Xorshift64Star {
public:
    explicit Xorshift64Star(std::uint64_t seed) noexcept;

    std::uint64_t next() noexcept;
    double uniform01() noexcept;
    /// Uniform in [-bound, +bound).
    double uniform_symmetric(double bound) noexcept;

private:
    std::uint64_t state_;
};

/// Every parameter is uniform in [-1/sqrt(d_model), +1/sqrt(d_model)), drawn in file order:
/// token_embedding; per layer wq, wk, wv, wo, attn_norm_gain, mlp_norm_gain, w_up, w_down;
/// final_norm_gain; lm_head. Matrices are filled row-major.
ModelWeights gen_synthetic_weights(const ModelConfig& config, std::uint64_t seed);

/// Weight file layout, all integers and floats little-endian:
///   "MATA" | u32 version (=1) | u64 n_layers, n_heads, d_model, d_ff, vocab_size, max_seq_len |
///   f64 norm_eps | f64 payload in gen_synthetic_weights draw order.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<std::uint8_t> serialize_weights(const ModelWeights& w);
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

/// Parses "key = value" config text; keys are the ModelConfig field names,
/// unspecified keys keep their defaults.
ModelConfig parse_config_text(std::string_view text, const std::string& source_name);
ModelConfig load_config_file(const std::filesystem::path& path);
std::string format_config_text(const ModelConfig& config);

}  // namespace mata
