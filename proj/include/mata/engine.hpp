#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mata/intervention.hpp"
#include "mata/model.hpp"
#include "mata/sequence.hpp"
#include "mata/telemetry.hpp"
#include "mata/tensor.hpp"

namespace mata {

/// Scaled pre-softmax scores of one head in one layer. Row r is the query at
/// absolute position query_offset + r; column j is the key at position j.
struct ScoreMatrix {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query_offset = 0;
    Matrix values;
};

/// Called once per (layer, head) with post-mask, pre-softmax scores; may edit them in place.
using ScoreHook = std::function<void(ScoreMatrix&)>;

/// Receives the post-softmax row of the last query position, once per (layer, head).
using AttentionRecorder =
    std::function<void(std::size_t layer, std::size_t head, std::span<const double> row)>;

/// Per-layer, per-head key and value rows (RoPE already applied to keys).
class KVCache {
public:
    explicit KVCache(const ModelConfig& config);

    /// Number of positions committed for every layer and head.
    std::size_t length() const noexcept { return length_; }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t n_layers() const noexcept { return n_layers_; }
    std::size_t n_heads() const noexcept { return n_heads_; }

    const Matrix& keys(std::size_t layer, std::size_t head) const;
    const Matrix& values(std::size_t layer, std::size_t head) const;

    /// Stages rows for one (layer, head). They become visible to that head at once.
    void append(std::size_t layer, std::size_t head, const Matrix& k, const Matrix& v);

    /// Checks every (layer, head) holds the same number of rows and adopts it as length().
    void commit();

private:
    std::size_t index(std::size_t layer, std::size_t head) const;

    std::size_t n_layers_;
    std::size_t n_heads_;
    std::size_t d_head_;
    std::size_t capacity_;
    std::size_t length_ = 0;
    std::vector<Matrix> keys_;
    std::vector<Matrix> values_;
};

/// Q K^T / sqrt(d_k), unmasked.
Matrix attention_scores(const Matrix& q, const Matrix& k, std::size_t d_k);

/// Sets entries whose key index exceeds the query's absolute position to kMaskSentinel.
/// Requires query_offset + rows == cols.
void apply_causal_mask(ScoreMatrix& scores);

/// Multi-head causal self-attention for `x` (already normed) at absolute positions
/// cache.length() .. cache.length() + x.rows() - 1. Appends this layer's keys and values
/// to the cache; the caller commits once every layer has run.
Matrix attention_forward(const Matrix& x, std::size_t layer, const ModelWeights& weights,
                         KVCache& cache, const ScoreHook& hook, const AttentionRecorder& recorder);

/// Pre-norm residual block: h = x + attn(norm(x)); out = h + mlp(norm(h)), where
/// mlp(u) = (silu(u W_gate) * (u W_in)) W_down.
Matrix layer_forward(const Matrix& x, std::size_t layer, const ModelWeights& weights,
                     KVCache& cache, const ScoreHook& hook, const AttentionRecorder& recorder);

/// Hook applying the MATA transform for `spec` to whichever row is the last query.
ScoreHook make_mata_hook(const InterventionSpec& spec, AudioSpan audio);

struct PrefillResult {
    std::vector<double> logits;  // next-token logits at the last prompt position
    KVCache cache;
};

PrefillResult prefill(const TokenSequence& seq, const ModelWeights& weights,
                      const InterventionSpec& spec, const AttentionRecorder& recorder = {});

/// Same as prefill with an arbitrary (possibly empty) hook in place of the MATA hook.
PrefillResult prefill_with_hook(const TokenSequence& seq, const ModelWeights& weights,
                                const ScoreHook& hook, const AttentionRecorder& recorder = {});

/// Single-position forward for `last_token` at `absolute_pos` == cache.length().
std::vector<double> decode_step(KVCache& cache, std::size_t last_token, std::size_t absolute_pos,
                                const ModelWeights& weights, const InterventionSpec& spec,
                                AudioSpan audio, const AttentionRecorder& recorder = {});

std::vector<double> decode_step_with_hook(KVCache& cache, std::size_t last_token,
                                          std::size_t absolute_pos, const ModelWeights& weights,
                                          const ScoreHook& hook,
                                          const AttentionRecorder& recorder = {});

struct DecodeResult {
    TokenSequence sequence;               // prompt plus a Generated segment
    std::vector<std::size_t> generated;   // includes the stop token if one was produced
    std::vector<std::vector<double>> step_logits;
    std::vector<AttentionRecord> records; // last-row attention, every step/layer/head
};

/// Greedy decoding. Step 0 is the prefill; each later step feeds back the previous
/// token. Stops after max_new_tokens tokens or right after emitting stop_token.
DecodeResult decode_greedy(const TokenSequence& seq, const ModelWeights& weights,
                           const InterventionSpec& spec, std::size_t max_new_tokens,
                           std::optional<std::size_t> stop_token = std::nullopt,
                           const AttentionRecorder& recorder = {});

DecodeResult decode_greedy_with_hook(const TokenSequence& seq, const ModelWeights& weights,
                                     const ScoreHook& hook, std::size_t max_new_tokens,
                                     std::optional<std::size_t> stop_token = std::nullopt,
                                     const AttentionRecorder& recorder = {});

}  // namespace mata
