#pragma once

// Hand-built model whose raw attention scores are strictly positive at every layer.
//
// Each token embedding puts all of its energy, per head, into the lowest-frequency
// rotary pair with both components positive. Wq = Wk = I, Wo = 0 and W_down = 0, so
// the residual stream never changes and every layer sees the embeddings. Two vectors
// whose angles lie in [atan(1/3), atan(3)] differ by under 0.93 rad, and the rotary
// offset at this frequency adds at most 0.001 rad per position, so every q.k is > 0
// for sequences shorter than ~600.

#include <cstdint>
#include <vector>

#include "mata/model.hpp"

namespace mata::testing {

inline ModelConfig constructed_config(std::size_t n_layers) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.n_heads = 2;
    c.d_model = 16;  // d_head 8, lowest-frequency pair at columns 6, 7 of each head
    c.d_ff = 8;
    c.vocab_size = 64;
    c.max_seq_len = 128;
    return c;
}

inline ModelWeights constructed_positive_model(std::size_t n_layers, std::uint64_t seed) {
    const ModelConfig c = constructed_config(n_layers);
    ModelWeights w = gen_synthetic_weights(c, seed);
    Xorshift64Star rng(seed ^ 0x5eedULL);
    const std::size_t d_head = c.d_head();
    for (std::size_t t = 0; t < c.vocab_size; ++t) {
        auto row = w.token_embedding.row(t);
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t h = 0; h < c.n_heads; ++h) {
            row[h * d_head + d_head - 2] = 0.5 + rng.uniform01();
            row[h * d_head + d_head - 1] = 0.5 + rng.uniform01();
        }
    }
    for (auto& l : w.layers) {
        l.wq = Matrix::identity(c.d_model);
        l.wk = Matrix::identity(c.d_model);
        l.wo = Matrix(c.d_model, c.d_model);
        l.w_down = Matrix(c.d_ff, c.d_model);
        l.attn_norm_gain.assign(c.d_model, 1.0);
        l.mlp_norm_gain.assign(c.d_model, 1.0);
    }
    w.final_norm_gain.assign(c.d_model, 1.0);
    return w;
}

}  // namespace mata::testing
