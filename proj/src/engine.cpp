#include "mata/engine.hpp"

#include <cmath>
#include <string>

#include "mata/errors.hpp"

namespace mata {

KVCache::KVCache(const ModelConfig& config)
    : n_layers_(config.n_layers),
      n_heads_(config.n_heads),
      d_head_(config.d_head()),
      capacity_(config.max_seq_len),
      keys_(config.n_layers * config.n_heads, Matrix(0, config.d_head())),
      values_(config.n_layers * config.n_heads, Matrix(0, config.d_head())) {}

std::size_t KVCache::index(std::size_t layer, std::size_t head) const {
    if (layer >= n_layers_ || head >= n_heads_) {
        throw ShapeError("kv cache has no slot for layer " + std::to_string(layer) + ", head " +
                         std::to_string(head));
    }
    return layer * n_heads_ + head;
}

const Matrix& KVCache::keys(std::size_t layer, std::size_t head) const {
    return keys_[index(layer, head)];
}

const Matrix& KVCache::values(std::size_t layer, std::size_t head) const {
    return values_[index(layer, head)];
}

void KVCache::append(std::size_t layer, std::size_t head, const Matrix& k, const Matrix& v) {
    const std::size_t i = index(layer, head);
    if (k.cols() != d_head_ || v.cols() != d_head_ || k.rows() != v.rows()) {
        throw ShapeError("kv append expects matching Nx" + std::to_string(d_head_) +
                         " keys and values, got " + k.shape_string() + " and " + v.shape_string());
    }
    if (keys_[i].rows() + k.rows() > capacity_) {
        throw CapacityError("kv cache capacity " + std::to_string(capacity_) + " exceeded");
    }
    keys_[i].append_rows(k.data());
    values_[i].append_rows(v.data());
}

void KVCache::commit() {
    const std::size_t rows = keys_.front().rows();
    for (const auto& k : keys_) {
        if (k.rows() != rows) {
            throw ShapeError("kv cache layers disagree on length (" + std::to_string(rows) +
                             " vs " + std::to_string(k.rows()) + ")");
        }
    }
    length_ = rows;
}

Matrix attention_scores(const Matrix& q, const Matrix& k, std::size_t d_k) {
    if (q.cols() != d_k || k.cols() != d_k) {
        throw ShapeError("attention_scores expects d_k=" + std::to_string(d_k) + " columns, got Q " +
                         q.shape_string() + " and K " + k.shape_string());
    }
    Matrix s = matmul_transposed(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
    for (double& v : s.data()) v *= scale;
    return s;
}

void apply_causal_mask(ScoreMatrix& scores) {
    auto& m = scores.values;
    if (scores.query_offset + m.rows() != m.cols()) {
        throw ShapeError("causal mask: query offset " + std::to_string(scores.query_offset) +
                         " plus " + std::to_string(m.rows()) + " rows does not reach " +
                         std::to_string(m.cols()) + " keys");
    }
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t j = scores.query_offset + r + 1; j < m.cols(); ++j) m(r, j) = kMaskSentinel;
    }
}

namespace {

Matrix slice_cols(const Matrix& m, std::size_t first, std::size_t count) {
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r).subspan(first, count);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

Matrix rms_norm_rows(const Matrix& x, std::span<const double> gain, double eps) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto n = rms_norm(x.row(r), gain, eps);
        std::copy(n.begin(), n.end(), out.row(r).begin());
    }
    return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

Matrix embed(std::span<const std::size_t> tokens, const ModelWeights& w) {
    const auto& c = w.config;
    Matrix x(tokens.size(), c.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= c.vocab_size) {
            throw ConfigError("token id " + std::to_string(tokens[i]) + " outside vocabulary of " +
                              std::to_string(c.vocab_size));
        }
        auto src = w.token_embedding.row(tokens[i]);
        std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return x;
}

// Runs every layer over `tokens` placed at cache.length() and returns next-token logits
// for the final row.
std::vector<double> forward(std::span<const std::size_t> tokens, const ModelWeights& w,
                            KVCache& cache, const ScoreHook& hook,
                            const AttentionRecorder& recorder) {
    const auto& c = w.config;
    if (cache.length() + tokens.size() > c.max_seq_len) {
        throw CapacityError("sequence of " + std::to_string(cache.length() + tokens.size()) +
                            " positions exceeds max_seq_len " + std::to_string(c.max_seq_len));
    }
    Matrix x = embed(tokens, w);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        x = layer_forward(x, l, w, cache, hook, recorder);
    }
    cache.commit();
    const auto last = rms_norm(x.row(x.rows() - 1), w.final_norm_gain, c.norm_eps);
    std::vector<double> logits(c.vocab_size, 0.0);
    for (std::size_t k = 0; k < c.d_model; ++k) {
        auto head_row = w.lm_head.row(k);
        for (std::size_t v = 0; v < c.vocab_size; ++v) logits[v] += last[k] * head_row[v];
    }
    return logits;
}

}  // namespace

Matrix attention_forward(const Matrix& x, std::size_t layer, const ModelWeights& weights,
                         KVCache& cache, const ScoreHook& hook, const AttentionRecorder& recorder) {
    const auto& c = weights.config;
    const auto& lw = weights.layers.at(layer);
    const std::size_t d_head = c.d_head();
    const std::size_t offset = cache.length();
    if (cache.keys(layer, 0).rows() != offset) {
        throw ShapeError("layer " + std::to_string(layer) + " cache holds " +
                         std::to_string(cache.keys(layer, 0).rows()) + " rows, expected " +
                         std::to_string(offset));
    }

    const Matrix q = matmul(x, lw.wq);
    const Matrix k = matmul(x, lw.wk);
    const Matrix v = matmul(x, lw.wv);
    Matrix concat(x.rows(), c.d_model);

    for (std::size_t h = 0; h < c.n_heads; ++h) {
        const Matrix qh = rope_apply(slice_cols(q, h * d_head, d_head), offset);
        const Matrix kh = rope_apply(slice_cols(k, h * d_head, d_head), offset);
        cache.append(layer, h, kh, slice_cols(v, h * d_head, d_head));

        ScoreMatrix scores{layer, h, offset, attention_scores(qh, cache.keys(layer, h), d_head)};
        apply_causal_mask(scores);
        if (hook) hook(scores);

        Matrix& probs = scores.values;
        for (std::size_t r = 0; r < probs.rows(); ++r) softmax_row_inplace(probs.row(r));
        if (recorder) recorder(layer, h, probs.row(probs.rows() - 1));

        const Matrix out_h = matmul(probs, cache.values(layer, h));
        for (std::size_t r = 0; r < out_h.rows(); ++r) {
            auto src = out_h.row(r);
            std::copy(src.begin(), src.end(), concat.row(r).begin() + static_cast<std::ptrdiff_t>(h * d_head));
        }
    }
    return matmul(concat, lw.wo);
}

Matrix layer_forward(const Matrix& x, std::size_t layer, const ModelWeights& weights,
                     KVCache& cache, const ScoreHook& hook, const AttentionRecorder& recorder) {
    const auto& c = weights.config;
    const auto& lw = weights.layers.at(layer);

    Matrix h = x;
    add_inplace(h, attention_forward(rms_norm_rows(x, lw.attn_norm_gain, c.norm_eps), layer,
                                     weights, cache, hook, recorder));

    const Matrix up = matmul(rms_norm_rows(h, lw.mlp_norm_gain, c.norm_eps), lw.w_up);
    Matrix act(up.rows(), c.d_ff);
    for (std::size_t r = 0; r < up.rows(); ++r) {
        auto u = up.row(r);
        auto a = act.row(r);
        for (std::size_t j = 0; j < c.d_ff; ++j) {
            const double gate = u[j];
            a[j] = gate / (1.0 + std::exp(-gate)) * u[c.d_ff + j];
        }
    }
    add_inplace(h, matmul(act, lw.w_down));
    return h;
}

ScoreHook make_mata_hook(const InterventionSpec& spec, AudioSpan audio) {
    return [spec, audio](ScoreMatrix& s) {
        if (!is_active(spec, s.layer)) return;
        const std::size_t seq_len = s.values.cols();
        for (std::size_t r = 0; r < s.values.rows(); ++r) {
            mata_transform_inplace(s.values.row(r), spec, s.layer, s.query_offset + r, seq_len,
                                   audio);
        }
    };
}

PrefillResult prefill_with_hook(const TokenSequence& seq, const ModelWeights& weights,
                                const ScoreHook& hook, const AttentionRecorder& recorder) {
    if (seq.size() == 0) throw EmptyInputError("prefill of an empty sequence");
    PrefillResult out{{}, KVCache(weights.config)};
    out.logits = forward(seq.tokens(), weights, out.cache, hook, recorder);
    return out;
}

PrefillResult prefill(const TokenSequence& seq, const ModelWeights& weights,
                      const InterventionSpec& spec, const AttentionRecorder& recorder) {
    spec.validate(weights.config.n_layers);
    return prefill_with_hook(seq, weights, make_mata_hook(spec, seq.audio_span()), recorder);
}

std::vector<double> decode_step_with_hook(KVCache& cache, std::size_t last_token,
                                          std::size_t absolute_pos, const ModelWeights& weights,
                                          const ScoreHook& hook,
                                          const AttentionRecorder& recorder) {
    if (absolute_pos != cache.length()) {
        throw ShapeError("decode position " + std::to_string(absolute_pos) +
                         " does not match cache length " + std::to_string(cache.length()));
    }
    const std::size_t token[] = {last_token};
    return forward(token, weights, cache, hook, recorder);
}

std::vector<double> decode_step(KVCache& cache, std::size_t last_token, std::size_t absolute_pos,
                                const ModelWeights& weights, const InterventionSpec& spec,
                                AudioSpan audio, const AttentionRecorder& recorder) {
    spec.validate(weights.config.n_layers);
    return decode_step_with_hook(cache, last_token, absolute_pos, weights,
                                 make_mata_hook(spec, audio), recorder);
}

DecodeResult decode_greedy_with_hook(const TokenSequence& seq, const ModelWeights& weights,
                                     const ScoreHook& hook, std::size_t max_new_tokens,
                                     std::optional<std::size_t> stop_token,
                                     const AttentionRecorder& recorder) {
    if (max_new_tokens == 0) throw ConfigError("max_new_tokens must be >= 1");
    DecodeResult result{seq, {}, {}, {}};
    std::size_t step = 0;
    const AttentionRecorder capture = [&](std::size_t layer, std::size_t head,
                                          std::span<const double> row) {
        result.records.push_back({step, layer, head, std::vector<double>(row.begin(), row.end())});
        if (recorder) recorder(layer, head, row);
    };

    auto pre = prefill_with_hook(seq, weights, hook, capture);
    KVCache cache = std::move(pre.cache);
    std::vector<double> logits = std::move(pre.logits);
    while (true) {
        const std::size_t token = argmax_tie_low(logits);
        result.generated.push_back(token);
        result.sequence.append_generated(token);
        result.step_logits.push_back(std::move(logits));
        if (result.generated.size() >= max_new_tokens) break;
        if (stop_token && token == *stop_token) break;
        ++step;
        logits = decode_step_with_hook(cache, token, cache.length(), weights, hook, capture);
    }
    return result;
}

DecodeResult decode_greedy(const TokenSequence& seq, const ModelWeights& weights,
                           const InterventionSpec& spec, std::size_t max_new_tokens,
                           std::optional<std::size_t> stop_token, const AttentionRecorder& recorder) {
    spec.validate(weights.config.n_layers);
    return decode_greedy_with_hook(seq, weights, make_mata_hook(spec, seq.audio_span()),
                                   max_new_tokens, stop_token, recorder);
}

}  // namespace mata
