#include "mata/engine.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "mata/errors.hpp"
#include "support/constructed.hpp"
#include "support/oracles.hpp"

namespace mata {
namespace {

ModelConfig four_layer_config() {
    ModelConfig c;
    c.n_layers = 4;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_ff = 24;
    c.vocab_size = 32;
    c.max_seq_len = 64;
    return c;
}

TokenSequence sample_prompt() {
    const std::vector<std::size_t> sys{1, 2, 3}, audio{10, 11, 12, 13, 14}, instr{4, 5};
    return TokenSequence::from_regions(sys, audio, instr);
}

InterventionSpec band(double alpha, std::size_t start, std::size_t end) {
    InterventionSpec s;
    s.alpha = alpha;
    s.layer_start = start;
    s.layer_end = end;
    return s;
}

TEST(AttentionScoresTest, ScaledDotProduct) {
    const auto s = attention_scores(Matrix{{1, 0}}, Matrix{{1, 0}, {0, 1}}, 2);
    EXPECT_DOUBLE_EQ(s(0, 0), 1.0 / std::sqrt(2.0));
    EXPECT_EQ(s(0, 1), 0.0);
    EXPECT_EQ(attention_scores(Matrix(2, 2), Matrix(3, 2), 2), Matrix(2, 3));
    EXPECT_EQ(attention_scores(Matrix{{2}}, Matrix{{3}}, 1)(0, 0), 6.0);
}

TEST(AttentionScoresTest, DimensionMismatch) {
    EXPECT_THROW(attention_scores(Matrix(1, 2), Matrix(1, 3), 2), ShapeError);
    EXPECT_THROW(attention_scores(Matrix(1, 2), Matrix(1, 2), 4), ShapeError);
}

TEST(CausalMaskTest, CachedDecodeRowIsUnmasked) {
    ScoreMatrix s{0, 0, 4, Matrix(1, 5, 1.0)};
    apply_causal_mask(s);
    for (double v : s.values.data()) EXPECT_EQ(v, 1.0);
}

TEST(CausalMaskTest, PrefillMasksUpperTriangle) {
    ScoreMatrix s{0, 0, 0, Matrix(3, 3, 1.0)};
    apply_causal_mask(s);
    int masked = 0;
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            if (s.values(r, c) == kMaskSentinel) {
                ++masked;
                EXPECT_GT(c, r);
            }
        }
    }
    EXPECT_EQ(masked, 3);
}

TEST(CausalMaskTest, OffsetRows) {
    ScoreMatrix s{0, 0, 3, Matrix(2, 5, 1.0)};
    apply_causal_mask(s);
    EXPECT_EQ(s.values(0, 4), kMaskSentinel);
    EXPECT_EQ(s.values(1, 4), 1.0);
    EXPECT_EQ(s.values(0, 3), 1.0);
}

TEST(CausalMaskTest, MisalignedOffset) {
    ScoreMatrix s{0, 0, 2, Matrix(2, 5)};
    EXPECT_THROW(apply_causal_mask(s), ShapeError);
}

TEST(AttentionForwardTest, IdentityHookMatchesNoHook) {
    const auto w = gen_synthetic_weights(four_layer_config(), 4);
    const auto seq = sample_prompt();
    const auto plain = prefill_with_hook(seq, w, {});
    const auto with_identity = prefill_with_hook(seq, w, [](ScoreMatrix&) {});
    EXPECT_EQ(plain.logits, with_identity.logits);
}

TEST(AttentionForwardTest, HookSeesMaskedPreSoftmaxScoresOncePerHead) {
    const auto w = gen_synthetic_weights(four_layer_config(), 4);
    const auto seq = sample_prompt();
    std::map<std::pair<std::size_t, std::size_t>, int> calls;
    prefill_with_hook(seq, w, [&](ScoreMatrix& s) {
        ++calls[{s.layer, s.head}];
        EXPECT_EQ(s.values.rows(), seq.size());
        EXPECT_EQ(s.values(0, 1), kMaskSentinel);
    });
    EXPECT_EQ(calls.size(), 8u);
    for (const auto& [key, n] : calls) EXPECT_EQ(n, 1);
}

TEST(AttentionForwardTest, BoostedRowStillNormalizes) {
    const auto w = gen_synthetic_weights(four_layer_config(), 4);
    const auto seq = sample_prompt();
    const auto spec = band(0.8, 0, 4);
    std::size_t n_rows = 0;
    prefill(seq, w, spec, [&](std::size_t, std::size_t, std::span<const double> row) {
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
        ++n_rows;
    });
    EXPECT_EQ(n_rows, 8u);
}

TEST(AttentionForwardTest, RecorderCalledPerHeadPerLayerPerStep) {
    const auto w = gen_synthetic_weights(four_layer_config(), 4);
    std::size_t calls = 0;
    const auto result = decode_greedy(sample_prompt(), w, band(0.1, 1, 3), 5, std::nullopt,
                                      [&](std::size_t, std::size_t, std::span<const double>) {
                                          ++calls;
                                      });
    EXPECT_EQ(calls, 5u * 4u * 2u);
    EXPECT_EQ(result.records.size(), calls);
}

Matrix first_embeddings(const ModelWeights& w, std::size_t n) {
    Matrix x(n, w.config.d_model);
    for (std::size_t r = 0; r < n; ++r) {
        auto src = w.token_embedding.row(r);
        std::copy(src.begin(), src.end(), x.row(r).begin());
    }
    return x;
}

TEST(LayerForwardTest, ZeroMlpAddsNothingToResidual) {
    auto w = gen_synthetic_weights(four_layer_config(), 2);
    w.layers[0].w_down = Matrix(w.config.d_ff, w.config.d_model);
    const Matrix x = first_embeddings(w, 8);

    Matrix normed(8, w.config.d_model);
    for (std::size_t r = 0; r < 8; ++r) {
        const auto n = rms_norm(x.row(r), w.layers[0].attn_norm_gain, w.config.norm_eps);
        std::copy(n.begin(), n.end(), normed.row(r).begin());
    }
    KVCache c1(w.config), c2(w.config);
    Matrix expected = attention_forward(normed, 0, w, c1, {}, {});
    for (std::size_t i = 0; i < expected.size(); ++i) expected.data()[i] += x.data()[i];
    EXPECT_EQ(layer_forward(x, 0, w, c2, {}, {}), expected);

    w.layers[0].wo = Matrix(w.config.d_model, w.config.d_model);
    KVCache c3(w.config);
    EXPECT_EQ(layer_forward(x, 0, w, c3, {}, {}), x);
}

TEST(LayerForwardTest, ShapePreservedAndFinite) {
    const auto w = gen_synthetic_weights(ModelConfig{}, 5);
    Matrix input(6, w.config.d_model);
    for (std::size_t r = 0; r < 6; ++r) {
        auto src = w.token_embedding.row(r * 7);
        std::copy(src.begin(), src.end(), input.row(r).begin());
    }
    KVCache cache(w.config);
    const Matrix out = layer_forward(input, 0, w, cache, {}, {});
    EXPECT_EQ(out.rows(), 6u);
    EXPECT_EQ(out.cols(), 64u);
    for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(PrefillTest, ZeroAlphaMatchesHookFree) {
    const auto w = gen_synthetic_weights(four_layer_config(), 6);
    const auto seq = sample_prompt();
    const auto base = prefill_with_hook(seq, w, {});
    EXPECT_EQ(prefill(seq, w, band(0.0, 0, 4)).logits, base.logits);
    EXPECT_EQ(prefill(seq, w, make_noop()).logits, base.logits);
}

TEST(PrefillTest, CacheLengthEqualsPromptLength) {
    const auto w = gen_synthetic_weights(four_layer_config(), 6);
    const auto seq = sample_prompt();
    const auto r = prefill(seq, w, band(0.1, 1, 2));
    EXPECT_EQ(r.cache.length(), seq.size());
    EXPECT_EQ(r.logits.size(), w.config.vocab_size);
}

TEST(PrefillTest, OverlongSequence) {
    auto c = four_layer_config();
    c.max_seq_len = 8;
    const auto w = gen_synthetic_weights(c, 6);
    EXPECT_THROW(prefill(sample_prompt(), w, make_noop()), CapacityError);
}

TEST(PrefillTest, TokenOutsideVocabulary) {
    const auto w = gen_synthetic_weights(four_layer_config(), 6);
    const std::vector<std::size_t> audio{99};
    EXPECT_THROW(prefill(TokenSequence::from_regions({}, audio, {}), w, make_noop()), ConfigError);
}

TEST(DecodeStepTest, MatchesFullRecompute) {
    const auto w = gen_synthetic_weights(four_layer_config(), 12);
    for (const auto& spec : {make_noop(), band(0.15, 1, 3)}) {
        TokenSequence seq = sample_prompt();
        const std::size_t prompt_len = seq.size();
        auto pre = prefill(seq, w, spec);
        std::size_t token = argmax_tie_low(pre.logits);
        for (int step = 0; step < 6; ++step) {
            const std::size_t before = pre.cache.length();
            const auto cached = decode_step(pre.cache, token, before, w, spec, seq.audio_span());
            EXPECT_EQ(pre.cache.length(), before + 1);
            seq.append_generated(token);
            const auto oracle = testing::stepwise_boost_oracle(
                spec.enabled ? spec.alpha : 0.0, spec.layer_start, spec.layer_end,
                seq.audio_span(), prompt_len);
            const auto full = prefill_with_hook(seq, w, oracle).logits;
            for (std::size_t v = 0; v < full.size(); ++v) ASSERT_NEAR(cached[v], full[v], 1e-9);
            token = argmax_tie_low(cached);
        }
    }
}

TEST(DecodeStepTest, LastRowOnlyRecomputeDiffersOnceCacheHoldsBoostedRows) {
    // Re-running the grown sequence with only its final row boosted is a different
    // computation: the cached keys/values of earlier final tokens were boosted.
    const auto w = gen_synthetic_weights(four_layer_config(), 12);
    const auto spec = band(0.15, 1, 3);
    TokenSequence seq = sample_prompt();
    auto pre = prefill(seq, w, spec);
    const std::size_t token = argmax_tie_low(pre.logits);
    const auto cached = decode_step(pre.cache, token, seq.size(), w, spec, seq.audio_span());
    seq.append_generated(token);
    EXPECT_NE(prefill(seq, w, spec).logits, cached);
}

TEST(DecodeStepTest, ZeroAlphaStepMatchesBaseline) {
    const auto w = gen_synthetic_weights(four_layer_config(), 12);
    const auto seq = sample_prompt();
    auto a = prefill_with_hook(seq, w, {});
    auto b = prefill(seq, w, band(0.0, 0, 4));
    EXPECT_EQ(decode_step_with_hook(a.cache, 7, seq.size(), w, {}),
              decode_step(b.cache, 7, seq.size(), w, band(0.0, 0, 4), seq.audio_span()));
}

TEST(DecodeStepTest, WrongPositionAndCapacity) {
    auto c = four_layer_config();
    c.max_seq_len = 10;  // exactly the prompt length
    const auto w = gen_synthetic_weights(c, 1);
    const auto seq = sample_prompt();
    auto r = prefill(seq, w, make_noop());
    EXPECT_THROW(decode_step(r.cache, 1, 3, w, make_noop(), seq.audio_span()), ShapeError);
    EXPECT_THROW(decode_step(r.cache, 1, 10, w, make_noop(), seq.audio_span()), CapacityError);
    EXPECT_EQ(r.cache.length(), 10u);
}

TEST(DecodeGreedyTest, Deterministic) {
    const auto w = gen_synthetic_weights(four_layer_config(), 21);
    const auto a = decode_greedy(sample_prompt(), w, band(0.1, 1, 3), 8);
    const auto b = decode_greedy(sample_prompt(), w, band(0.1, 1, 3), 8);
    EXPECT_EQ(a.generated, b.generated);
    EXPECT_EQ(a.step_logits, b.step_logits);
    EXPECT_EQ(a.generated.size(), 8u);
    EXPECT_EQ(a.sequence.size(), sample_prompt().size() + 8);
    EXPECT_EQ(a.sequence.segments().back().region, Region::Generated);
}

TEST(DecodeGreedyTest, SingleTokenBudget) {
    const auto w = gen_synthetic_weights(four_layer_config(), 21);
    const auto r = decode_greedy(sample_prompt(), w, InterventionSpec{band(0.1, 0, 4)}, 1);
    EXPECT_EQ(r.generated.size(), 1u);
    EXPECT_THROW(decode_greedy(sample_prompt(), w, make_noop(), 0), ConfigError);
}

TEST(DecodeGreedyTest, ImmediateStopTokenIsIncluded) {
    const auto w = gen_synthetic_weights(four_layer_config(), 21);
    const auto first = argmax_tie_low(prefill(sample_prompt(), w, make_noop()).logits);
    const auto r = decode_greedy(sample_prompt(), w, make_noop(), 10, first);
    ASSERT_EQ(r.generated.size(), 1u);
    EXPECT_EQ(r.generated[0], first);
}

TEST(DecodeGreedyTest, RowsNormalizedAndMaskedWeightsZero) {
    const auto w = gen_synthetic_weights(four_layer_config(), 3);
    const auto seq = sample_prompt();
    for (const auto& spec : {make_noop(), band(0.15, 0, 4)}) {
        prefill_with_hook(seq, w, [&](ScoreMatrix& s) {
            make_mata_hook(spec, seq.audio_span())(s);
            for (std::size_t r = 0; r < s.values.rows(); ++r) {
                const auto p = softmax_row(s.values.row(r));
                EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
                for (std::size_t j = r + 1; j < p.size(); ++j) EXPECT_EQ(p[j], 0.0);
            }
        });
        const auto d = decode_greedy(seq, w, spec, 6);
        for (const auto& rec : d.records) {
            EXPECT_NEAR(std::accumulate(rec.row.begin(), rec.row.end(), 0.0), 1.0, 1e-9);
        }
    }
}

// Captures post-hook scores for every (layer, head).
using ScoreLog = std::map<std::pair<std::size_t, std::size_t>, Matrix>;

ScoreLog capture_scores(const TokenSequence& seq, const ModelWeights& w, const ScoreHook& inner,
                        ScoreLog* pre_hook = nullptr) {
    ScoreLog log;
    prefill_with_hook(seq, w, [&](ScoreMatrix& s) {
        if (pre_hook) (*pre_hook)[{s.layer, s.head}] = s.values;
        if (inner) inner(s);
        log[{s.layer, s.head}] = s.values;
    });
    return log;
}

TEST(HookLocality, ModifiedEntriesAreExactlyTheTargetSet) {
    const auto w = gen_synthetic_weights(four_layer_config(), 40);
    const auto seq = sample_prompt();
    const auto span = seq.audio_span();
    const std::size_t last = seq.size() - 1;
    const auto spec = band(0.1, 1, 3);

    ScoreLog before;
    const auto after = capture_scores(seq, w, make_mata_hook(spec, span), &before);
    const auto hook_free = capture_scores(seq, w, {});
    for (const auto& [key, m] : after) {
        const auto [layer, head] = key;
        const Matrix& pre = before.at(key);
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                const bool targeted = is_active(spec, layer) && r == last && j >= span.start &&
                                      j <= span.end_inclusive && pre(r, j) != 0.0;
                EXPECT_EQ(m(r, j) != pre(r, j), targeted) << layer << "," << head << "," << r << "," << j;
                // Against the hook-free run: nothing changes upstream of the first active
                // layer, and no row other than the last ever changes.
                if (layer < spec.layer_start || r != last) {
                    ASSERT_EQ(std::bit_cast<std::uint64_t>(m(r, j)),
                              std::bit_cast<std::uint64_t>(hook_free.at(key)(r, j)));
                }
                if (layer == spec.layer_start && !targeted) {
                    ASSERT_EQ(std::bit_cast<std::uint64_t>(m(r, j)),
                              std::bit_cast<std::uint64_t>(hook_free.at(key)(r, j)));
                }
            }
        }
    }
}

TEST(InterventionEffect, PositiveScoresRaiseAudioMassInActiveLayers) {
    const auto w = testing::constructed_positive_model(4, 3);
    const std::vector<std::size_t> sys{1, 2}, audio{30, 31, 32, 33}, instr{5, 6, 7};
    const auto seq = TokenSequence::from_regions(sys, audio, instr);
    const auto span = seq.audio_span();

    auto audio_mass_per_layer = [&](const ScoreHook& hook) {
        std::map<std::size_t, double> mass;
        prefill_with_hook(seq, w, hook, [&](std::size_t layer, std::size_t, std::span<const double> row) {
            mass[layer] += testing::span_mass(row, span.start, span.end_inclusive) / 2.0;
        });
        return mass;
    };
    ScoreLog raw;
    capture_scores(seq, w, {}, &raw);
    for (const auto& [key, m] : raw) {
        for (std::size_t j = 0; j < m.cols(); ++j) EXPECT_GT(m(m.rows() - 1, j), 0.0);
    }
    const auto base = audio_mass_per_layer({});
    const auto boosted = audio_mass_per_layer(make_mata_hook(band(0.1, 1, 3), span));
    for (std::size_t l = 0; l < 4; ++l) {
        if (l == 1 || l == 2) EXPECT_GT(boosted.at(l), base.at(l));
        else EXPECT_EQ(boosted.at(l), base.at(l));
    }
}

}  // namespace
}  // namespace mata
