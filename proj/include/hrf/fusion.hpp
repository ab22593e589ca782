#pragma once

// Feature fusion transformer: the three per-point features become tokens
// and are fused by one multi-head self-attention layer with a residual
// connection. Token order is fixed: (global, point, pixel).

#include <vector>

#include "hrf/rng.hpp"
#include "hrf/tensor.hpp"

namespace hrf::fusion {

enum class Reduction { kConcat, kMean };

struct FusionConfig {
    int token_channels = 32;  // C
    int heads = 4;            // must divide C
    Reduction reduction = Reduction::kConcat;
};

struct FusionParams {
    // Per-feature projections to C channels.
    diff::Tensor proj_w[3], proj_b[3];
    // Attention maps and the output mix.
    diff::Tensor wq, bq, wk, bk, wv, bv, wo, bo;

    void init(int global_dim, int point_dim, int pixel_dim,
              const FusionConfig& cfg, Rng& rng);
};

// Batched token sets: [P, 3, C].
struct TokenSet {
    diff::Tensor tokens;
    std::size_t points() const { return tokens.shape()[0]; }
    std::size_t channels() const { return tokens.shape()[2]; }
};

TokenSet make_tokens(const diff::Tensor& f_global, const diff::Tensor& f_point,
                     const diff::Tensor& f_pixel, const FusionParams& p,
                     const FusionConfig& cfg);

struct AttentionOut {
    TokenSet tokens;           // after heads, mix and residual
    diff::Tensor weights;      // [heads, P, 3, 3], rows sum to 1
};

AttentionOut self_attention(const TokenSet& in, const FusionParams& p,
                            const FusionConfig& cfg);

// Concatenated (or mean-pooled) attended tokens: [P, 3C] or [P, C].
diff::Tensor fuse(const TokenSet& attended, const FusionConfig& cfg);

std::size_t fused_dim(const FusionConfig& cfg);

}  // namespace hrf::fusion
