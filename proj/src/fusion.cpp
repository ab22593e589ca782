#include "hrf/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "hrf/tensor_ops.hpp"

namespace hrf::fusion {

namespace d = hrf::diff;

namespace {

d::Tensor init_weight(d::Shape shape, std::size_t fan_in, Rng& rng) {
    std::vector<double> v(d::shape_numel(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : v) x = rng.uniform(-a, a);
    return d::Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

void FusionParams::init(int global_dim, int point_dim, int pixel_dim,
                        const FusionConfig& cfg, Rng& rng) {
    const std::size_t c = static_cast<std::size_t>(cfg.token_channels);
    const int dims[3] = {global_dim, point_dim, pixel_dim};
    for (int i = 0; i < 3; ++i) {
        proj_w[i] = init_weight({static_cast<std::size_t>(dims[i]), c}, dims[i], rng);
        proj_b[i] = d::Tensor::zeros({c}, true);
    }
    wq = init_weight({c, c}, c, rng);
    bq = d::Tensor::zeros({c}, true);
    wk = init_weight({c, c}, c, rng);
    bk = d::Tensor::zeros({c}, true);
    wv = init_weight({c, c}, c, rng);
    bv = d::Tensor::zeros({c}, true);
    wo = init_weight({c, c}, c, rng);
    bo = d::Tensor::zeros({c}, true);
}

TokenSet make_tokens(const d::Tensor& f_global, const d::Tensor& f_point,
                     const d::Tensor& f_pixel, const FusionParams& p,
                     const FusionConfig& cfg) {
    if (f_global.rank() != 2 || f_point.rank() != 2 || f_pixel.rank() != 2 ||
        f_global.shape()[0] != f_point.shape()[0] ||
        f_global.shape()[0] != f_pixel.shape()[0])
        throw std::invalid_argument("make_tokens: expects [P,*] feature batches");
    const std::size_t n = f_global.shape()[0];
    const std::size_t c = static_cast<std::size_t>(cfg.token_channels);

    d::Tensor tg = d::linear(f_global, p.proj_w[0], p.proj_b[0]);
    d::Tensor tp = d::linear(f_point, p.proj_w[1], p.proj_b[1]);
    d::Tensor tx = d::linear(f_pixel, p.proj_w[2], p.proj_b[2]);
    const std::array<d::Tensor, 3> parts = {
        d::reshape(tg, {n, 1, c}), d::reshape(tp, {n, 1, c}),
        d::reshape(tx, {n, 1, c})};
    return {d::concat(parts, 1)};
}

AttentionOut self_attention(const TokenSet& in, const FusionParams& p,
                            const FusionConfig& cfg) {
    const std::size_t c = static_cast<std::size_t>(cfg.token_channels);
    const int heads = cfg.heads;
    if (heads < 1 || cfg.token_channels % heads != 0)
        throw std::invalid_argument(
            "self_attention: token channels " + std::to_string(cfg.token_channels) +
            " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t hd = c / static_cast<std::size_t>(heads);
    const std::size_t n = in.points();
    if (in.tokens.shape()[1] != 3 || in.tokens.shape()[2] != c)
        throw std::invalid_argument("self_attention: expects [P,3,C] tokens");

    d::Tensor x2 = d::reshape(in.tokens, {n * 3, c});
    d::Tensor q = d::linear(x2, p.wq, p.bq);
    d::Tensor k = d::linear(x2, p.wk, p.bk);
    d::Tensor v = d::linear(x2, p.wv, p.bv);

    std::vector<d::Tensor> head_out, head_w;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < heads; ++h) {
        auto slice = [&](const d::Tensor& t) {
            return d::reshape(d::narrow(t, 1, h * hd, hd), {n, 3, hd});
        };
        d::Tensor qh = slice(q), kh = slice(k), vh = slice(v);
        d::Tensor logits = d::scale(d::bmm(qh, d::transpose_last2(kh)), inv_scale);
        d::Tensor w = d::softmax_lastaxis(logits);  // [P,3,3]
        head_w.push_back(d::reshape(w, {1, n, 3, 3}));
        head_out.push_back(d::reshape(d::bmm(w, vh), {n * 3, hd}));
    }
    d::Tensor cat = heads == 1 ? head_out[0] : d::concat(head_out, 1);
    d::Tensor mixed = d::linear(cat, p.wo, p.bo);
    d::Tensor out = d::add(mixed, x2);  // residual

    AttentionOut res;
    res.tokens = {d::reshape(out, {n, 3, c})};
    res.weights = heads == 1 ? head_w[0] : d::concat(head_w, 0);
    return res;
}

diff::Tensor fuse(const TokenSet& attended, const FusionConfig& cfg) {
    const std::size_t n = attended.points();
    const std::size_t c = attended.channels();
    if (cfg.reduction == Reduction::kMean)
        return d::mean(attended.tokens, 1);  // [P, C]
    return d::reshape(attended.tokens, {n, 3 * c});
}

std::size_t fused_dim(const FusionConfig& cfg) {
    return cfg.reduction == Reduction::kMean
               ? static_cast<std::size_t>(cfg.token_channels)
               : 3 * static_cast<std::size_t>(cfg.token_channels);
}

}  // namespace hrf::fusion
