#include "hrf/nerf.hpp"

#include <cmath>
#include <stdexcept>

#include "hrf/tensor_ops.hpp"

namespace hrf::nerf {

namespace d = hrf::diff;

namespace {

d::Tensor init_weight(d::Shape shape, std::size_t fan_in, Rng& rng) {
    std::vector<double> v(d::shape_numel(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : v) x = rng.uniform(-a, a);
    return d::Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

void DecoderParams::init(std::size_t fused_dim, const DecoderConfig& cfg,
                         Rng& rng) {
    w.clear();
    b.clear();
    std::size_t in = 2 * 3 * static_cast<std::size_t>(cfg.posenc_xyz) + fused_dim;
    for (int l = 0; l < cfg.layers; ++l) {
        const std::size_t out = static_cast<std::size_t>(cfg.hidden);
        w.push_back(init_weight({in, out}, in, rng));
        b.push_back(d::Tensor::zeros({out}, true));
        in = out;
    }
    sigma_w = init_weight({in, 1}, in, rng);
    sigma_b = d::Tensor::zeros({1}, true);
    rgb_w = init_weight({in, 3}, in, rng);
    rgb_b = d::Tensor::zeros({3}, true);
}

Decoded decode(std::span<const Vector3d> x_norm, const diff::Tensor& f_trans,
               const DecoderParams& p, const DecoderConfig& cfg) {
    const std::size_t n = x_norm.size();
    if (f_trans.shape()[0] != n)
        throw std::invalid_argument("decode: feature batch size mismatch");
    const std::size_t enc_dim = 2 * 3 * static_cast<std::size_t>(cfg.posenc_xyz);
    std::vector<double> enc;
    enc.reserve(n * enc_dim);
    for (const auto& x : x_norm) {
        geom::posenc_append(x.x(), cfg.posenc_xyz, enc);
        geom::posenc_append(x.y(), cfg.posenc_xyz, enc);
        geom::posenc_append(x.z(), cfg.posenc_xyz, enc);
    }
    d::Tensor pe = d::Tensor::from_data({n, enc_dim}, std::move(enc));
    const std::array<d::Tensor, 2> parts = {pe, f_trans};
    d::Tensor h = d::concat(parts, 1);
    for (std::size_t l = 0; l < p.w.size(); ++l)
        h = d::relu(d::linear(h, p.w[l], p.b[l]));
    Decoded out;
    out.raw_sigma = d::linear(h, p.sigma_w, p.sigma_b);
    out.rgb = d::sigmoid(d::linear(h, p.rgb_w, p.rgb_b));
    return out;
}

Decoded decode_gated(std::size_t n, const DecoderConfig& cfg) {
    return {d::Tensor::full({n, 1}, cfg.gate_sigma), d::Tensor::zeros({n, 3})};
}

std::vector<double> sample_deltas(const std::vector<double>& ts, double t_far) {
    std::vector<double> delta(ts.size());
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) delta[i] = ts[i + 1] - ts[i];
    if (!ts.empty()) delta.back() = t_far - ts.back();
    return delta;
}

Composited composite(const diff::Tensor& raw_sigma, const diff::Tensor& color,
                     const diff::Tensor& delta) {
    if (raw_sigma.rank() != 2 || delta.shape() != raw_sigma.shape() ||
        color.rank() != 3 || color.shape()[0] != raw_sigma.shape()[0] ||
        color.shape()[1] != raw_sigma.shape()[1] || color.shape()[2] != 3)
        throw std::invalid_argument("composite: want sigma/delta [R,N], color [R,N,3]");
    const std::size_t r = raw_sigma.shape()[0];
    const std::size_t n = raw_sigma.shape()[1];

    d::Tensor sigma = d::softplus(raw_sigma);
    d::Tensor sd = d::mul(sigma, delta);
    // T_i = exp(-sum_{j<i} sigma_j delta_j); alpha_i = 1 - exp(-sigma_i delta_i).
    d::Tensor t = d::exp(d::scale(d::cumsum_exclusive(sd, 1), -1.0));
    d::Tensor alpha = d::add_scalar(d::scale(d::exp(d::scale(sd, -1.0)), -1.0), 1.0);
    d::Tensor w = d::mul(t, alpha);  // [R,N]

    Composited out;
    out.c_hat = d::sum(d::mul(d::reshape(w, {r, n, 1}), color), 1);
    out.m_hat = d::sum(w, 1);
    out.trans = t;
    out.t_final = d::exp(d::scale(d::sum(sd, 1), -1.0));
    return out;
}

RenderResult render_rays(std::span<const geom::Ray> rays,
                         const body::BodyState& target_state,
                         const body::BodyTemplate& tmpl,
                         const feat::FeatureBank& bank,
                         const fusion::FusionParams& fus,
                         const fusion::FusionConfig& fus_cfg,
                         const DecoderParams& dec, const DecoderConfig& dec_cfg,
                         const RenderOptions& opt) {
    const std::size_t n_rays = rays.size();
    const std::size_t ns = static_cast<std::size_t>(opt.n_samples);
    const geom::Aabb box =
        geom::Aabb::of_points(target_state.verts_o).inflated(opt.aabb_margin);

    // Rays intersecting the posed body's box, with their sample positions.
    std::vector<std::size_t> hit_rows;
    std::vector<double> all_ts, all_deltas;
    std::vector<Vector3d> pts_t;
    for (std::size_t i = 0; i < n_rays; ++i) {
        const auto span = geom::intersect_aabb(rays[i], box);
        if (!span) continue;
        hit_rows.push_back(i);
        Rng rng(mix_seed(opt.seed, i));
        const auto ts = geom::stratified_samples(span->first, span->second,
                                                 opt.n_samples, opt.jitter, rng);
        const auto deltas = sample_deltas(ts, span->second);
        for (std::size_t s = 0; s < ns; ++s) {
            all_ts.push_back(ts[s]);
            all_deltas.push_back(deltas[s]);
            pts_t.push_back(rays[i].origin + ts[s] * rays[i].dir);
        }
    }
    const std::size_t rh = hit_rows.size();

    RenderResult res;
    if (rh == 0) {
        res.c_hat = d::Tensor::full({n_rays, 3}, opt.background);
        res.m_hat = d::Tensor::zeros({n_rays});
        return res;
    }

    // Inverse LBS into canonical space and the hard distance gate.
    const std::size_t total = rh * ns;
    std::vector<Vector3d> pts_c(total);
    std::vector<int> near_c(total);
    std::vector<std::size_t> open_rows;  // samples that reach the decoder
    for (std::size_t i = 0; i < total; ++i) {
        const auto inv = body::inverse_lbs(pts_t[i], target_state, tmpl);
        pts_c[i] = inv.x_c;
        const auto [vc, dist] = body::nearest_vertex(inv.x_c, target_state.verts_c);
        near_c[i] = vc;
        if (dist <= opt.gate_threshold) open_rows.push_back(i);
    }

    d::Tensor raw_full, rgb_full;
    if (open_rows.empty()) {
        raw_full = d::Tensor::full({total, 1}, dec_cfg.gate_sigma);
        rgb_full = d::Tensor::zeros({total, 3});
    } else {
        std::vector<Vector3d> sub_c(open_rows.size());
        std::vector<Vector3d> sub_norm(open_rows.size());
        std::vector<int> sub_near(open_rows.size());
        for (std::size_t k = 0; k < open_rows.size(); ++k) {
            sub_c[k] = pts_c[open_rows[k]];
            sub_norm[k] = bank.norm.to_norm(sub_c[k]);
            sub_near[k] = near_c[open_rows[k]];
        }

        d::Tensor f_global = feat::query_triplane(bank.tri, sub_norm);
        d::Tensor f_point = feat::query_point_volume(bank.vol, sub_norm);
        const auto uv = feat::pixel_uv_for_points(sub_c, sub_near, bank.obs_state,
                                                  tmpl, bank.obs_cam);
        d::Tensor f_pixel = d::grid_sample_bilinear(bank.img.map2d, uv, true);

        fusion::TokenSet tokens =
            fusion::make_tokens(f_global, f_point, f_pixel, fus, fus_cfg);
        fusion::AttentionOut att = fusion::self_attention(tokens, fus, fus_cfg);
        d::Tensor f_trans = fusion::fuse(att.tokens, fus_cfg);

        Decoded dcd = decode(sub_norm, f_trans, dec, dec_cfg);
        raw_full = d::scatter_rows(dcd.raw_sigma, open_rows, total,
                                   dec_cfg.gate_sigma);
        rgb_full = d::scatter_rows(dcd.rgb, open_rows, total, 0.0);
        res.decoded_points = open_rows.size();
    }

    d::Tensor delta = d::Tensor::from_data({rh, ns}, std::move(all_deltas));
    Composited comp = composite(d::reshape(raw_full, {rh, ns}),
                                d::reshape(rgb_full, {rh, ns, 3}), delta);

    res.c_hat = d::scatter_rows(comp.c_hat, hit_rows, n_rays, opt.background);
    res.m_hat = d::scatter_rows(comp.m_hat, hit_rows, n_rays, 0.0);
    return res;
}

RenderResult render_ray(const geom::Ray& ray, const body::BodyState& target_state,
                        const body::BodyTemplate& tmpl,
                        const feat::FeatureBank& bank,
                        const fusion::FusionParams& fus,
                        const fusion::FusionConfig& fus_cfg,
                        const DecoderParams& dec, const DecoderConfig& dec_cfg,
                        const RenderOptions& opt) {
    const geom::Ray rays[1] = {ray};
    return render_rays(rays, target_state, tmpl, bank, fus, fus_cfg, dec, dec_cfg,
                       opt);
}

}  // namespace hrf::nerf
