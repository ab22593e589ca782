#include <doctest.h>

#include <cmath>

#include "hrf/nerf.hpp"
#include "hrf/tensor_ops.hpp"
#include "scenehelper.hpp"
#include "testutil.hpp"

using namespace hrf;
namespace d = hrf::diff;
using body::Vector3d;

namespace {

// raw value whose softplus equals the requested density
double raw_for_sigma(double sigma) { return std::log(std::exp(sigma) - 1.0); }

}  // namespace

TEST_CASE("decode outputs and the gate bypass") {
    nerf::DecoderConfig cfg{4, 8, 2, -80.0};
    const auto gated = nerf::decode_gated(3, cfg);
    REQUIRE(gated.raw_sigma.shape() == d::Shape{3, 1});
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(gated.raw_sigma[i] == -80.0);
        for (int c = 0; c < 3; ++c) CHECK(gated.rgb[i * 3 + c] == 0.0);
    }

    // all-zero weights: the rgb head sits at sigmoid(0) = 0.5
    nerf::DecoderParams zero;
    Rng rng(3);
    zero.init(6, cfg, rng);
    for (auto* t : {&zero.sigma_w, &zero.rgb_w})
        for (auto& v : t->values_mut()) v = 0.0;
    for (auto& w : zero.w)
        for (auto& v : w.values_mut()) v = 0.0;
    const std::vector<Vector3d> pts = {{0.1, 0.2, 0.3}};
    const auto out = nerf::decode(pts, d::Tensor::zeros({1, 6}), zero, cfg);
    CHECK(out.raw_sigma.item() == 0.0);
    for (int c = 0; c < 3; ++c) CHECK(out.rgb[c] == 0.5);

    // gradients w.r.t. the fused features
    nerf::DecoderParams p;
    p.init(6, cfg, rng);
    d::Tensor f = d::Tensor::from_data({2, 6}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6,
                                                -0.1, 0.2, -0.3, -0.4, 0.5, -0.6},
                                       true);
    const std::vector<Vector3d> two = {{0.1, 0.2, 0.3}, {-0.4, 0.0, 0.2}};
    const double err = testutil::max_grad_rel_err(
        [&] {
            const auto r = nerf::decode(two, f, p, cfg);
            return d::add(d::sum(d::softplus(r.raw_sigma)), d::sum(r.rgb));
        },
        {f});
    CHECK(err <= 1e-4);
}

TEST_CASE("composite basics") {
    // softplus(-800) underflows to exactly zero density: empty space
    d::Tensor raw = d::Tensor::full({2, 4}, -800.0);
    d::Tensor color = d::Tensor::full({2, 4, 3}, 0.9);
    d::Tensor delta = d::Tensor::full({2, 4}, 0.1);
    const auto empty = nerf::composite(raw, color, delta);
    for (std::size_t i = 0; i < 6; ++i) CHECK(empty.c_hat[i] == 0.0);
    CHECK(empty.m_hat[0] == 0.0);
    CHECK(empty.m_hat[1] == 0.0);

    // opaque first sample: everything composites to its color
    std::vector<double> rv(4, -800.0);
    rv[0] = 50.0;  // sigma*delta = 50 with delta 1
    std::vector<double> cv(12, 0.25);
    cv[0] = 0.8;
    cv[1] = 0.6;
    cv[2] = 0.4;
    const auto front = nerf::composite(
        d::Tensor::from_data({1, 4}, rv), d::Tensor::from_data({1, 4, 3}, cv),
        d::Tensor::full({1, 4}, 1.0));
    CHECK(std::abs(front.c_hat[0] - 0.8) <= 1e-20);
    CHECK(std::abs(front.c_hat[1] - 0.6) <= 1e-20);
    CHECK(std::abs(front.m_hat[0] - 1.0) <= 1e-20);
}

TEST_CASE("homogeneous medium matches the closed form") {
    const double sigma = 1.0, t_n = 0.0, t_f = 1.0;
    const double closed = 1.0 - std::exp(-sigma * (t_f - t_n));
    double prev_err = 1.0;
    for (int n = 16; n <= 256; n *= 2) {
        Rng rng(1);
        const auto ts = geom::stratified_samples(t_n, t_f, n, false, rng);
        const auto deltas = nerf::sample_deltas(ts, t_f);
        std::vector<double> rv(n, raw_for_sigma(sigma));
        std::vector<double> cv(n * 3, 0.0);
        for (int i = 0; i < n; ++i) cv[i * 3] = 1.0;  // red medium
        const auto out = nerf::composite(
            d::Tensor::from_data({1, static_cast<std::size_t>(n)}, rv),
            d::Tensor::from_data({1, static_cast<std::size_t>(n), 3}, cv),
            d::Tensor::from_data({1, static_cast<std::size_t>(n)}, deltas));
        const double err = std::abs(out.c_hat[0] - closed);
        CHECK(err < prev_err);  // quadrature converges as N doubles
        prev_err = err;
        if (n == 256) CHECK(err <= 1e-3);
        CHECK(out.c_hat[1] == 0.0);
    }
}

TEST_CASE("transmittance is monotone and conserves opacity") {
    Rng rng(7);
    const std::size_t r = 64, n = 32;
    std::vector<double> rv(r * n), dv(r * n);
    for (auto& x : rv) x = rng.uniform(-4.0, 4.0);
    for (auto& x : dv) x = rng.uniform(0.01, 0.2);
    const auto out = nerf::composite(
        d::Tensor::from_data({r, n}, rv),
        d::Tensor::full({r, n, 3}, 0.5),
        d::Tensor::from_data({r, n}, dv));
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j + 1 < n; ++j)
            CHECK(out.trans[i * n + j + 1] <= out.trans[i * n + j]);
        CHECK(std::abs(out.m_hat[i] + out.t_final[i] - 1.0) <= 1e-12);
        CHECK(out.m_hat[i] >= 0.0);
        CHECK(out.m_hat[i] <= 1.0);
    }
}

TEST_CASE("compositing gradients match finite differences") {
    Rng rng(11);
    const std::size_t r = 3, n = 6;
    std::vector<double> rv(r * n), cv(r * n * 3), dv(r * n);
    for (auto& x : rv) x = rng.uniform(-1.0, 1.0);
    for (auto& x : cv) x = rng.uniform(0.0, 1.0);
    for (auto& x : dv) x = rng.uniform(0.05, 0.2);
    d::Tensor raw = d::Tensor::from_data({r, n}, rv, true);
    d::Tensor color = d::Tensor::from_data({r, n, 3}, cv, true);
    d::Tensor delta = d::Tensor::from_data({r, n}, dv);
    const double err = testutil::max_grad_rel_err(
        [&] {
            const auto out = nerf::composite(raw, color, delta);
            return d::add(d::sum(d::mul(out.c_hat, out.c_hat)),
                          d::sum(out.m_hat));
        },
        {raw, color});
    CHECK(err <= 1e-4);
}

TEST_CASE("render_ray through the full pipeline") {
    testutil::SmallScene sc;
    nerf::RenderOptions opt;
    CHECK(opt.n_samples == 48);  // pipeline default
    opt.n_samples = sc.rc.n_samples;
    opt.gate_threshold = sc.rc.gate_threshold;

    // a ray missing the body box renders background with zero opacity
    geom::Ray miss;
    miss.origin = Vector3d(5, 5, 5);
    miss.dir = Vector3d(0, 1, 0);
    const auto bg = nerf::render_ray(miss, sc.state, sc.tmpl, sc.bank,
                                     sc.model.fus, sc.model.fus_cfg,
                                     sc.model.dec, sc.model.dec_cfg, opt);
    CHECK(bg.c_hat[0] == 0.0);
    CHECK(bg.m_hat[0] == 0.0);
    CHECK(bg.decoded_points == 0);

    // a ray through the body center decodes points and accumulates opacity
    geom::Ray hit = geom::cast_ray(
        sc.cam, {sc.rc.resolution / 2.0, sc.rc.resolution / 2.0});
    const auto fg = nerf::render_ray(hit, sc.state, sc.tmpl, sc.bank,
                                     sc.model.fus, sc.model.fus_cfg,
                                     sc.model.dec, sc.model.dec_cfg, opt);
    CHECK(fg.decoded_points > 0);
    CHECK(fg.m_hat[0] > 0.0);
    CHECK(fg.m_hat[0] <= 1.0);

    // deterministic with jitter off
    const auto fg2 = nerf::render_ray(hit, sc.state, sc.tmpl, sc.bank,
                                      sc.model.fus, sc.model.fus_cfg,
                                      sc.model.dec, sc.model.dec_cfg, opt);
    for (int c = 0; c < 3; ++c) CHECK(fg.c_hat[c] == fg2.c_hat[c]);
}

TEST_CASE("fully gated rays keep the density floor end to end") {
    testutil::SmallScene sc;
    nerf::RenderOptions opt;
    opt.n_samples = 32;
    opt.gate_threshold = sc.rc.gate_threshold;

    // the activated floor softplus(-80) is far below the 1e-30 contract
    CHECK(d::softplus(d::Tensor::scalar(-80.0)).item() <= 1e-30);

    // a ray clipping a box corner stays far from every vertex: all of its
    // samples gate, so color is exactly zero and opacity is negligible
    const geom::Aabb box =
        geom::Aabb::of_points(sc.state.verts_o).inflated(0.1);
    geom::Ray graze;
    graze.origin = Vector3d(box.max.x() - 0.01, box.max.y() - 0.01, -3.0);
    graze.dir = Vector3d(0, 0, 1);
    REQUIRE(geom::intersect_aabb(graze, box).has_value());
    const auto out = nerf::render_ray(graze, sc.state, sc.tmpl, sc.bank,
                                      sc.model.fus, sc.model.fus_cfg,
                                      sc.model.dec, sc.model.dec_cfg, opt);
    CHECK(out.decoded_points == 0);
    CHECK(out.m_hat[0] <= 1e-10);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(out.c_hat[c]) <= 1e-10);
}

TEST_CASE("render gradients reach every trainable component") {
    testutil::SmallScene sc;
    nerf::RenderOptions opt;
    opt.n_samples = 8;
    opt.gate_threshold = sc.rc.gate_threshold;
    std::vector<geom::Ray> rays;
    for (int i = 0; i < 3; ++i)
        rays.push_back(geom::cast_ray(sc.cam, {14.0 + i, 16.0}));

    auto loss_fn = [&] {
        const auto bank =
            sc.model.make_bank(sc.image, sc.mask, sc.cam, sc.state, sc.tmpl);
        const auto out =
            nerf::render_rays(rays, sc.state, sc.tmpl, bank, sc.model.fus,
                              sc.model.fus_cfg, sc.model.dec, sc.model.dec_cfg,
                              opt);
        return d::add(d::sum(d::mul(out.c_hat, out.c_hat)), d::sum(out.m_hat));
    };
    // spot-check one parameter from each trainable module; h stays small
    // so no relu pre-activation straddles the probe
    const double err = testutil::max_grad_rel_err(
        loss_fn,
        {sc.model.dec.rgb_b, sc.model.fus.bo, sc.model.vol.b[2],
         sc.model.tri.map_b2, sc.model.enc.col_b},
        1e-7);
    CHECK(err <= 1e-4);
}
