#include <doctest.h>

#include <cmath>

#include "hrf/featbank.hpp"
#include "hrf/model.hpp"
#include "hrf/synthcap.hpp"
#include "hrf/tensor_ops.hpp"
#include "testutil.hpp"

using namespace hrf;
namespace d = hrf::diff;
using body::Vector3d;

namespace {

img::Image random_image(int w, int h, int ch, std::uint64_t seed) {
    Rng rng(seed);
    img::Image im = img::make_image(w, h, ch);
    for (auto& v : im.data) v = rng.uniform();
    return im;
}

img::Image ones_mask(int w, int h) { return img::make_image(w, h, 1, 1.0); }

feat::EncoderConfig small_enc() { return {4, 6, 16, 4}; }

feat::EncoderParams make_enc(const feat::EncoderConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    feat::EncoderParams p;
    p.init(cfg, rng);
    return p;
}

}  // namespace

TEST_CASE("encode_image masking contract") {
    const feat::EncoderConfig cfg = small_enc();
    const feat::EncoderParams params = make_enc(cfg, 5);
    const int w = 16, h = 16;

    img::Image zero_mask = img::make_image(w, h, 1, 0.0);
    const auto fa = feat::encode_image(random_image(w, h, 3, 1), zero_mask,
                                       params, cfg);
    const auto fb = feat::encode_image(random_image(w, h, 3, 2), zero_mask,
                                       params, cfg);
    const auto f0 = feat::encode_image(img::make_image(w, h, 3, 0.0),
                                       ones_mask(w, h), params, cfg);

    // under an all-zero mask the latent is the encoder's bias response
    for (std::size_t i = 0; i < fa.latent.numel(); ++i) {
        CHECK(fa.latent[i] == fb.latent[i]);
        CHECK(fa.latent[i] == f0.latent[i]);
    }
    // appended channels carry posenc(0) = (0,1,0,1,...)
    const int app0 = cfg.map_channels;  // first appended channel
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    const auto mv = fa.map2d.values();
    for (int l = 0; l < 2 * cfg.posenc_rgb; ++l) {
        const double expect = l % 2 ? 1.0 : 0.0;
        CHECK(mv[(app0 + l) * plane + 5] == expect);
    }

    // pixels outside the mask never influence the features
    img::Image half_mask = img::make_image(w, h, 1, 0.0);
    for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w; ++x) half_mask.at(x, y) = 1.0;
    img::Image ia = random_image(w, h, 3, 3);
    img::Image ib = ia;
    for (int y = h / 2; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) ib.at(x, y, c) = 1.0 - ib.at(x, y, c);
    const auto ga = feat::encode_image(ia, half_mask, params, cfg);
    const auto gb = feat::encode_image(ib, half_mask, params, cfg);
    for (std::size_t i = 0; i < ga.latent.numel(); ++i)
        CHECK(ga.latent[i] == gb.latent[i]);
    for (std::size_t i = 0; i < ga.map2d.numel(); ++i)
        CHECK(ga.map2d[i] == gb.map2d[i]);

    CHECK_THROWS_AS(
        feat::encode_image(ia, img::make_image(8, 8, 1, 1.0), params, cfg),
        std::invalid_argument);
}

TEST_CASE("full-scale map has 64 + 32 channels") {
    feat::EncoderConfig cfg;
    cfg.base_width = 4;
    cfg.map_channels = 64;
    cfg.latent_dim = 16;
    cfg.posenc_rgb = 4;
    CHECK(feat::appended_channels(cfg) == 32);
    const feat::EncoderParams params = make_enc(cfg, 7);
    const auto f = feat::encode_image(random_image(16, 16, 3, 4),
                                      ones_mask(16, 16), params, cfg);
    CHECK(f.map2d.shape()[0] == 96);
    CHECK(f.map2d.shape()[1] == 16);
    CHECK(f.map2d.shape()[2] == 16);
}

TEST_CASE("encoder gradients reach the convolution weights") {
    const feat::EncoderConfig cfg{2, 3, 5, 4};
    feat::EncoderParams params = make_enc(cfg, 9);
    const img::Image im = random_image(8, 8, 3, 5);
    const img::Image mask = ones_mask(8, 8);
    const double err = testutil::max_grad_rel_err(
        [&] {
            const auto f = feat::encode_image(im, mask, params, cfg);
            return d::add(d::sum(d::mul(f.latent, f.latent)),
                          d::mean(d::mul(f.map2d, f.map2d)));
        },
        {params.stem_w, params.down_w[0], params.down_w[3], params.col_w,
         params.latent_w, params.latent_b});
    CHECK(err <= 1e-4);
}

TEST_CASE("style vector length matches the configuration") {
    feat::TriplaneConfig cfg;
    cfg.style_dim = 512;  // full-scale mapping network
    cfg.mapping_hidden = 32;
    cfg.channels = 4;
    cfg.resolution = 8;
    cfg.synth_channels = 4;
    Rng rng(11);
    feat::TriplaneParams p;
    p.init(16, cfg, rng);
    const d::Tensor latent = d::Tensor::full({16}, 0.3);
    CHECK(feat::style_vector(latent, p).numel() == 512);
}

TEST_CASE("build_triplane determinism and gradients") {
    feat::TriplaneConfig cfg;
    cfg.channels = 4;
    cfg.resolution = 16;
    cfg.style_dim = 8;
    cfg.mapping_hidden = 8;
    cfg.synth_channels = 4;
    Rng rng(13);
    feat::TriplaneParams p;
    p.init(6, cfg, rng);

    d::Tensor latent = d::Tensor::from_data({6}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6},
                                            true);
    const auto t1 = feat::build_triplane(latent, p, cfg);
    const auto t2 = feat::build_triplane(latent, p, cfg);
    REQUIRE(t1.planes.shape() == d::Shape{3, 4, 16, 16});
    for (std::size_t i = 0; i < t1.planes.numel(); ++i)
        CHECK(t1.planes[i] == t2.planes[i]);

    const double err = testutil::max_grad_rel_err(
        [&] {
            const auto tp = feat::build_triplane(latent, p, cfg);
            return d::mean(d::mul(tp.planes, tp.planes));
        },
        {latent});
    CHECK(err <= 1e-4);
}

TEST_CASE("query_triplane interpolation") {
    feat::TriPlane tp;
    tp.resolution = 8;
    tp.channels = 2;

    SUBCASE("constant planes sum to 3v") {
        tp.planes = d::Tensor::full({3, 2, 8, 8}, 0.7);
        const std::vector<Vector3d> pts = {{0.0, 0.0, 0.0}, {-0.4, 0.9, 0.2}};
        const auto q = feat::query_triplane(tp, pts);
        REQUIRE(q.shape() == d::Shape{2, 2});
        for (std::size_t i = 0; i < q.numel(); ++i)
            CHECK(q[i] == doctest::Approx(2.1).epsilon(1e-14));
    }

    SUBCASE("grid node and cell centers") {
        Rng rng(17);
        std::vector<double> pv(3 * 2 * 8 * 8);
        for (auto& v : pv) v = rng.uniform(-1, 1);
        tp.planes = d::Tensor::from_data({3, 2, 8, 8}, pv);
        auto plane_at = [&](int pl, int c, int iy, int ix) {
            return pv[((static_cast<std::size_t>(pl) * 2 + c) * 8 + iy) * 8 + ix];
        };
        // texel (i,j) center sits at normalized coord ((i+.5)/8)*2-1
        auto coord = [](int i) { return (i + 0.5) / 8.0 * 2.0 - 1.0; };

        const Vector3d node(coord(3), coord(5), coord(2));
        const auto q = feat::query_triplane(tp, std::vector<Vector3d>{node});
        for (int c = 0; c < 2; ++c) {
            // planes sample (x,y), (x,z), (y,z) with u=first, v=second
            const double expect = plane_at(0, c, 5, 3) + plane_at(1, c, 2, 3) +
                                  plane_at(2, c, 2, 5);
            CHECK(q[c] == doctest::Approx(expect).epsilon(1e-13));
        }

        // cell center: equal bilinear weights -> 4-corner averages
        const Vector3d center((coord(3) + coord(4)) / 2, (coord(5) + coord(6)) / 2,
                              (coord(2) + coord(3)) / 2);
        const auto qc = feat::query_triplane(tp, std::vector<Vector3d>{center});
        for (int c = 0; c < 2; ++c) {
            const double xy = 0.25 * (plane_at(0, c, 5, 3) + plane_at(0, c, 5, 4) +
                                      plane_at(0, c, 6, 3) + plane_at(0, c, 6, 4));
            const double xz = 0.25 * (plane_at(1, c, 2, 3) + plane_at(1, c, 2, 4) +
                                      plane_at(1, c, 3, 3) + plane_at(1, c, 3, 4));
            const double yz = 0.25 * (plane_at(2, c, 2, 5) + plane_at(2, c, 2, 6) +
                                      plane_at(2, c, 3, 5) + plane_at(2, c, 3, 6));
            CHECK(qc[c] == doctest::Approx(xy + xz + yz).epsilon(1e-13));
        }
    }

    SUBCASE("piecewise bilinear: affine along an in-cell segment") {
        Rng rng(19);
        std::vector<double> pv(3 * 2 * 8 * 8);
        for (auto& v : pv) v = rng.uniform(-1, 1);
        tp.planes = d::Tensor::from_data({3, 2, 8, 8}, pv);
        // x varies inside one cell; y, z fixed
        const double x0 = 0.02, x1 = 0.07;  // both inside one texel cell
        const Vector3d a(x0, 0.3, -0.2), b(x1, 0.3, -0.2),
            mid(0.5 * (x0 + x1), 0.3, -0.2);
        const auto q = feat::query_triplane(tp, std::vector<Vector3d>{a, b, mid});
        for (int c = 0; c < 2; ++c)
            CHECK(q[2 * 2 + c] ==
                  doctest::Approx(0.5 * (q[c] + q[2 + c])).epsilon(1e-12));
    }

    SUBCASE("gradients flow into the planes") {
        std::vector<double> pv(3 * 2 * 8 * 8, 0.0);
        d::Tensor planes = d::Tensor::from_data({3, 2, 8, 8}, pv, true);
        Rng rng(23);
        std::vector<Vector3d> pts;
        for (int i = 0; i < 10; ++i)
            pts.push_back(Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                   rng.uniform(-1, 1)));
        const double err = testutil::max_grad_rel_err(
            [&] {
                feat::TriPlane t{planes, 8, 2};
                const auto q = feat::query_triplane(t, pts);
                return d::sum(d::mul(q, q));
            },
            {planes});
        CHECK(err <= 1e-4);
    }
}

namespace {

struct Scene {
    body::BodyTemplate tmpl = body::make_capsule_body();
    body::BodyState state;
    geom::CameraView cam;
    img::Image image, mask;
    feat::Normalizer norm;

    Scene() {
        state = body::pose_body(
            tmpl, std::vector<Vector3d>(tmpl.n_joints(), Vector3d::Zero()), {});
        cam = geom::make_ring_camera(0.3, 2.4, 0.0, Vector3d(0, 0.15, 0),
                                     1.4 * 32, 32, 32);
        synth::Subject subj = synth::draw_subject(tmpl, 42, "s");
        subj.beta = {0.0, 0.0};
        const auto r = synth::render_analytic(tmpl, subj, state.theta, cam);
        image = r.image;
        mask = r.mask;
        norm = feat::make_normalizer(state.verts_c);
    }
};

}  // namespace

TEST_CASE("normalizer maps the canonical box to +-0.9") {
    Scene sc;
    const geom::Aabb box = geom::Aabb::of_points(sc.state.verts_c);
    const Vector3d lo = sc.norm.to_norm(box.min);
    const Vector3d hi = sc.norm.to_norm(box.max);
    for (int a = 0; a < 3; ++a) {
        CHECK(lo[a] == doctest::Approx(-0.9).epsilon(1e-12));
        CHECK(hi[a] == doctest::Approx(0.9).epsilon(1e-12));
    }
}

TEST_CASE("build_point_volume structure") {
    Scene sc;
    const feat::EncoderConfig ecfg = small_enc();
    const feat::EncoderParams enc = make_enc(ecfg, 31);
    const auto imgf = feat::encode_image(sc.image, sc.mask, enc, ecfg);
    const int map_total = ecfg.map_channels + feat::appended_channels(ecfg);

    feat::PointVolumeConfig vcfg{16, 8};
    Rng rng(33);
    feat::PointVolumeParams vp;
    vp.init(map_total, vcfg, rng);
    CHECK(vp.w.size() == 4);  // four sparse convolution layers

    const auto vis = body::visible_vertices(sc.state, sc.cam, sc.tmpl);
    const auto vol = feat::build_point_volume(imgf, sc.state, sc.tmpl, sc.cam,
                                              vis, sc.norm, vp, vcfg);
    CHECK(vol.feats.shape()[1] == 8);
    CHECK(vol.active.size() > 10);
    CHECK(std::is_sorted(vol.active.begin(), vol.active.end()));

    // full-scale configuration carries 96-dimensional point features
    feat::PointVolumeConfig full{16, 96};
    feat::PointVolumeParams vp96;
    vp96.init(map_total, full, rng);
    const auto vol96 = feat::build_point_volume(imgf, sc.state, sc.tmpl, sc.cam,
                                                vis, sc.norm, vp96, full);
    CHECK(vol96.feats.shape()[1] == 96);

    // no visible vertices -> a valid empty volume
    const std::vector<char> none(sc.tmpl.n_verts(), 0);
    const auto empty = feat::build_point_volume(imgf, sc.state, sc.tmpl, sc.cam,
                                                none, sc.norm, vp, vcfg);
    CHECK(empty.active.empty());
    const std::vector<Vector3d> probe = {{0, 0, 0}};
    const auto q = feat::query_point_volume(empty, probe);
    CHECK(q.shape() == d::Shape{1, 8});
    CHECK(q[0] == 0.0);
}

TEST_CASE("single vertex voxelizes to the center cell") {
    // one-joint body with a single visible vertex at the canonical origin
    body::BodyTemplate t;
    t.joints = {Vector3d::Zero()};
    t.parents = {-1};
    t.verts = {Vector3d(0, 0, 0), Vector3d(0.9, 0.9, 0.9)};
    t.weights = {1.0, 1.0};
    t.tris = {};
    const auto st = body::pose_body(t, {Vector3d::Zero()}, {});

    feat::Normalizer norm;  // identity-ish: center 0, half 1
    const feat::EncoderConfig ecfg = small_enc();
    const feat::EncoderParams enc = make_enc(ecfg, 35);
    img::Image im = random_image(16, 16, 3, 6);
    const auto imgf = feat::encode_image(im, ones_mask(16, 16), enc, ecfg);

    geom::CameraView cam;
    cam.width = cam.height = 16;
    cam.K << 16, 0, 8, 0, 16, 8, 0, 0, 1;
    cam.t = Vector3d(0, 0, 2.0);  // body in front of the camera

    feat::PointVolumeConfig vcfg{32, 4};
    Rng rng(37);
    feat::PointVolumeParams vp;
    vp.init(ecfg.map_channels + feat::appended_channels(ecfg), vcfg, rng);

    const std::vector<char> vis = {1, 0};
    const auto vol =
        feat::build_point_volume(imgf, st, t, cam, vis, norm, vp, vcfg);
    REQUIRE(vol.active.size() == 1);
    CHECK(vol.active[0] == (16 * 32 + 16) * 32 + 16);  // the center cell
}

TEST_CASE("point volume permutation invariance") {
    Scene sc;
    const feat::EncoderConfig ecfg = small_enc();
    const feat::EncoderParams enc = make_enc(ecfg, 41);
    const auto imgf = feat::encode_image(sc.image, sc.mask, enc, ecfg);
    feat::PointVolumeConfig vcfg{12, 6};
    Rng rng(43);
    feat::PointVolumeParams vp;
    vp.init(ecfg.map_channels + feat::appended_channels(ecfg), vcfg, rng);
    const auto vis = body::visible_vertices(sc.state, sc.cam, sc.tmpl);

    // reverse the vertex order of the whole template
    body::BodyTemplate rev = sc.tmpl;
    std::reverse(rev.verts.begin(), rev.verts.end());
    const std::size_t k = sc.tmpl.n_joints(), n = sc.tmpl.n_verts();
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t j = 0; j < k; ++j)
            rev.weights[v * k + j] = sc.tmpl.weights[(n - 1 - v) * k + j];
    rev.tris.clear();
    body::BodyState rst = sc.state;
    std::reverse(rst.verts_c.begin(), rst.verts_c.end());
    std::reverse(rst.verts_o.begin(), rst.verts_o.end());
    std::vector<char> rvis(vis.rbegin(), vis.rend());

    const auto va = feat::build_point_volume(imgf, sc.state, sc.tmpl, sc.cam,
                                             vis, sc.norm, vp, vcfg);
    const auto vb =
        feat::build_point_volume(imgf, rst, rev, sc.cam, rvis, sc.norm, vp, vcfg);
    REQUIRE(va.active == vb.active);
    for (std::size_t i = 0; i < va.feats.numel(); ++i)
        CHECK(va.feats[i] == doctest::Approx(vb.feats[i]).epsilon(1e-12));
}

TEST_CASE("query_point_volume matches a dense trilinear oracle") {
    feat::SparseVolume vol;
    vol.grid = 6;
    Rng rng(47);
    std::vector<int> cells;
    for (int i = 0; i < 25; ++i)
        cells.push_back(static_cast<int>(rng.uniform_int(6 * 6 * 6)));
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    vol.active = cells;
    std::vector<double> fv(cells.size() * 3);
    for (auto& v : fv) v = rng.uniform(-1, 1);
    vol.feats = d::Tensor::from_data({cells.size(), 3}, fv, true);

    // densify and interpolate independently
    std::vector<double> dense(6 * 6 * 6 * 3, 0.0);
    for (std::size_t r = 0; r < cells.size(); ++r)
        for (int c = 0; c < 3; ++c) dense[cells[r] * 3 + c] = fv[r * 3 + c];
    auto oracle = [&](const Vector3d& p, int c) {
        const double g = 6;
        const double gx = (p.x() + 1) * 0.5 * g - 0.5;
        const double gy = (p.y() + 1) * 0.5 * g - 0.5;
        const double gz = (p.z() + 1) * 0.5 * g - 0.5;
        const int x0 = static_cast<int>(std::floor(gx));
        const int y0 = static_cast<int>(std::floor(gy));
        const int z0 = static_cast<int>(std::floor(gz));
        double acc = 0;
        for (int dx = 0; dx <= 1; ++dx)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dz = 0; dz <= 1; ++dz) {
                    const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= 6 || y >= 6 || z >= 6)
                        continue;
                    const double w = (dx ? gx - x0 : 1 - (gx - x0)) *
                                     (dy ? gy - y0 : 1 - (gy - y0)) *
                                     (dz ? gz - z0 : 1 - (gz - z0));
                    acc += w * dense[((x * 6 + y) * 6 + z) * 3 + c];
                }
        return acc;
    };

    std::vector<Vector3d> pts;
    for (int i = 0; i < 200; ++i)
        pts.push_back(Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                               rng.uniform(-1, 1)));
    const auto q = feat::query_point_volume(vol, pts);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(q[i * 3 + c] - oracle(pts[i], c)) <= 1e-12);

    // inactive region is exactly zero; isolated voxel center returns itself
    feat::SparseVolume lone;
    lone.grid = 6;
    lone.active = {(2 * 6 + 3) * 6 + 4};
    lone.feats = d::Tensor::from_data({1, 2}, {1.5, -2.5});
    auto center_of = [](int i) { return (i + 0.5) / 6.0 * 2.0 - 1.0; };
    const std::vector<Vector3d> probes = {
        {center_of(2), center_of(3), center_of(4)}, {-0.95, -0.95, -0.95}};
    const auto ql = feat::query_point_volume(lone, probes);
    CHECK(ql[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(ql[1] == doctest::Approx(-2.5).epsilon(1e-12));
    CHECK(ql[2] == 0.0);
    CHECK(ql[3] == 0.0);

    // gradients reach the sparse features
    const double err = testutil::max_grad_rel_err(
        [&] {
            const auto qq = feat::query_point_volume(vol, pts);
            return d::sum(d::mul(qq, qq));
        },
        {vol.feats});
    CHECK(err <= 1e-4);
}

TEST_CASE("sparse convolution gradients") {
    Scene sc;
    const feat::EncoderConfig ecfg = small_enc();
    feat::EncoderParams enc = make_enc(ecfg, 51);
    const auto imgf = feat::encode_image(sc.image, sc.mask, enc, ecfg);
    feat::PointVolumeConfig vcfg{8, 4};
    Rng rng(53);
    feat::PointVolumeParams vp;
    vp.init(ecfg.map_channels + feat::appended_channels(ecfg), vcfg, rng);
    const auto vis = body::visible_vertices(sc.state, sc.cam, sc.tmpl);

    const double err = testutil::max_grad_rel_err(
        [&] {
            const auto vol = feat::build_point_volume(imgf, sc.state, sc.tmpl,
                                                      sc.cam, vis, sc.norm, vp,
                                                      vcfg);
            return d::mean(d::mul(vol.feats, vol.feats));
        },
        {vp.w[0], vp.w[3], vp.b[1]});
    CHECK(err <= 1e-4);
}

TEST_CASE("pixel-aligned queries and the distance gate") {
    Scene sc;
    const feat::EncoderConfig ecfg = small_enc();
    const feat::EncoderParams enc = make_enc(ecfg, 61);
    const auto imgf = feat::encode_image(sc.image, sc.mask, enc, ecfg);

    // a canonical vertex: the pixel feature equals the gathered feature
    const auto vis = body::visible_vertices(sc.state, sc.cam, sc.tmpl);
    std::size_t vtx = 0;
    while (!vis[vtx]) ++vtx;
    const std::vector<Vector3d> pts = {sc.state.verts_c[vtx]};
    const auto pq = feat::query_pixel_aligned(imgf, pts, sc.state, sc.tmpl,
                                              sc.cam, 0.05);
    CHECK(!pq.gated[0]);
    CHECK(pq.gate_distance[0] == 0.0);
    const auto pr = geom::project(sc.cam, sc.state.verts_o[vtx]);
    const std::vector<std::array<double, 2>> uv = {{pr.u, pr.v}};
    const auto direct = d::grid_sample_bilinear(imgf.map2d, uv, true);
    for (std::size_t c = 0; c < direct.numel(); ++c)
        CHECK(std::abs(pq.feats[c] - direct[c]) <= 1e-9);

    // 10 cm away from the body: gated
    const geom::Aabb box = geom::Aabb::of_points(sc.state.verts_c);
    const std::vector<Vector3d> far = {box.max + Vector3d(0.1, 0.1, 0.1)};
    const auto gq = feat::query_pixel_aligned(imgf, far, sc.state, sc.tmpl,
                                              sc.cam, 0.05);
    CHECK(gq.gated[0]);
    CHECK(gq.gate_distance[0] > 0.05);

    // behind the camera: zero features, gated
    const Vector3d behind = sc.cam.center() + 0.5 * (sc.cam.center() -
                                                     Vector3d(0, 0.15, 0));
    body::BodyState shifted = sc.state;
    for (auto& v : shifted.verts_c) v = behind;  // degenerate body at a point
    for (auto& v : shifted.verts_o) v = behind;
    const std::vector<Vector3d> at = {behind};
    const auto bq = feat::query_pixel_aligned(imgf, at, shifted, sc.tmpl,
                                              sc.cam, 0.05);
    CHECK(bq.gated[0]);
    for (std::size_t c = 0; c < bq.feats.numel(); ++c) CHECK(bq.feats[c] == 0.0);
    CHECK(bq.gated[0] == (bq.gate_distance[0] > 0.05));

    // rest pose: the sampling location equals the direct projection
    const Vector3d probe = sc.state.verts_c[vtx] + Vector3d(0.01, 0.0, 0.0);
    const auto uv2 = feat::pixel_uv_for_points(
        std::vector<Vector3d>{probe}, std::vector<int>{static_cast<int>(vtx)},
        sc.state, sc.tmpl, sc.cam);
    const auto pr2 = geom::project(sc.cam, probe);
    CHECK(std::abs(uv2[0][0] - pr2.u) <= 1e-9);
    CHECK(std::abs(uv2[0][1] - pr2.v) <= 1e-9);
}

TEST_CASE("query_point invariant: gated matches the threshold") {
    Scene sc;
    RunConfig rc;
    rc.resolution = 32;
    rc.encoder_width = 4;
    rc.map_channels = 6;
    rc.latent_dim = 8;
    rc.plane_channels = 4;
    rc.plane_res = 16;
    rc.style_dim = 8;
    rc.mapping_hidden = 8;
    rc.synth_channels = 4;
    rc.voxel_grid = 12;
    rc.point_feat_dim = 6;
    rc.token_channels = 8;
    rc.heads = 2;
    const auto m = model::Model::build(rc);
    const auto bank = m.make_bank(sc.image, sc.mask, sc.cam, sc.state, sc.tmpl);

    Rng rng(71);
    for (int i = 0; i < 50; ++i) {
        const Vector3d p(rng.uniform(-0.7, 0.7), rng.uniform(-0.5, 0.9),
                         rng.uniform(-0.4, 0.4));
        const auto pf = feat::query_point(bank, sc.tmpl, p, 0.05);
        CHECK(pf.gated == (pf.gate_distance > 0.05));
        CHECK(pf.f_global.size() == 4);
        CHECK(pf.f_point.size() == 6);
        CHECK(pf.f_pixel.size() ==
              static_cast<std::size_t>(6 + feat::appended_channels(m.enc_cfg)));
    }
}
