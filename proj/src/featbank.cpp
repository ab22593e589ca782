#include "hrf/featbank.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "hrf/tensor_ops.hpp"

namespace hrf::feat {

namespace d = hrf::diff;

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

// Fan-in-scaled uniform init, zero biases.
d::Tensor init_weight(d::Shape shape, std::size_t fan_in, Rng& rng) {
    std::vector<double> v(d::shape_numel(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : v) x = rng.uniform(-a, a);
    return d::Tensor::from_data(std::move(shape), std::move(v), true);
}

d::Tensor init_bias(std::size_t n) {
    return d::Tensor::zeros({n}, true);
}

d::Tensor conv_block(const d::Tensor& x, const d::Tensor& w, const d::Tensor& b,
                     int stride) {
    return d::relu(d::conv2d(x, w, b, stride, 1));
}

}  // namespace

int appended_channels(const EncoderConfig& cfg) {
    const int L = cfg.posenc_rgb;
    const int pad = L == 4 ? 5 : 1;  // mask bits; 32 channels total at L=4
    return 6 * L + 3 + pad;
}

void EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
    const int w = cfg.base_width;
    stem_w = init_weight({static_cast<std::size_t>(w), 3, 3, 3}, 3 * 9, rng);
    stem_b = init_bias(w);
    const int widths[5] = {w, 2 * w, 4 * w, 8 * w, 8 * w};
    for (int i = 0; i < 4; ++i) {
        down_w[i] = init_weight({static_cast<std::size_t>(widths[i + 1]),
                                 static_cast<std::size_t>(widths[i]), 3, 3},
                                static_cast<std::size_t>(widths[i]) * 9, rng);
        down_b[i] = init_bias(widths[i + 1]);
    }
    latent_w = init_weight({static_cast<std::size_t>(8 * w),
                            static_cast<std::size_t>(cfg.latent_dim)},
                           8 * w, rng);
    latent_b = init_bias(cfg.latent_dim);
    const std::size_t hyper = static_cast<std::size_t>(w + 2 * w + 4 * w);
    col_w = init_weight({static_cast<std::size_t>(cfg.map_channels), hyper, 1, 1},
                        hyper, rng);
    col_b = init_bias(cfg.map_channels);
}

ImageFeatures encode_image(const img::Image& image, const img::Image& mask,
                           const EncoderParams& params, const EncoderConfig& cfg) {
    if (image.channels != 3)
        throw std::invalid_argument("encode_image: image must be rgb");
    if (mask.width != image.width || mask.height != image.height)
        throw std::invalid_argument("encode_image: mask dimensions differ from image");
    if (image.width % 4 || image.height % 4)
        throw std::invalid_argument("encode_image: resolution must be divisible by 4");
    const int h = image.height, w = image.width;

    // Masked rgb input, CHW.
    std::vector<double> rgb(static_cast<std::size_t>(3) * h * w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                rgb[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    mask.at(x, y, 0) > 0.5 ? image.at(x, y, c) : 0.0;
    d::Tensor x0 = d::Tensor::from_data(
        {3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, rgb);

    d::Tensor b0 = conv_block(x0, params.stem_w, params.stem_b, 1);
    d::Tensor b1 = conv_block(b0, params.down_w[0], params.down_b[0], 2);
    d::Tensor b2 = conv_block(b1, params.down_w[1], params.down_b[1], 2);
    d::Tensor b3 = conv_block(b2, params.down_w[2], params.down_b[2], 2);
    d::Tensor b4 = conv_block(b3, params.down_w[3], params.down_b[3], 2);

    d::Tensor gap = d::mean(d::mean(b4, 2), 1);  // [8w]
    d::Tensor latent = d::linear(d::reshape(gap, {1, gap.numel()}),
                                 params.latent_w, params.latent_b);
    latent = d::reshape(latent, {static_cast<std::size_t>(cfg.latent_dim)});

    std::array<d::Tensor, 3> cols = {b0, d::upsample_nearest(b1, 2),
                                     d::upsample_nearest(b2, 4)};
    d::Tensor hyper = d::concat(cols, 0);
    d::Tensor learned = d::conv2d(hyper, params.col_w, params.col_b, 1, 0);

    // Constant appended block: posenc(rgb), raw rgb, replicated mask.
    const int app = appended_channels(cfg);
    const int L = cfg.posenc_rgb;
    std::vector<double> appended(static_cast<std::size_t>(app) * h * w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> enc;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool inside = mask.at(x, y, 0) > 0.5;
            enc.clear();
            for (int c = 0; c < 3; ++c)
                geom::posenc_append(inside ? image.at(x, y, c) : 0.0, L, enc);
            const std::size_t px = static_cast<std::size_t>(y) * w + x;
            int ch = 0;
            for (double e : enc) appended[plane * ch++ + px] = e;
            for (int c = 0; c < 3; ++c)
                appended[plane * ch++ + px] = inside ? image.at(x, y, c) : 0.0;
            while (ch < app) appended[plane * ch++ + px] = inside ? 1.0 : 0.0;
        }
    }
    d::Tensor app_t = d::Tensor::from_data(
        {static_cast<std::size_t>(app), static_cast<std::size_t>(h),
         static_cast<std::size_t>(w)},
        std::move(appended));

    ImageFeatures out;
    std::array<d::Tensor, 2> parts = {learned, app_t};
    out.map2d = d::concat(parts, 0);
    out.latent = latent;
    out.width = w;
    out.height = h;
    return out;
}

void TriplaneParams::init(int latent_dim, const TriplaneConfig& cfg, Rng& rng) {
    map_w1 = init_weight({static_cast<std::size_t>(latent_dim),
                          static_cast<std::size_t>(cfg.mapping_hidden)},
                         latent_dim, rng);
    map_b1 = init_bias(cfg.mapping_hidden);
    map_w2 = init_weight({static_cast<std::size_t>(cfg.mapping_hidden),
                          static_cast<std::size_t>(cfg.style_dim)},
                         cfg.mapping_hidden, rng);
    map_b2 = init_bias(cfg.style_dim);

    const std::size_t s = static_cast<std::size_t>(cfg.synth_channels);
    const std::size_t base = static_cast<std::size_t>(cfg.base);
    const double a = 1.0 / std::sqrt(static_cast<double>(s));
    std::vector<double> c0(s * base * base);
    for (auto& x : c0) x = rng.uniform(-a, a);
    const0 = d::Tensor::from_data({s, base, base}, std::move(c0), true);

    int levels = 0;
    for (int r = cfg.base; r < cfg.resolution; r *= 2) ++levels;
    if (cfg.base << levels != cfg.resolution)
        throw std::invalid_argument("triplane: resolution must be base * 2^n");
    up_w.clear();
    up_b.clear();
    style_w.clear();
    style_b.clear();
    for (int l = 0; l < levels; ++l) {
        up_w.push_back(init_weight({s, s, 3, 3}, s * 9, rng));
        up_b.push_back(init_bias(s));
        style_w.push_back(init_weight(
            {static_cast<std::size_t>(cfg.style_dim), s}, cfg.style_dim, rng));
        style_b.push_back(init_bias(s));
    }
    out_w = init_weight({static_cast<std::size_t>(3 * cfg.channels), s, 3, 3},
                        s * 9, rng);
    out_b = init_bias(3 * cfg.channels);
}

diff::Tensor style_vector(const d::Tensor& latent, const TriplaneParams& p) {
    d::Tensor x = d::reshape(latent, {1, latent.numel()});
    x = d::relu(d::linear(x, p.map_w1, p.map_b1));
    return d::linear(x, p.map_w2, p.map_b2);  // [1, style_dim]
}

TriPlane build_triplane(const d::Tensor& latent, const TriplaneParams& p,
                        const TriplaneConfig& cfg) {
    d::Tensor style = style_vector(latent, p);
    d::Tensor x = p.const0;
    for (std::size_t l = 0; l < p.up_w.size(); ++l) {
        x = d::upsample_nearest(x, 2);
        x = d::conv2d(x, p.up_w[l], p.up_b[l], 1, 1);
        d::Tensor s = d::linear(style, p.style_w[l], p.style_b[l]);  // [1,c]
        const std::size_t c = x.shape()[0];
        x = d::mul(x, d::reshape(d::add_scalar(s, 1.0), {c, 1, 1}));
        x = d::relu(x);
    }
    d::Tensor out = d::conv2d(x, p.out_w, p.out_b, 1, 1);  // [3F, R, R]
    TriPlane tp;
    tp.resolution = cfg.resolution;
    tp.channels = cfg.channels;
    tp.planes = d::reshape(out, {3, static_cast<std::size_t>(cfg.channels),
                                 static_cast<std::size_t>(cfg.resolution),
                                 static_cast<std::size_t>(cfg.resolution)});
    return tp;
}

Normalizer make_normalizer(const std::vector<Vector3d>& canonical_verts) {
    const geom::Aabb box = geom::Aabb::of_points(canonical_verts);
    Normalizer n;
    n.center = 0.5 * (box.min + box.max);
    n.half = (0.5 * (box.max - box.min) / 0.9).cwiseMax(1e-6);
    return n;
}

diff::Tensor query_triplane(const TriPlane& tp, std::span<const Vector3d> x_norm) {
    const double r = static_cast<double>(tp.resolution);
    auto to_uv = [r](double a, double b) -> std::array<double, 2> {
        const double ca = std::clamp(a, -1.0, 1.0);
        const double cb = std::clamp(b, -1.0, 1.0);
        return {(ca + 1.0) * 0.5 * r, (cb + 1.0) * 0.5 * r};
    };
    std::vector<std::array<double, 2>> uv_xy(x_norm.size()), uv_xz(x_norm.size()),
        uv_yz(x_norm.size());
    for (std::size_t i = 0; i < x_norm.size(); ++i) {
        uv_xy[i] = to_uv(x_norm[i].x(), x_norm[i].y());
        uv_xz[i] = to_uv(x_norm[i].x(), x_norm[i].z());
        uv_yz[i] = to_uv(x_norm[i].y(), x_norm[i].z());
    }
    const std::size_t f = static_cast<std::size_t>(tp.channels);
    const std::size_t rr = static_cast<std::size_t>(tp.resolution);
    auto plane = [&](std::size_t idx) {
        return d::reshape(d::narrow(tp.planes, 0, idx, 1), {f, rr, rr});
    };
    d::Tensor s = d::grid_sample_bilinear(plane(0), uv_xy, false);
    s = d::add(s, d::grid_sample_bilinear(plane(1), uv_xz, false));
    s = d::add(s, d::grid_sample_bilinear(plane(2), uv_yz, false));
    return s;  // [P, F]
}

void PointVolumeParams::init(int in_channels, const PointVolumeConfig& cfg,
                             Rng& rng) {
    w.clear();
    b.clear();
    int cin = in_channels;
    for (int l = 0; l < 4; ++l) {
        w.push_back(init_weight({27, static_cast<std::size_t>(cin),
                                 static_cast<std::size_t>(cfg.feat_dim)},
                                static_cast<std::size_t>(cin) * 27, rng));
        b.push_back(init_bias(cfg.feat_dim));
        cin = cfg.feat_dim;
    }
}

namespace {

int voxel_of(double n, int grid) {
    const int i = static_cast<int>(std::floor((n + 1.0) * 0.5 * grid));
    return std::clamp(i, 0, grid - 1);
}

// Mean of rows sharing a group; permutation-invariant by construction.
d::Tensor scatter_mean_rows(const d::Tensor& feats,
                            const std::vector<std::size_t>& group,
                            std::size_t n_groups) {
    const std::size_t c = feats.shape()[1];
    std::vector<double> counts(n_groups, 0.0);
    for (std::size_t g : group) counts[g] += 1.0;
    std::vector<double> out(n_groups * c, 0.0);
    const auto fv = feats.values();
    for (std::size_t r = 0; r < group.size(); ++r)
        for (std::size_t j = 0; j < c; ++j)
            out[group[r] * c + j] += fv[r * c + j];
    for (std::size_t g = 0; g < n_groups; ++g)
        for (std::size_t j = 0; j < c; ++j) out[g * c + j] /= counts[g];
    return d::Tensor::make_op(
        {n_groups, c}, std::move(out), {feats},
        [group, counts, c](d::Node& self) {
            d::Node& nf = *self.inputs[0];
            if (!nf.requires_grad) return;
            nf.ensure_grad();
            for (std::size_t r = 0; r < group.size(); ++r)
                for (std::size_t j = 0; j < c; ++j)
                    nf.grad[r * c + j] +=
                        self.grad[group[r] * c + j] / counts[group[r]];
        });
}

// Submanifold 3^3 convolution over an active-voxel list.
d::Tensor sparse_conv(const d::Tensor& feats, const d::Tensor& w,
                      const d::Tensor& b,
                      const std::vector<std::array<int, 27>>& nbr) {
    const std::size_t a = feats.shape()[0];
    const std::size_t cin = feats.shape()[1];
    const std::size_t cout = w.shape()[2];
    std::vector<double> out(a * cout);
    {
        MMap o(out.data(), a, cout);
        for (std::size_t r = 0; r < a; ++r)
            o.row(r) = CMap(b.values().data(), 1, cout);
        std::vector<double> gathered(a * cin);
        for (int k = 0; k < 27; ++k) {
            MMap g(gathered.data(), a, cin);
            g.setZero();
            for (std::size_t r = 0; r < a; ++r) {
                const int src = nbr[r][k];
                if (src >= 0)
                    g.row(r) = CMap(feats.values().data() + src * cin, 1, cin);
            }
            CMap wk(w.values().data() + static_cast<std::size_t>(k) * cin * cout,
                    cin, cout);
            o.noalias() += g * wk;
        }
    }
    return d::Tensor::make_op(
        {a, cout}, std::move(out), {feats, w, b},
        [a, cin, cout, nbr](d::Node& self) {
            d::Node& nf = *self.inputs[0];
            d::Node& nw = *self.inputs[1];
            d::Node& nb = *self.inputs[2];
            CMap g(self.grad.data(), a, cout);
            if (nb.requires_grad) {
                nb.ensure_grad();
                MMap db(nb.grad.data(), 1, cout);
                db.noalias() += g.colwise().sum();
            }
            const bool need_f = nf.requires_grad;
            const bool need_w = nw.requires_grad;
            if (!need_f && !need_w) return;
            if (need_f) nf.ensure_grad();
            if (need_w) nw.ensure_grad();
            std::vector<double> gathered(a * cin);
            std::vector<double> dgather(a * cin);
            for (int k = 0; k < 27; ++k) {
                MMap ga(gathered.data(), a, cin);
                ga.setZero();
                for (std::size_t r = 0; r < a; ++r) {
                    const int src = nbr[r][k];
                    if (src >= 0)
                        ga.row(r) = CMap(nf.value.data() + src * cin, 1, cin);
                }
                CMap wk(nw.value.data() + static_cast<std::size_t>(k) * cin * cout,
                        cin, cout);
                if (need_w) {
                    MMap dw(nw.grad.data() + static_cast<std::size_t>(k) * cin * cout,
                            cin, cout);
                    dw.noalias() += ga.transpose() * g;
                }
                if (need_f) {
                    MMap dg(dgather.data(), a, cin);
                    dg.noalias() = g * wk.transpose();
                    for (std::size_t r = 0; r < a; ++r) {
                        const int src = nbr[r][k];
                        if (src < 0) continue;
                        MMap(nf.grad.data() + src * cin, 1, cin).noalias() +=
                            dg.row(r);
                    }
                }
            }
        });
}

}  // namespace

SparseVolume build_point_volume(const ImageFeatures& imgf,
                                const body::BodyState& obs_state,
                                const body::BodyTemplate& tmpl,
                                const geom::CameraView& obs_cam,
                                const std::vector<char>& visible,
                                const Normalizer& norm,
                                const PointVolumeParams& params,
                                const PointVolumeConfig& cfg) {
    if (visible.size() != tmpl.n_verts())
        throw std::invalid_argument("build_point_volume: visibility mask size");
    SparseVolume vol;
    vol.grid = cfg.grid;

    std::vector<std::size_t> vis_idx;
    for (std::size_t i = 0; i < visible.size(); ++i)
        if (visible[i]) vis_idx.push_back(i);
    if (vis_idx.empty()) {
        vol.feats = d::Tensor::zeros({0, static_cast<std::size_t>(cfg.feat_dim)});
        return vol;
    }

    // Gather image features at the projections of visible posed vertices.
    std::vector<std::array<double, 2>> uv(vis_idx.size());
    for (std::size_t i = 0; i < vis_idx.size(); ++i) {
        const auto pr = geom::project(obs_cam, obs_state.verts_o[vis_idx[i]]);
        uv[i] = {pr.u, pr.v};
    }
    d::Tensor vfeat = d::grid_sample_bilinear(imgf.map2d, uv, true);

    // Voxelize at the vertices' canonical positions, averaging collisions.
    std::map<int, std::size_t> id_to_group;
    std::vector<int> ids(vis_idx.size());
    for (std::size_t i = 0; i < vis_idx.size(); ++i) {
        const Vector3d n = norm.to_norm(obs_state.verts_c[vis_idx[i]]);
        const int id = (voxel_of(n.x(), cfg.grid) * cfg.grid +
                        voxel_of(n.y(), cfg.grid)) *
                           cfg.grid +
                       voxel_of(n.z(), cfg.grid);
        ids[i] = id;
        id_to_group.emplace(id, 0);
    }
    vol.active.reserve(id_to_group.size());
    for (auto& [id, slot] : id_to_group) {
        slot = vol.active.size();
        vol.active.push_back(id);
    }
    std::vector<std::size_t> group(vis_idx.size());
    for (std::size_t i = 0; i < vis_idx.size(); ++i)
        group[i] = id_to_group[ids[i]];

    d::Tensor feats = scatter_mean_rows(vfeat, group, vol.active.size());

    // Neighbor table over the active set, shared by all four layers.
    const int g = cfg.grid;
    auto find_row = [&](int id) -> int {
        const auto it = std::lower_bound(vol.active.begin(), vol.active.end(), id);
        if (it == vol.active.end() || *it != id) return -1;
        return static_cast<int>(it - vol.active.begin());
    };
    std::vector<std::array<int, 27>> nbr(vol.active.size());
    for (std::size_t r = 0; r < vol.active.size(); ++r) {
        const int id = vol.active[r];
        const int iz = id % g, iy = (id / g) % g, ix = id / (g * g);
        int k = 0;
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz, ++k) {
                    const int nx = ix + dx, ny = iy + dy, nz = iz + dz;
                    nbr[r][k] = (nx < 0 || ny < 0 || nz < 0 || nx >= g ||
                                 ny >= g || nz >= g)
                                    ? -1
                                    : find_row((nx * g + ny) * g + nz);
                }
    }

    for (std::size_t l = 0; l < params.w.size(); ++l) {
        feats = sparse_conv(feats, params.w[l], params.b[l], nbr);
        if (l + 1 < params.w.size()) feats = d::relu(feats);
    }
    vol.feats = feats;
    return vol;
}

diff::Tensor query_point_volume(const SparseVolume& vol,
                                std::span<const Vector3d> x_norm) {
    const std::size_t p = x_norm.size();
    const std::size_t c = vol.feats.defined() ? vol.feats.shape()[1] : 0;
    if (vol.active.empty())
        return d::Tensor::zeros({p, c});

    const int g = vol.grid;
    auto find_row = [&](int ix, int iy, int iz) -> int {
        if (ix < 0 || iy < 0 || iz < 0 || ix >= g || iy >= g || iz >= g)
            return -1;
        const int id = (ix * g + iy) * g + iz;
        const auto it = std::lower_bound(vol.active.begin(), vol.active.end(), id);
        if (it == vol.active.end() || *it != id) return -1;
        return static_cast<int>(it - vol.active.begin());
    };

    struct Tap {
        int row[8];
        double w[8];
    };
    std::vector<Tap> taps(p);
    for (std::size_t i = 0; i < p; ++i) {
        // Voxel centers live at grid coords (j + 0.5).
        const double gx = (std::clamp(x_norm[i].x(), -1.0, 1.0) + 1.0) * 0.5 * g - 0.5;
        const double gy = (std::clamp(x_norm[i].y(), -1.0, 1.0) + 1.0) * 0.5 * g - 0.5;
        const double gz = (std::clamp(x_norm[i].z(), -1.0, 1.0) + 1.0) * 0.5 * g - 0.5;
        const int x0 = static_cast<int>(std::floor(gx));
        const int y0 = static_cast<int>(std::floor(gy));
        const int z0 = static_cast<int>(std::floor(gz));
        const double fx = gx - x0, fy = gy - y0, fz = gz - z0;
        int t = 0;
        for (int dx = 0; dx <= 1; ++dx)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dz = 0; dz <= 1; ++dz, ++t) {
                    taps[i].row[t] = find_row(x0 + dx, y0 + dy, z0 + dz);
                    taps[i].w[t] = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                                   (dz ? fz : 1.0 - fz);
                }
    }

    std::vector<double> out(p * c, 0.0);
    const auto fv = vol.feats.values();
    for (std::size_t i = 0; i < p; ++i)
        for (int t = 0; t < 8; ++t) {
            const int r = taps[i].row[t];
            if (r < 0) continue;
            const double wt = taps[i].w[t];
            for (std::size_t j = 0; j < c; ++j)
                out[i * c + j] += wt * fv[r * c + j];
        }
    return d::Tensor::make_op(
        {p, c}, std::move(out), {vol.feats},
        [taps = std::move(taps), c](d::Node& self) {
            d::Node& nf = *self.inputs[0];
            if (!nf.requires_grad) return;
            nf.ensure_grad();
            for (std::size_t i = 0; i < taps.size(); ++i)
                for (int t = 0; t < 8; ++t) {
                    const int r = taps[i].row[t];
                    if (r < 0) continue;
                    const double wt = taps[i].w[t];
                    for (std::size_t j = 0; j < c; ++j)
                        nf.grad[r * c + j] += wt * self.grad[i * c + j];
                }
        });
}

std::vector<std::array<double, 2>> pixel_uv_for_points(
    std::span<const Vector3d> x_c, std::span<const int> nearest_vertex,
    const body::BodyState& obs_state, const body::BodyTemplate& tmpl,
    const geom::CameraView& obs_cam) {
    std::vector<std::array<double, 2>> uv(x_c.size());
    for (std::size_t i = 0; i < x_c.size(); ++i) {
        const Vector3d x_o = body::lbs_point(
            x_c[i], tmpl.weight_row(nearest_vertex[i]), obs_state.G);
        const Vector3d xc = obs_cam.R * x_o + obs_cam.t;
        if (xc.z() <= 1e-9) {
            uv[i] = {-1e9, -1e9};
            continue;
        }
        uv[i] = {obs_cam.K(0, 0) * xc.x() / xc.z() + obs_cam.K(0, 2),
                 obs_cam.K(1, 1) * xc.y() / xc.z() + obs_cam.K(1, 2)};
    }
    return uv;
}

PixelQuery query_pixel_aligned(const ImageFeatures& imgf,
                               std::span<const Vector3d> x_c,
                               const body::BodyState& obs_state,
                               const body::BodyTemplate& tmpl,
                               const geom::CameraView& obs_cam,
                               double gate_threshold) {
    PixelQuery q;
    q.gate_distance.resize(x_c.size());
    q.gated.resize(x_c.size());
    std::vector<int> nearest(x_c.size());
    for (std::size_t i = 0; i < x_c.size(); ++i) {
        const auto [v, dist] = body::nearest_vertex(x_c[i], obs_state.verts_c);
        nearest[i] = v;
        q.gate_distance[i] = dist;
        q.gated[i] = dist > gate_threshold;
    }
    auto uv = pixel_uv_for_points(x_c, nearest, obs_state, tmpl, obs_cam);
    for (std::size_t i = 0; i < x_c.size(); ++i) {
        if (uv[i][0] < -1e8) {
            // Behind the input camera: the pixel path fails hard.
            q.gate_distance[i] = std::numeric_limits<double>::infinity();
            q.gated[i] = 1;
        }
    }
    q.feats = d::grid_sample_bilinear(imgf.map2d, uv, true);
    return q;
}

FeatureBank build_feature_bank(const img::Image& image, const img::Image& mask,
                               const geom::CameraView& cam,
                               const body::BodyState& obs_state,
                               const body::BodyTemplate& tmpl,
                               const EncoderParams& enc,
                               const TriplaneParams& tri,
                               const PointVolumeParams& vol,
                               const BankParams& cfg) {
    FeatureBank bank;
    bank.obs_state = obs_state;
    bank.obs_cam = cam;
    bank.norm = make_normalizer(obs_state.verts_c);
    bank.img = encode_image(image, mask, enc, cfg.enc_cfg);
    bank.tri = build_triplane(bank.img.latent, tri, cfg.tri_cfg);
    const std::vector<char> vis = body::visible_vertices(obs_state, cam, tmpl);
    bank.vol = build_point_volume(bank.img, obs_state, tmpl, cam, vis, bank.norm,
                                  vol, cfg.vol_cfg);
    return bank;
}

PointFeatures query_point(const FeatureBank& bank, const body::BodyTemplate& tmpl,
                          const Vector3d& x_c, double gate_threshold) {
    d::NoGradGuard ng;
    PointFeatures pf;
    const std::array<Vector3d, 1> pts = {x_c};
    const std::array<Vector3d, 1> pts_norm = {bank.norm.to_norm(x_c)};

    PixelQuery pq = query_pixel_aligned(bank.img, pts, bank.obs_state, tmpl,
                                        bank.obs_cam, gate_threshold);
    pf.gate_distance = pq.gate_distance[0];
    pf.gated = pq.gated[0];
    auto pxv = pq.feats.values();
    pf.f_pixel.assign(pxv.begin(), pxv.end());

    auto gv = query_triplane(bank.tri, pts_norm).values();
    pf.f_global.assign(gv.begin(), gv.end());
    auto pv = query_point_volume(bank.vol, pts_norm).values();
    pf.f_point.assign(pv.begin(), pv.end());
    return pf;
}

}  // namespace hrf::feat
